"""Acceptance suite: every criterion at its stated tolerance.

The sweep (20 seeds at n = 1024, 4096, 16384, default config, fast mode) is
computed once per session. Round-accurate runs are costly and use fewer seeds
(3 at 1024, 1 at 4096). Criteria known not to hold at these sizes are strict
xfails; their analysis lives in the decisions ledger.
"""
import itertools
import math
import os

import numpy as np
import pytest

from artifact import experiments as E
from artifact import graphs as Gr
from artifact import weaver as W
from artifact.cli import main as cli_main
from artifact.simnet import RoundEngine, WalkToken

from conftest import ACCEPTANCE_LINES
from oracles import MEAN_PAIR_DISTANCE

SIZES = (1024, 4096, 16384)
SEEDS = 20
ROUND_SEEDS = {1024: 3, 4096: 1}
MASTER = 0


def report(key, checks, expect_fail=False):
    checks = list(checks)
    ok = all(c.passed for c in checks)
    tag = "PASS" if ok else ("XFAIL" if expect_fail else "FAIL")
    detail = " | ".join(c.line() for c in checks)
    ACCEPTANCE_LINES[key] = f"[{tag}] criterion {key}: {detail}"
    print(ACCEPTANCE_LINES[key])
    return ok


@pytest.fixture(scope="session")
def sweep():
    recs = [E.run_trial(E.TrialSpec(n, MASTER, t)) for n in SIZES for t in range(SEEDS)]
    return E.by_n(recs)


def _weaver_groups(cfg, n, seeds):
    out = []
    for t in range(seeds):
        spec = E.TrialSpec(n, MASTER, t, cfg=cfg)
        g0, g_star, stats, c = E.build(spec)
        out.append(E.measure_weaver(g0, g_star, stats, c, W.effective_phases(n, c)))
    return {n: out}


# -- baselines ----------------------------------------------------------

def _baseline_checks(sweep):
    return {c.name: c for c in E.check_baselines(sweep, oracle=E.mean_pair_distance())}


def test_01_baseline_stretch_growth(sweep):
    c = _baseline_checks(sweep)["baseline max-stretch exponent"]
    assert report("1", [c])


@pytest.mark.xfail(strict=True, reason="echo-counted flooding cost is twice the expected ratio; see ledger")
def test_02_baseline_flooding_cost(sweep):
    oracle = E.mean_pair_distance()
    # the Monte-Carlo oracle agrees with the closed form
    assert abs(oracle - MEAN_PAIR_DISTANCE) < 1e-3
    c = _baseline_checks(sweep)["flooding cost / (d n / 2) vs mean pair distance"]
    assert report("2", [c], expect_fail=True)


def test_03_mst_scaling(sweep):
    assert report("3", [_baseline_checks(sweep)["MST weight exponent"]])


# -- construction -------------------------------------------------------

@pytest.fixture(scope="session")
def round_groups():
    groups = {}
    for n, k in ROUND_SEEDS.items():
        cfg = W.WeaverConfig(mode="rounds")
        for t in range(k):
            g0, g_star, stats, c = E.build(E.TrialSpec(n, MASTER, t, cfg=cfg))
            L = math.log2(n)
            rounds = W.total_rounds(stats)
            loads = [s.max_edge_load for s in stats]
            kappa = W.phase_params(n, 1, 1, c, 8).kappa
            groups.setdefault(n, []).append({"rounds_C": rounds / L ** 3, "rounds": rounds,
                                             "loads_ok": max(loads) <= kappa})
    return groups


def test_04_round_complexity(round_groups):
    checks = E.check_rounds(round_groups)
    checks.append(E.Check("per-edge load never exceeds kappa",
                          all(m["loads_ok"] for ms in round_groups.values() for m in ms), True, True))
    assert report("4", checks)


def test_05_degree_bound(sweep):
    assert report("5", E.check_degree(sweep))


def test_06_rgg_containment(sweep):
    assert report("6", E.check_rgg(sweep))


@pytest.mark.xfail(strict=True, reason="sparse phase-1 views at the default walk count; see ledger")
def test_07_expansion_defaults(sweep):
    assert report("7", E.check_expansion(sweep), expect_fail=True)


@pytest.fixture(scope="session")
def dense_walk_cfg():
    return W.WeaverConfig(c_w=64)


def test_07b_expansion_dense_walks_control(dense_walk_cfg):
    groups = _weaver_groups(dense_walk_cfg, 16384, SEEDS)
    checks = E.check_expansion(groups, "box views, c_w=64")
    checks += E.check_incoming(groups)
    assert report("7b", checks)


def test_07c_expansion_sabotage_fails(dense_walk_cfg):
    # walks of length 1 never leave the neighbourhood: the suite must reject them
    groups = _weaver_groups(W.with_overrides(dense_walk_cfg, walk_len=1), 16384, 3)
    checks = E.check_expansion(groups, "box views, c_w=64, walk length 1")
    failed = not all(c.passed for c in checks)
    ACCEPTANCE_LINES["7c"] = (f"[{'PASS' if failed else 'FAIL'}] criterion 7c (sabotage must fail): "
                              + " | ".join(c.line() for c in checks))
    print(ACCEPTANCE_LINES["7c"])
    assert failed


def test_08_success_fraction(sweep):
    floor = E.check_success_floor(sweep)[0]
    info = E.Check(floor.name + " (reported)", True, floor.measured, floor.threshold, "informational")
    assert report("8", E.check_success(sweep) + [info])


def test_09_incoming_degree(sweep):
    assert report("9", E.check_incoming(sweep))


def test_10_box_occupancy(sweep):
    assert report("10", E.check_occupancy(sweep))


# -- protocols ----------------------------------------------------------

def test_11_greedy_routing(sweep):
    assert report("11", E.check_routing(sweep))


def test_12_geometric_flooding(sweep):
    checks = E.check_geo(sweep)
    assert len(checks) == 2
    assert report("12", checks)


@pytest.mark.xfail(strict=True, reason="empty level-2 squares and two-hop phase three; see ledger")
def test_13_compasscast(sweep):
    assert report("13", E.check_compasscast(sweep), expect_fail=True)


# -- small-instance oracles --------------------------------------------

def _cheeger():
    graphs_checked, worst = 0, math.inf
    for seed in range(100):
        for n in range(2, E.THRESHOLDS["cheeger_n_max"] + 1):
            g = Gr.gen_gnp(n, 0.5, seed * 100 + n)
            if not Gr.is_connected(g):
                continue
            phi = Gr.conductance_exact(g)
            gap = Gr.spectral_gap(g)
            slack = min(gap - phi ** 2 / 2, 2 * phi - gap)
            worst = min(worst, slack)
            graphs_checked += 1
    return graphs_checked, worst


def _path_enumeration():
    rng = np.random.default_rng(14)
    worst = 0.0
    count = 0
    for _ in range(100):
        n = int(rng.integers(2, 9))
        g = Gr.gen_gnp(n, 0.5, int(rng.integers(1 << 30)))
        if not Gr.is_connected(g):
            continue
        es = g.edge_set()
        for u, v in itertools.combinations(range(n), 2):
            best = math.inf
            rest = [x for x in range(n) if x not in (u, v)]
            for k in range(len(rest) + 1):
                for mid in itertools.permutations(rest, k):
                    p = (u, *mid, v)
                    if all((min(a, b), max(a, b)) in es for a, b in zip(p, p[1:])):
                        best = min(best, sum(g.weight(a, b) for a, b in zip(p, p[1:])))
            c, _, _ = Gr.shortest_path(g, u, v)
            worst = max(worst, abs(c - best))
            count += 1
    return count, worst


def _walk_tv():
    rng = np.random.default_rng(3)
    n = 30
    coords = rng.random((n, 2))
    coords[0] = [0.5, 0.5]
    g = Gr.from_edge_list(coords, list(Gr.gen_gnp(n, 0.35, 3).edge_set()), 0)
    side = 2 * np.sort(np.abs(coords - coords[0]).max(1))[11] + 1e-9
    inbox = np.abs(coords - coords[0]).max(1) <= side / 2
    delta = int(g.degree().max())
    indptr, indices = g.csr()
    P = np.zeros((n, n))
    for v in range(n):
        nb = [w for w in indices[indptr[v]:indptr[v + 1]] if inbox[w]]
        P[v, nb] = 1.0 / (delta + 1)
        P[v, v] = 1.0 - len(nb) / (delta + 1)
    length, T = 12, 50_000
    exact = np.linalg.matrix_power(P, length)[0]
    eng = RoundEngine(indptr, indices, coords, side=side, delta=delta, kappa=8, seed=14)
    eng.inject([WalkToken(0, 1, length, i) for i in range(T)])
    _, ends = eng.run_until_done()
    emp = np.bincount(ends, minlength=n) / T
    return int(inbox.sum()), 0.5 * float(np.abs(emp - exact).sum())


def test_14_small_instance_oracles():
    k, slack = _cheeger()
    m, err = _path_enumeration()
    box, tv = _walk_tv()
    checks = [
        E.Check(f"phi^2/2 <= gap <= 2 phi on {k} connected graphs (n <= 8)", k > 0 and slack >= -1e-9, slack, ">= -1e-9"),
        E.Check(f"Dijkstra vs path enumeration ({m} pairs)", m > 0 and err <= 1e-12, err, 1e-12),
        E.Check(f"endpoint TV vs exact P^t on a {box}-node box", box == 12 and tv < E.THRESHOLDS["tv_max"],
                tv, E.THRESHOLDS["tv_max"]),
    ]
    assert report("14", checks)


# -- determinism --------------------------------------------------------

def test_15_cli_determinism(tmp_path):
    steps = [["generate", "--n", "1024", "--trials", "2", "--seed", "15"], ["weave"],
             ["route", "--pairs", "200"], ["broadcast", "--sources", "2"]]
    snaps = []
    for run in ("a", "b"):
        out = tmp_path / run
        for s in steps:
            assert cli_main(s + ["--out", str(out)], {}) == 0
        snaps.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    same = snaps[0].keys() == snaps[1].keys() and all(snaps[0][k] == snaps[1][k] for k in snaps[0])
    assert report("15", [E.Check(f"byte-identical reruns ({len(snaps[0])} files)", same, same, True)])
