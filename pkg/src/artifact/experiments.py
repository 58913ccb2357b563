"""Per-trial measurement pipeline and the threshold checks built on it.

A trial is (n, master seed, trial index): one input expander, one woven
g_star and every measurement the checks need, flattened into a record that
metrics.summarize_run can aggregate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry, graphs, metrics, protocols, weaver
from .errors import DegenerateFit, DegenerateSize, EmptyInput, RoutingStuck, Unreached
from .rng import generator, trial_seed

# Every numeric threshold used by `verify` and the acceptance suite.
THRESHOLDS = {
    "stretch_beta_min": 0.35,
    "flood_rel_tol": 0.05,
    "mst_beta": (0.45, 0.55),
    "rounds_C": 10.0,
    "degree_C": 5.0,
    "run_fraction": 19 / 20,
    "gap_min": 0.05,
    "success_target": 1 / 16,
    "success_tol": 0.02,
    "incoming_C": 6.0,
    "route_pairs": 1000,
    "route_hops_slack": 10,
    "route_stretch_p99": 10.0,
    "progress_fraction": 0.99,
    "geo_time_beta": (0.4, 0.6),
    "bounded_beta_max": 0.1,     # normalised cost counts as bounded if it does not grow faster than n^0.1
    "cc_cost_slack": 0.20,
    "cc_time_C": 8.0,            # completion_time <= C * ell + C'
    "cc_time_C0": 40.0,
    "cheeger_n_max": 8,
    "tv_max": 0.05,
    "expansion_centers": 6,
    "occupancy_centers": 20,
    "stretch_samples": 200,
}


def norm_cost(n: int) -> float:
    return math.sqrt(n * math.log2(n) ** 3)


@dataclass
class TrialSpec:
    n: int
    master: int
    trial: int
    d: int = 8
    cfg: weaver.WeaverConfig = field(default_factory=weaver.WeaverConfig)

    @property
    def seed(self) -> int:
        return trial_seed(self.master, self.n, self.trial)


def build(spec: TrialSpec):
    seed = spec.seed
    g0 = graphs.gen_random_regular(spec.n, spec.d, seed)
    cfg = replace(spec.cfg, seed=seed)
    g_star, stats = weaver.run_weaver(g0, cfg)
    return g0, g_star, stats, cfg


def _centers(n, seed, k, tag):
    rng = generator("centers", tag, seed)
    return np.sort(rng.choice(n, size=min(k, n), replace=False))


def measure_weaver(g0, g_star, stats, cfg, ell, expansion=True) -> dict:
    n = g0.n
    L = math.log2(n)
    out = {"ell": ell, "max_degree": int(g_star.degree().max()),
           "degree_C": float(g_star.degree().max()) / L ** 2,
           "rounds": weaver.total_rounds(stats)}
    if out["rounds"] is not None:
        out["rounds_C"] = out["rounds"] / L ** 3
    rho = cfg.r ** ell / 2
    want = graphs.rgg_edges(g_star.coords, rho)
    have = g_star.edge_set(ell)
    out["rgg_pairs"] = len(want)
    out["rgg_missing"] = sum(1 for e in want if (int(e[0]), int(e[1])) not in have)
    for s in stats:
        key = f"phase{s.phase}"
        out[f"{key}.success_fraction"] = s.success_fraction
        out[f"{key}.final"] = s.final
        if not s.final:
            out[f"{key}.incoming_C"] = float(s.incoming.max()) / L
            out[f"{key}.min_successes"] = int(s.successes.min())
            out[f"{key}.success_floor"] = (cfg.r ** 2 / 2) * math.ceil(cfg.c_w * L)
            out[f"{key}.accepted_ok"] = bool(np.all(s.accepted <= np.minimum(s.successes, math.ceil(cfg.b * L))))
    # edge locality
    ok = True
    for i in range(1, ell + 1):
        u, v, _ = g_star.edges(i)
        if u.size and np.any(geometry.linf(g_star.coords[u], g_star.coords[v]) > cfg.r ** i / 2):
            ok = False
    out["edge_locality"] = ok
    occ = weaver.check_box_occupancy(g0.coords, cfg.r, ell,
                                     _centers(n, cfg.seed, THRESHOLDS["occupancy_centers"], "occ"), cfg.c_min)
    out["occupancy_ok"] = all(o.ok for o in occ)
    out["occupancy_asserted"] = sum(o.asserted for o in occ)
    if expansion:
        gaps = []
        for i in range(0, ell):
            res = weaver.check_phase_expansion(g_star, i, _centers(n, cfg.seed, THRESHOLDS["expansion_centers"], f"exp{i}"), cfg)
            vals = [g for _, g in res if g is not None]
            out[f"gap{i}.min"] = min(vals) if vals else None
            gaps.extend(vals)
        out["gap_min"] = min(gaps) if gaps else None
    return out


def measure_routing(g_star, cfg, ell, seed, pairs: int) -> dict:
    n = g_star.n
    rng = generator("pairs", "route", seed)
    src = rng.integers(n, size=pairs)
    dst = rng.integers(n, size=pairs)
    stuck, hops, stretch, prog_ok, prog_all = 0, [], [], 0, 0
    for a, b in zip(src.tolist(), dst.tolist()):
        try:
            p = protocols.greedy_route(g_star, a, b)
        except RoutingStuck:
            stuck += 1
            continue
        hops.append(p.hops)
        if p.direct >= cfg.r ** ell:
            stretch.append(p.stretch)
        for _, red, need in protocols.scale_progress(g_star, p, cfg.r, ell):
            prog_all += 1
            prog_ok += red >= need
    return {"stuck": stuck, "max_hops": max(hops) if hops else None,
            "stretch_p99": metrics.nearest_rank(stretch, 0.99) if stretch else None,
            "stretch_max": max(stretch) if stretch else None,
            "progress_fraction": prog_ok / prog_all if prog_all else None}


def measure_broadcast(g_star, cfg, ell, seed) -> dict:
    n = g_star.n
    s = int(generator("source", seed).integers(n))
    nc = norm_cost(n)
    out = {}
    gf = protocols.geometric_flooding(g_star, s, ell, strict=False)
    out.update({"geo.complete": gf.complete, "geo.prop_norm": gf.propagation_cost / nc,
                "geo.completion_time": gf.completion_time, "geo.completion_cost": gf.completion_cost})
    cc = protocols.compasscast(g_star, s, cfg.r, ell)
    out.update({"cc.complete": cc.complete, "cc.reached": cc.reached, "cc.gaps": len(cc.gaps),
                "cc.prop_norm": cc.propagation_cost / nc, "cc.completion_time": cc.completion_time,
                "cc.completion_cost": cc.completion_cost})
    return out


def measure_baselines(g0, seed) -> dict:
    n = g0.n
    s = int(generator("source", "flood", seed).integers(n))
    fb = protocols.flood_baseline(g0, s, strict=False)
    m = g0.num_edges
    bs = graphs.baseline_stretch(g0, THRESHOLDS["stretch_samples"], seed)
    return {"flood.complete": fb.complete, "flood.ratio": fb.propagation_cost / m if m else None,
            "flood.once_ratio": fb.extra["edge_weight_total"] / m if m else None,
            "flood.completion_time": fb.completion_time,
            "stretch_max": bs["max"], "mst": graphs.mst_weight(g0.coords)}


def run_trial(spec: TrialSpec, parts=("weaver", "routing", "broadcast", "baselines"),
              pairs: int | None = None) -> dict:
    g0, g_star, stats, cfg = build(spec)
    try:
        ell = weaver.num_phases(spec.n, cfg.r, cfg.c_min)
        degenerate = False
    except DegenerateSize:
        ell, degenerate = 1, True
    m = {"degenerate": degenerate}
    if "weaver" in parts:
        m.update(measure_weaver(g0, g_star, stats, cfg, ell))
    if "routing" in parts:
        m.update({f"route.{k}": v for k, v in
                  measure_routing(g_star, cfg, ell, cfg.seed, pairs or THRESHOLDS["route_pairs"]).items()})
    if "broadcast" in parts:
        m.update(measure_broadcast(g_star, cfg, ell, cfg.seed))
    if "baselines" in parts:
        m.update(measure_baselines(g0, cfg.seed))
    return {"kind": "trial", "n": spec.n, "seed": cfg.seed, "trial": spec.trial,
            "config": {**replace(spec.cfg, seed=spec.master).to_dict(), "d": spec.d},
            "metrics": m}


# -- checks -------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    measured: object
    threshold: object
    note: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        s = f"{tag}  {self.name}: measured={_fmt(self.measured)} threshold={_fmt(self.threshold)}"
        return s + (f"  ({self.note})" if self.note else "")


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.4g}"
    if isinstance(x, (list, tuple)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    if isinstance(x, dict):
        return "{" + ", ".join(f"{k}: {_fmt(v)}" for k, v in x.items()) + "}"
    return str(x)


def by_n(records):
    out = {}
    for r in sorted(records, key=lambda r: (r["n"], r["trial"])):
        out.setdefault(r["n"], []).append(r["metrics"])
    return out


def _frac(ms, pred):
    vals = [bool(pred(m)) for m in ms]
    return sum(vals) / len(vals) if vals else 0.0


def _bounded(points) -> tuple[bool, float | None]:
    try:
        beta = metrics.fit_scaling(points)
    except DegenerateFit:
        return True, None
    return beta <= THRESHOLDS["bounded_beta_max"], beta


def check_occupancy(groups):
    fr = {n: _frac(ms, lambda m: m["occupancy_ok"]) for n, ms in groups.items()}
    return [Check("box occupancy within [1/2, 2] x n*area", all(v >= THRESHOLDS["run_fraction"] for v in fr.values()),
                  fr, f">= {THRESHOLDS['run_fraction']:.2f} of runs")]


def check_degree(groups):
    worst = {n: max(m["degree_C"] for m in ms) for n, ms in groups.items()}
    return [Check("max degree / log2^2 n", all(v <= THRESHOLDS["degree_C"] for v in worst.values()),
                  worst, THRESHOLDS["degree_C"])]


def check_rgg(groups):
    fr = {n: _frac(ms, lambda m: m["rgg_missing"] == 0) for n, ms in groups.items()}
    return [Check("final phase contains RGG(r^l/2)", all(v >= THRESHOLDS["run_fraction"] for v in fr.values()),
                  fr, f">= {THRESHOLDS['run_fraction']:.2f} of runs"),
            Check("edge locality", all(m["edge_locality"] for ms in groups.values() for m in ms), True, True)]


def check_expansion(groups, label="sampled box views"):
    fr = {n: _frac(ms, lambda m: m.get("gap_min") is not None and m["gap_min"] >= THRESHOLDS["gap_min"])
          for n, ms in groups.items()}
    worst = {n: min((m["gap_min"] for m in ms if m.get("gap_min") is not None), default=None)
             for n, ms in groups.items()}
    return [Check(f"spectral gap >= {THRESHOLDS['gap_min']} on {label}",
                  all(v >= THRESHOLDS["run_fraction"] for v in fr.values()), {"runs": fr, "min": worst},
                  f">= {THRESHOLDS['run_fraction']:.2f} of runs")]


def _phase_keys(ms, suffix):
    return sorted({k for m in ms for k in m if k.startswith("phase") and k.endswith(suffix)})


def check_success(groups):
    res = {}
    ok = True
    t, tol = THRESHOLDS["success_target"], THRESHOLDS["success_tol"]
    for n, ms in groups.items():
        for k in _phase_keys(ms, ".success_fraction"):
            v = float(np.mean([m[k] for m in ms if k in m]))
            res[f"{n}:{k.split('.')[0]}"] = v
            ok &= abs(v - t) <= tol
    return [Check("aggregate walk success fraction", ok, res, f"{t:.4f} +- {tol}")]


def check_success_floor(groups):
    res, ok = {}, True
    for n, ms in groups.items():
        for k in _phase_keys(ms, ".min_successes"):
            p = k.split(".")[0]
            worst = min(m[k] / m[f"{p}.success_floor"] for m in ms if k in m)
            res[f"{n}:{p}"] = worst
            ok &= worst >= 1.0
    return [Check("min successes / ((r^2/2) c_w log2 n)", ok, res if res else "no refinement phase", ">= 1")]


def check_incoming(groups):
    res, ok = {}, True
    for n, ms in groups.items():
        for k in _phase_keys(ms, ".incoming_C"):
            v = max(m[k] for m in ms if k in m)
            res[f"{n}:{k.split('.')[0]}"] = v
            ok &= v <= THRESHOLDS["incoming_C"]
    return [Check("refinement-phase max incoming / log2 n", ok, res if res else "no refinement phase",
                  THRESHOLDS["incoming_C"])]


def check_rounds(groups):
    cs = {n: max(m["rounds_C"] for m in ms if m.get("rounds_C") is not None)
          for n, ms in groups.items() if any(m.get("rounds_C") is not None for m in ms)}
    c = max(cs.values()) if cs else None
    return [Check("total rounds / log2^3 n (single C)", c is not None and c <= THRESHOLDS["rounds_C"], cs,
                  THRESHOLDS["rounds_C"])]


def check_routing(groups):
    ell = {n: ms[0]["ell"] for n, ms in groups.items()}
    stuck = sum(m["route.stuck"] for ms in groups.values() for m in ms)
    hops = {n: max(m["route.max_hops"] for m in ms) for n, ms in groups.items()}
    hop_ok = all(hops[n] <= 3 * ell[n] + THRESHOLDS["route_hops_slack"] for n in hops)
    p99 = {n: max((m["route.stretch_p99"] for m in ms if m["route.stretch_p99"] is not None), default=None)
           for n, ms in groups.items()}
    p99_ok = all(v is None or v <= THRESHOLDS["route_stretch_p99"] for v in p99.values())
    prog = {n: min((m["route.progress_fraction"] for m in ms if m["route.progress_fraction"] is not None),
                   default=None) for n, ms in groups.items()}
    return [Check("greedy routes never stuck", stuck == 0, stuck, 0),
            Check("greedy max hops <= 3l + 10", hop_ok, {"hops": hops, "ell": ell}, "3l+10"),
            Check("greedy p99 stretch (euclid >= r^l)", p99_ok, p99, THRESHOLDS["route_stretch_p99"]),
            Check("greedy per-scale progress >= r^(i+1)/8 (reported)", True, prog,
                  THRESHOLDS["progress_fraction"], "informational")]


def check_geo(groups):
    ns = sorted(groups)
    pts = [(n, m["geo.prop_norm"]) for n in ns for m in groups[n]]
    bounded, beta = _bounded(pts)
    C = max(v for _, v in pts)
    out = [Check("geometric flooding cost / sqrt(n log2^3 n) bounded", bounded,
                 {"C": C, "beta": beta}, f"beta <= {THRESHOLDS['bounded_beta_max']}")]
    tp = [(n, m["geo.completion_time"]) for n in ns for m in groups[n] if m["geo.completion_time"]]
    if len({n for n, _ in tp}) >= 3:
        b = metrics.fit_scaling(tp)
        lo, hi = THRESHOLDS["geo_time_beta"]
        out.append(Check("geometric flooding completion-time exponent", lo <= b <= hi, b, [lo, hi]))
    return out


def check_compasscast(groups):
    ns = sorted(groups)
    fr = {n: _frac(groups[n], lambda m: m["cc.complete"]) for n in ns}
    out = [Check("CompassCast full coverage", all(v >= THRESHOLDS["run_fraction"] for v in fr.values()), fr,
                 f">= {THRESHOLDS['run_fraction']:.2f} of runs")]
    cost = {}
    for n in ns:
        vals = [m["cc.completion_cost"] for m in groups[n] if m["cc.completion_cost"] is not None]
        cost[n] = float(np.mean(vals)) if vals else None
    seq = [cost[n] for n in ns]
    mono = all(v is not None for v in seq) and all(
        b <= a * (1 + THRESHOLDS["cc_cost_slack"]) for a, b in zip(seq, seq[1:]))
    out.append(Check("CompassCast completion cost non-increasing (20% slack)", mono, cost, "non-increasing"))
    tm = {n: max((m["cc.completion_time"] for m in groups[n] if m["cc.completion_time"] is not None), default=None)
          for n in ns}
    ell = {n: groups[n][0]["ell"] for n in ns}
    t_ok = all(tm[n] is not None and tm[n] <= THRESHOLDS["cc_time_C"] * ell[n] + THRESHOLDS["cc_time_C0"] for n in ns)
    out.append(Check("CompassCast completion time <= C l + C'", t_ok, tm,
                     f"{THRESHOLDS['cc_time_C']} l + {THRESHOLDS['cc_time_C0']}"))
    pts = [(n, m["cc.prop_norm"]) for n in ns for m in groups[n] if m["cc.complete"]]
    bounded, beta = _bounded(pts) if pts else (False, None)
    out.append(Check("CompassCast cost / sqrt(n log2^3 n) bounded", bounded and len({n for n, _ in pts}) == len(ns),
                     {"C": max((v for _, v in pts), default=None), "beta": beta},
                     f"beta <= {THRESHOLDS['bounded_beta_max']} over complete runs at every size"))
    return out


def mean_pair_distance(samples: int = 2_000_000, seed: int = 0) -> float:
    """Monte-Carlo E||U - V|| for independent uniform points in the unit square."""
    rng = generator("oracle", "pair-distance", seed)
    a = rng.random((samples, 2))
    b = rng.random((samples, 2))
    return float(np.mean(geometry.euclid(a, b)))


def check_baselines(groups, oracle=None):
    ns = sorted(groups)
    out = []
    if oracle is None:
        oracle = mean_pair_distance()
    ratio = {n: float(np.mean([m["flood.ratio"] for m in groups[n]])) for n in ns}
    once = {n: float(np.mean([m["flood.once_ratio"] for m in groups[n]])) for n in ns}
    tol = THRESHOLDS["flood_rel_tol"]
    out.append(Check("flooding cost / (d n / 2) vs mean pair distance",
                     all(abs(v - oracle) <= tol * oracle for v in ratio.values()), ratio,
                     f"{oracle:.4f} +- {tol:.0%}", f"each edge once: {_fmt(once)}"))
    if len(ns) >= 3:
        st = [(n, m["stretch_max"]) for n in ns for m in groups[n]]
        b = metrics.fit_scaling(st)
        out.append(Check("baseline max-stretch exponent", b >= THRESHOLDS["stretch_beta_min"], b,
                         f">= {THRESHOLDS['stretch_beta_min']}"))
        mb = metrics.fit_scaling([(n, m["mst"]) for n in ns for m in groups[n]])
        lo, hi = THRESHOLDS["mst_beta"]
        out.append(Check("MST weight exponent", lo <= mb <= hi, mb, [lo, hi]))
    return out


SUITES = {
    "occupancy": ("weaver", [check_occupancy]),
    "expansion": ("weaver", [check_expansion]),
    "degree": ("weaver", [check_degree, check_incoming, check_success, check_success_floor]),
    "rgg-containment": ("weaver", [check_rgg]),
    "routing": ("routing", [check_routing]),
    "broadcast": ("broadcast", [check_geo, check_compasscast]),
    "baselines": ("baselines", [check_baselines]),
}


def degenerate_filter(suite, fn, groups):
    """Checks whose premise needs a non-degenerate size are skipped when every size is degenerate."""
    if all(m["degenerate"] for ms in groups.values() for m in ms):
        if fn in (check_compasscast, check_success, check_geo):
            return False
    return True
