import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artifact import metrics as M
from artifact.errors import DegenerateFit, EmptyInput, MixedConfig
from artifact.protocols import RoutePath


def test_nearest_rank_examples():
    v = [5, 1, 4, 2, 3]
    assert M.nearest_rank(v, 0.0) == 1
    assert M.nearest_rank(v, 0.5) == 3
    assert M.nearest_rank(v, 0.2) == 1
    assert M.nearest_rank(v, 0.21) == 2
    assert M.nearest_rank(v, 1.0) == 5
    assert M.nearest_rank(list(range(1, 101)), 0.99) == 99
    with pytest.raises(EmptyInput):
        M.nearest_rank([], 0.5)
    with pytest.raises(ValueError):
        M.nearest_rank([1], 1.5)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(0, 1))
def test_nearest_rank_is_a_sample_value(vals, q):
    x = M.nearest_rank(vals, q)
    assert x in vals
    below = sum(v <= x for v in vals)
    assert below >= q * len(vals) - 1e-9


@given(st.floats(-3, 3), st.floats(0.01, 100))
def test_fit_recovers_exact_power_law(beta, c):
    pts = [(n, c * n ** beta) for n in (64, 256, 1024, 4096)]
    b, cc = M.fit_power_law(pts)
    assert b == pytest.approx(beta, abs=1e-9)
    assert cc == pytest.approx(c, rel=1e-9)


def test_fit_degenerate_inputs():
    with pytest.raises(DegenerateFit):
        M.fit_power_law([(1, 1), (2, 2)])
    with pytest.raises(DegenerateFit):
        M.fit_power_law([(4, 1), (4, 2), (4, 3)])
    with pytest.raises(DegenerateFit):
        M.fit_power_law([(4, 1), (8, 0), (16, 3)])


def test_stretch_stats():
    paths = [RoutePath([0, 1], 2.0, 1, 1.0), RoutePath([0, 2, 3], 3.0, 2, 2.0),
             RoutePath([4], 0.0, 0, 0.0)]
    s = M.stretch_stats(paths)
    assert s["count"] == 2
    assert s["stretch"]["max"] == 2.0 and s["stretch"]["min"] == 1.5
    assert s["hops"]["max"] == 2
    with pytest.raises(EmptyInput):
        M.stretch_stats([RoutePath([4], 0.0, 0, 0.0)])


def _records(seed, cfg=None, k=12):
    rng = random.Random(seed)
    out = []
    for t in range(k):
        n = rng.choice([256, 1024, 4096])
        out.append({"kind": "trial", "n": n, "seed": t, "trial": t, "config": cfg or {"a": 1},
                    "metrics": {"x": rng.random() * n, "ok": rng.random() < 0.5,
                                "nested": {"y": rng.randint(1, 9)}, "maybe": None if t % 3 else 1.0}})
    return out


@given(st.integers(0, 10**6), st.randoms())
def test_summary_independent_of_order(seed, rnd):
    recs = _records(seed)
    a = M.summarize_run(recs).to_json()
    rnd.shuffle(recs)
    assert M.summarize_run(recs).to_json() == a


def test_summary_contents():
    rep = M.summarize_run(_records(1))
    for g in rep.groups.values():
        assert g["metrics"]["nested.y"]["count"] == len(g["sources"])
        m = g["metrics"]["maybe"]
        assert m["count"] + m["missing"] == len(g["sources"])
    assert rep.flat_rows()
    assert all(key.startswith("trial||") for key in rep.scaling)


def test_summary_rejects_mixed_config_and_empty():
    recs = _records(2) + _records(3, cfg={"a": 2}, k=1)
    with pytest.raises(MixedConfig):
        M.summarize_run(recs)
    with pytest.raises(EmptyInput):
        M.summarize_run([])


@given(st.integers(0, 10**6), st.integers(1, 11))
def test_additive_fields_merge(seed, cut):
    recs = _records(seed)
    whole = M.additive_view(M.summarize_run(recs))
    merged = M.merge_reports(M.summarize_run(recs[:cut]), M.summarize_run(recs[cut:]))
    assert set(whole) == set(merged)
    for g in whole:
        for m, e in whole[g].items():
            f = merged[g][m]
            for k in ("count", "missing", "min", "max"):
                assert f[k] == e[k]
            if e["sum"] is None:
                assert f["sum"] is None
            else:
                assert math.isclose(f["sum"], e["sum"], rel_tol=1e-12, abs_tol=1e-12)


def test_merge_rejects_mixed_config():
    with pytest.raises(MixedConfig):
        M.merge_reports(M.summarize_run(_records(1)), M.summarize_run(_records(1, cfg={"b": 1})))
