import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.csgraph import shortest_path

from artifact import geometry
from artifact import graphs as Gr
from artifact import protocols as P
from artifact import weaver as W
from artifact.errors import CoverageGap, RoutingStuck, Unreached


@pytest.fixture(scope="module")
def woven():
    g0 = Gr.gen_random_regular(4096, 8, 11)
    g, _ = W.run_weaver(g0, W.WeaverConfig(seed=11))
    return g0, g


def test_route_trivial_and_single_hop():
    g = Gr.from_edge_list(np.array([[0.1, 0.1], [0.4, 0.5], [0.9, 0.9]]), [(0, 1), (1, 2)], 1)
    p = P.greedy_route(g, 1, 1)
    assert p.nodes == [1] and p.cost == 0 and p.hops == 0 and p.stretch is None
    p = P.greedy_route(g, 0, 1)
    assert p.nodes == [0, 1] and p.cost == pytest.approx(0.5) and p.stretch == pytest.approx(1.0)
    assert P.greedy_route(g, 0, 2).nodes == [0, 1, 2]


def test_route_stuck_reports_partial_path():
    # 0 -> 1 is closer to 3, but 1's only other neighbour moves away
    xy = np.array([[0.0, 0.0], [0.5, 0.0], [0.5, 0.9], [1.0, 0.0]])
    g = Gr.from_edge_list(xy, [(0, 1), (1, 2), (2, 3)], 1)
    with pytest.raises(RoutingStuck) as e:
        P.greedy_route(g, 0, 3)
    assert e.value.path == [0, 1]
    lone = Gr.from_edge_list(xy, [], 1)
    with pytest.raises(RoutingStuck):
        P.greedy_route(lone, 0, 3)


@settings(max_examples=40)
@given(st.integers(0, 4095), st.integers(0, 4095))
def test_route_distance_strictly_decreases(woven, s, f):
    _, g = woven
    p = P.greedy_route(g, s, f)
    d = geometry.euclid(g.coords[p.nodes], g.coords[f])
    d = np.atleast_1d(d)
    assert np.all(np.diff(d) < 0)
    assert p.nodes[-1] == f and p.hops == len(p.nodes) - 1
    steps = np.diff(g.coords[p.nodes], axis=0)
    assert p.cost == pytest.approx(np.hypot(steps[:, 0], steps[:, 1]).sum())
    for i, red, req in P.scale_progress(g, p, 0.25, 1):
        assert i == 0 and red > 0 and req == pytest.approx(0.25 / 8)


def test_flood_single_edge_counts_both_directions():
    g = Gr.from_edge_list(np.array([[0.0, 0.0], [0.3, 0.4]]), [(0, 1)], 0)
    st = P.flood_baseline(g, 0)
    assert st.propagation_cost == pytest.approx(1.0)
    assert st.messages == 2
    assert st.completion_time == 1 and st.completion_cost == pytest.approx(0.5)
    assert st.extra["edge_weight_total"] == pytest.approx(0.5)


def test_flood_single_node():
    g = Gr.EmbeddedGraph(np.array([[0.5, 0.5]]))
    for st in (P.flood_baseline(g, 0), P.geometric_flooding(g, 0, ell=1)):
        assert st.complete and st.completion_time == 0 and st.messages == 0
        assert st.propagation_cost == 0.0


def test_flood_unreached():
    g = Gr.from_edge_list(np.random.default_rng(0).random((4, 2)), [(0, 1), (2, 3)], 0)
    with pytest.raises(Unreached) as e:
        P.flood_baseline(g, 0)
    assert e.value.stats.reached == 2
    st = P.flood_baseline(g, 0, strict=False)
    assert not st.complete and st.completion_time is None and st.completion_cost is None


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_flood_bookkeeping(seed):
    g = Gr.gen_random_regular(512, 6, seed)
    st = P.flood_baseline(g, seed)
    m = st.extra["edges"]
    assert st.messages == 2 * m
    assert st.propagation_cost == pytest.approx(2 * st.extra["edge_weight_total"])
    indptr, indices = g.csr(0)
    hops = shortest_path(Gr._sparse(g.n, indptr, indices), unweighted=True, indices=seed)
    assert np.array_equal(st.receive_round, hops.astype(np.int64))
    cost = shortest_path(Gr._sparse(g.n, indptr, indices, g.coords), indices=seed)
    assert np.all(st.receive_cost >= cost - 1e-12)
    assert st.to_dict()["complete"]


def test_geometric_flooding_uses_final_phase_only(woven):
    _, g = woven
    st = P.geometric_flooding(g, 5)
    assert st.extra["phase"] == 1 and st.complete
    u, _, _ = g.edges(1)
    assert st.messages == 2 * u.size


def test_compasscast_phase_one_coverage(woven):
    _, g = woven
    st = P.compasscast(g, 7, phase3_hops=99)
    assert st.complete
    if not st.gaps:
        assert st.extra["level2_squares_covered"] == 256
        assert st.extra["phase1_messages"] == 255
    assert st.extra["representatives"] == st.extra["level2_squares_covered"]
    st2 = P.compasscast(g, 7)
    assert st2.messages >= st.extra["phase1_messages"]
    assert st2.extra["representatives"] == st.extra["representatives"]
    assert st.propagation_cost >= st2.propagation_cost
    assert st2.complete and st2.completion_time <= st.completion_time


def test_compasscast_strict_raises_on_gap():
    # two nodes in far level-2 squares, no phase-1 edge between them
    xy = np.array([[0.01, 0.01], [0.99, 0.99]])
    g = Gr.from_edge_list(xy, [(0, 1)], 1)
    st = P.compasscast(g, 0)
    assert [gp["square"] for gp in st.gaps] == [[2, 0, 1], [2, 1, 0]]
    assert st.extra["level2_squares_covered"] == 1
    with pytest.raises(CoverageGap):
        P.compasscast(g, 0, strict=True)
