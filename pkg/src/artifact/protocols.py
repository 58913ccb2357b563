"""Greedy routing, flooding variants and grid-guided broadcast over an embedded graph."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import CoverageGap, RoutingStuck, Unreached
from .graphs import EmbeddedGraph


@dataclass
class RoutePath:
    nodes: list
    cost: float
    hops: int
    direct: float

    @property
    def stretch(self) -> float | None:
        return self.cost / self.direct if self.direct > 0 else None

    def to_dict(self) -> dict:
        return {"src": self.nodes[0], "dst": self.nodes[-1], "hops": self.hops,
                "cost": self.cost, "direct": self.direct, "stretch": self.stretch}


@dataclass
class BroadcastStats:
    source: int
    n: int
    receive_round: np.ndarray = field(repr=False)  # -1 = never reached
    receive_cost: np.ndarray = field(repr=False)   # inf = never reached
    propagation_cost: float = 0.0
    messages: int = 0
    gaps: list = field(default_factory=list)       # CoverageGap records (compasscast)
    extra: dict = field(default_factory=dict)

    @property
    def reached(self) -> int:
        return int(np.count_nonzero(self.receive_round >= 0))

    @property
    def complete(self) -> bool:
        return self.reached == self.n

    @property
    def completion_time(self) -> int | None:
        return int(self.receive_round.max()) if self.complete else None

    @property
    def completion_cost(self) -> float | None:
        return float(self.receive_cost.max()) if self.complete else None

    def to_dict(self) -> dict:
        return {"source": self.source, "n": self.n, "reached": self.reached,
                "complete": self.complete, "propagation_cost": self.propagation_cost,
                "messages": self.messages, "completion_time": self.completion_time,
                "completion_cost": self.completion_cost, "coverage_gaps": len(self.gaps),
                **self.extra}


# -- routing ------------------------------------------------------------

def greedy_route(g_star: EmbeddedGraph, s: int, f: int, max_hops: int | None = None) -> RoutePath:
    """Forward to the neighbour closest to f (ties: smallest id) until f is reached."""
    indptr, indices = g_star.csr(None)
    xy = g_star.coords
    s, f = int(s), int(f)
    direct = geometry.euclid(xy[s], xy[f])
    path, cost, cur = [s], 0.0, s
    cur_d = direct
    limit = max_hops if max_hops is not None else g_star.n
    while cur != f:
        nb = indices[indptr[cur]:indptr[cur + 1]]
        if nb.size == 0:
            raise RoutingStuck(f"node {cur} has no neighbours", path)
        d = geometry.euclid(xy[nb], xy[f])
        d = np.atleast_1d(d)
        j = int(np.argmin(d))  # first minimum = smallest id since lists are sorted
        if not d[j] < cur_d:
            raise RoutingStuck(f"no neighbour of {cur} is closer to {f}", path)
        nxt = int(nb[j])
        cost += geometry.euclid(xy[cur], xy[nxt])
        cur, cur_d = nxt, float(d[j])
        path.append(cur)
        if len(path) - 1 > limit:
            raise RoutingStuck("hop limit exceeded", path)
    return RoutePath(path, cost, len(path) - 1, direct)


def scale_progress(g_star: EmbeddedGraph, path: RoutePath, r: float, ell: int):
    """Per-step (scale i, reduction, required) for steps with f in B_cur(r^i) but not B_cur(r^(i+1)).

    required = r^(i+1)/8; only scales i in 0..ell-1 are reported.
    """
    xy = g_star.coords
    f = path.nodes[-1]
    out = []
    for a, b in zip(path.nodes[:-1], path.nodes[1:]):
        dl = geometry.linf(xy[a], xy[f])
        i = None
        for k in range(ell):
            if dl <= r ** k / 2 and dl > r ** (k + 1) / 2:
                i = k
                break
        if i is None:
            continue
        red = geometry.euclid(xy[a], xy[f]) - geometry.euclid(xy[b], xy[f])
        out.append((i, red, r ** (i + 1) / 8))
    return out


# -- flooding -----------------------------------------------------------

def _edge_w(xy, u, v):
    d = xy[u] - xy[v]
    return np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])


def _flood(indptr, indices, xy, source: int, n: int) -> BroadcastStats:
    """Level-synchronous flooding: each node sends to all neighbours the round after first receipt.

    A node forwards the cheapest copy among those that arrived in its first
    receipt round; receive_cost is the cheapest copy that ever arrived.
    """
    rr = np.full(n, -1, dtype=np.int64)
    rc = np.full(n, np.inf)
    rr[source] = 0
    rc[source] = 0.0
    fwd = np.full(n, np.inf)
    fwd[source] = 0.0
    frontier = np.array([source], dtype=np.int64)
    prop, msgs, t = 0.0, 0, 0
    while frontier.size:
        cnt = indptr[frontier + 1] - indptr[frontier]
        src = np.repeat(frontier, cnt)
        starts = np.repeat(indptr[frontier], cnt)
        off = np.arange(src.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        dst = indices[starts + off]
        w = _edge_w(xy, src, dst)
        c = fwd[src] + w
        prop += float(w.sum())
        msgs += int(src.size)
        np.minimum.at(rc, dst, c)
        new = np.unique(dst[rr[dst] < 0])
        t += 1
        rr[new] = t
        arr = np.full(n, np.inf)
        np.minimum.at(arr, dst, c)
        fwd[new] = arr[new]
        frontier = new
    return BroadcastStats(int(source), n, rr, rc, prop, msgs)


def flood_baseline(g0: EmbeddedGraph, source: int, strict: bool = True) -> BroadcastStats:
    """Classic flooding over phase-0 edges; both directions of an edge are counted when both fire."""
    indptr, indices = g0.csr(0)
    st = _flood(indptr, indices, g0.coords, int(source), g0.n)
    u, v, _ = g0.edges(0)
    st.extra["edge_weight_total"] = float(_edge_w(g0.coords, u, v).sum()) if u.size else 0.0
    st.extra["edges"] = int(u.size)
    if strict and not st.complete:
        raise Unreached(f"flooding reached {st.reached}/{st.n}", st)
    return st


def geometric_flooding(g_star: EmbeddedGraph, source: int, ell: int | None = None,
                       strict: bool = True) -> BroadcastStats:
    """Flooding restricted to the final-phase edges."""
    ell = g_star.max_phase() if ell is None else ell
    indptr, indices = g_star.csr(ell)
    st = _flood(indptr, indices, g_star.coords, int(source), g_star.n)
    st.extra["phase"] = ell
    if strict and not st.complete:
        raise Unreached(f"geometric flooding reached {st.reached}/{st.n}", st)
    return st


# -- grid-guided broadcast ----------------------------------------------

_DIR_RULES = {
    "NWE": (("N", "NWE"), ("W", "W"), ("E", "E")),
    "SWE": (("S", "SWE"), ("W", "W"), ("E", "E")),
    "W": (("W", "W"),),
    "E": (("E", "E"),),
}


class _Sender:
    """Bookkeeping for explicit point-to-point sends in the first two broadcast phases."""

    def __init__(self, n, xy):
        self.xy = xy
        self.rr = np.full(n, -1, dtype=np.int64)
        self.rc = np.full(n, np.inf)
        self.prop = 0.0
        self.msgs = 0
        self.t = {}   # node -> round it holds the message for forwarding
        self.c = {}   # node -> cost of the copy it forwards

    def hold(self, v, t, c):
        if self.rr[v] < 0:
            self.rr[v] = t
        self.rc[v] = min(self.rc[v], c)

    def send(self, u, v):
        w = geometry.euclid(self.xy[u], self.xy[v])
        self.prop += w
        self.msgs += 1
        t, c = self.t[u] + 1, self.c[u] + w
        self.hold(v, t, c)
        return t, c


def _pick_in_square(nb, ix, iy, tx, ty):
    hit = nb[(ix[nb] == tx) & (iy[nb] == ty)]
    return int(hit[0]) if hit.size else None


def compasscast(g_star: EmbeddedGraph, source: int, r: float = 0.25, ell: int | None = None,
                strict: bool = False, phase3_hops: int = 2) -> BroadcastStats:
    """Three-phase broadcast.

    1. Over phase-1 edges, reach one node per level-2 grid square: the column
       of the source square is walked N and S, and every square in it starts
       W and E runs along its row.
    2. Stages 1..ell-2: a holder in level-(i+1) square y sends, over phase-(i+1)
       edges, to one neighbour in every child square of y (the holder itself
       covers its own child square).
    3. Representatives flood the final-phase edges for `phase3_hops` hops.

    Eligible targets are picked by smallest id. Missing targets are recorded
    as CoverageGap in stats.gaps (raised immediately when strict).
    """
    geometry.inverse_ratio(r)
    n, xy = g_star.n, g_star.coords
    ell = g_star.max_phase() if ell is None else ell
    source = int(source)
    s = _Sender(n, xy)
    s.hold(source, 0, 0.0)
    s.t[source], s.c[source] = 0, 0.0
    gaps = []

    def gap(square, stage, node):
        e = CoverageGap(square, stage, node)
        if strict:
            raise e
        gaps.append({"square": [square.level, square.ix, square.iy], "stage": stage, "node": node})

    # phase one
    ix2, iy2 = geometry.square_indices(xy, 2, r)
    ip1, in1 = g_star.csr(1)
    reps = {}
    src_sq = geometry.GridSquare(2, int(ix2[source]), int(iy2[source]))
    reps[(src_sq.ix, src_sq.iy)] = source
    queue = []
    for d, tag in (("N", "NWE"), ("S", "SWE"), ("W", "W"), ("E", "E")):
        queue.append((source, d, tag))
    head = 0
    while head < len(queue):
        u, d, tag = queue[head]
        head += 1
        sq = geometry.GridSquare(2, int(ix2[u]), int(iy2[u]))
        tgt = geometry.adjacent_square(sq, d, r)
        if tgt is None:
            continue
        v = _pick_in_square(in1[ip1[u]:ip1[u + 1]], ix2, iy2, tgt.ix, tgt.iy)
        if v is None:
            gap(tgt, 0, u)
            continue
        t, c = s.send(u, v)
        if (tgt.ix, tgt.iy) in reps:  # cannot happen under the rules; kept as an audit
            s.t.setdefault(v, t)
            s.c.setdefault(v, c)
            continue
        reps[(tgt.ix, tgt.iy)] = v
        s.t[v], s.c[v] = t, c
        for nd, ntag in _DIR_RULES[tag]:
            queue.append((v, nd, ntag))
    level_reps = {(2, k[0], k[1]): v for k, v in reps.items()}
    phase1_messages = s.msgs

    # phase two
    level = 2
    for stage in range(1, ell - 1):
        ph = stage + 1
        ip, ind = g_star.csr(ph)
        ixn, iyn = geometry.square_indices(xy, level + 1, r)
        nxt = {}
        for (lv, sx, sy), u in sorted(level_reps.items(), key=lambda kv: (kv[0], kv[1])):
            nb = ind[ip[u]:ip[u + 1]]
            for ch in geometry.children(geometry.GridSquare(lv, sx, sy), r):
                if ixn[u] == ch.ix and iyn[u] == ch.iy:
                    nxt[(ch.level, ch.ix, ch.iy)] = u
                    continue
                v = _pick_in_square(nb, ixn, iyn, ch.ix, ch.iy)
                if v is None:
                    gap(ch, stage, u)
                    continue
                t, c = s.send(u, v)
                if v not in s.t:
                    s.t[v], s.c[v] = t, c
                nxt[(ch.level, ch.ix, ch.iy)] = v
        level_reps = nxt
        level += 1

    # phase three: bounded-hop flooding over final-phase edges
    ipl, inl = g_star.csr(ell)
    rep_nodes = np.array(sorted(set(level_reps.values())), dtype=np.int64)
    rr, rc = s.rr, s.rc
    prop, msgs = s.prop, s.msgs
    senders = rep_nodes
    send_t = np.array([s.t[v] for v in rep_nodes.tolist()], dtype=np.int64)
    send_c = np.array([s.c[v] for v in rep_nodes.tolist()], dtype=np.float64)
    done = np.zeros(n, dtype=bool)
    done[rep_nodes] = True
    for _hop in range(phase3_hops):
        if senders.size == 0:
            break
        cnt = ipl[senders + 1] - ipl[senders]
        src_i = np.repeat(np.arange(senders.size), cnt)
        starts = np.repeat(ipl[senders], cnt)
        off = np.arange(src_i.size) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        dst = inl[starts + off]
        w = _edge_w(xy, senders[src_i], dst)
        at = send_t[src_i] + 1
        ac = send_c[src_i] + w
        prop += float(w.sum())
        msgs += int(dst.size)
        np.minimum.at(rc, dst, ac)
        # first arrival round per receiver, then the cheapest copy arriving in that round
        first = np.full(n, np.iinfo(np.int64).max)
        np.minimum.at(first, dst, at)
        newly = rr[dst] < 0
        rr_upd = np.unique(dst[newly])
        rr[rr_upd] = first[rr_upd]
        on_time = at == first[dst]
        best = np.full(n, np.inf)
        np.minimum.at(best, dst[on_time], ac[on_time])
        nxt = np.unique(dst[~done[dst]])
        done[nxt] = True
        senders = nxt
        send_t = first[nxt]
        send_c = best[nxt]
    st = BroadcastStats(source, n, rr, rc, prop, msgs, gaps)
    st.extra.update({"phase": ell, "representatives": int(rep_nodes.size),
                     "level2_squares_covered": len(reps), "phase1_messages": phase1_messages})
    return st
