"""Synchronous round engine for lazy random-walk tokens with per-edge capacity.

Randomness is counter based: the decision a token takes at a given step is a
pure function of (stream key, origin, walk_index, steps_left). A token blocked
by the edge cap retries the same move next round, so trajectories (and hence
endpoints) do not depend on scheduling; only round counts do.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from .rng import PURPOSE, derive_seed

INF_SIDE = 4.0  # any side >= 2 covers the whole unit square



@nb.njit(cache=True, inline="always")
def _mix(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def _token_key(base, origin, widx):
    return _mix(base ^ _mix(np.uint64(origin) * np.uint64(0x100000001B3) + np.uint64(widx)))


@nb.njit(cache=True, inline="always")
def _draw(key, counter, m):
    """Uniform integer in [0, m) for m < 2**32."""
    x = _mix(key + np.uint64(counter) * np.uint64(0xD1B54A32D192ED03))
    return np.int64(((x >> np.uint64(32)) * np.uint64(m)) >> np.uint64(32))


@nb.njit(cache=True)
def _scan_choice(v, key, steps_left, indptr, indices, xs, ys, ox, oy, half, delta1):
    """Lazy step when deg(v) > Delta+1 (ceiling violated): explicit in-box scan.

    Returns the neighbour offset or -1 for hold.
    """
    start = indptr[v]
    deg = indptr[v + 1] - start
    c = 0
    for j in range(deg):
        w = indices[start + j]
        if abs(xs[w] - ox) <= half and abs(ys[w] - oy) <= half:
            c += 1
    m = delta1 if delta1 > c else c
    k = _draw(key, steps_left, m)
    if k < c:
        c2 = 0
        for j in range(deg):
            w = indices[start + j]
            if abs(xs[w] - ox) <= half and abs(ys[w] - oy) <= half:
                if c2 == k:
                    return j
                c2 += 1
    return -1


# The lazy rule is written out inline in both kernels below: numba does not
# optimise a helper returning through branches nearly as well (5x slower).
# Rule: draw k in [0, Delta+1); move to neighbour k if k < deg(v) and that
# neighbour lies in the origin's box, otherwise hold. Each in-box neighbour is
# thus chosen with probability 1/(Delta+1).


@nb.njit(cache=True)
def _walk_only(starts, origins, widx, length, base, indptr, indices, xs, ys, half, delta1):
    """Endpoints of walks simulated without scheduling (reference path)."""
    t = starts.size
    out = np.empty(t, dtype=np.int32)
    for i in range(t):
        o = origins[i]
        key = _token_key(base, o, widx[i])
        v = starts[i]
        ox, oy = xs[o], ys[o]
        s = length[i]
        while s > 0:
            st = indptr[v]
            deg = indptr[v + 1] - st
            if deg <= delta1:
                k = _draw(key, s, delta1)
                if k < deg:
                    w = indices[st + k]
                    if abs(xs[w] - ox) <= half and abs(ys[w] - oy) <= half:
                        v = w
            else:
                k = _scan_choice(v, key, s, indptr, indices, xs, ys, ox, oy, half, delta1)
                if k >= 0:
                    v = indices[st + k]
            s -= 1
        out[i] = v
    return out


@nb.njit(cache=True)
def _walk_collect_uniform(walks, length, base, indptr, indices, xs, ys, half, delta1, inner_half):
    """Scheduling-free walks for the compact layout, fused with success collection.

    Walk w of node u is token (u, w), as in inject_uniform. Returns
    (successes per node, CSR of distinct successful endpoints != u, violations).
    """
    n = xs.size
    stamp = np.full(n, -1, dtype=np.int64)
    succ = np.zeros(n, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    out = np.empty(max(16, n * 4), dtype=np.int64)
    used = 0
    viol = 0
    for o in range(n):
        ox, oy = xs[o], ys[o]
        for wi in range(walks):
            key = _token_key(base, o, wi)
            v = o
            s = length
            while s > 0:
                st = indptr[v]
                deg = indptr[v + 1] - st
                if deg <= delta1:
                    k = _draw(key, s, delta1)
                    if k < deg:
                        w = indices[st + k]
                        if abs(xs[w] - ox) <= half and abs(ys[w] - oy) <= half:
                            v = w
                else:
                    viol += 1
                    k = _scan_choice(v, key, s, indptr, indices, xs, ys, ox, oy, half, delta1)
                    if k >= 0:
                        v = indices[st + k]
                s -= 1
            if abs(xs[v] - ox) <= inner_half and abs(ys[v] - oy) <= inner_half:
                succ[o] += 1
                if v != o and stamp[v] != o:
                    stamp[v] = o
                    if used == out.size:
                        out2 = np.empty(out.size * 2, dtype=np.int64)
                        out2[:used] = out[:used]
                        out = out2
                    out[used] = v
                    used += 1
        out[ptr[o]:used].sort()
        ptr[o + 1] = used
    return succ, ptr, out[:used].copy(), viol


@nb.njit(cache=True)
def _init_queues(pos0, steps, n, slack):
    """Per-node FIFO ring buffers carved out of one pool, filled in token-id order."""
    t = steps.size
    endpoint = np.full(t, -1, dtype=np.int32)
    cnt = np.zeros(n, dtype=np.int64)
    live = 0
    for i in range(t):
        if steps[i] == 0:
            endpoint[i] = pos0[i]
        else:
            cnt[pos0[i]] += 1
            live += 1
    cap = np.empty(n, dtype=np.int64)
    off = np.empty(n, dtype=np.int64)
    total = 0
    for v in range(n):
        c = cnt[v] + cnt[v] // 4 + slack
        cap[v] = c
        off[v] = total
        total += c
    pool_id = np.empty(total, dtype=np.int32)
    pool_st = np.empty(total, dtype=np.uint16)
    hd = np.zeros(n, dtype=np.int64)
    fill = np.zeros(n, dtype=np.int64)
    for i in range(t):
        if steps[i] != 0:
            v = pos0[i]
            pool_id[off[v] + fill[v]] = i
            pool_st[off[v] + fill[v]] = steps[i]
            fill[v] += 1
    return endpoint, pool_id, pool_st, off, cap, hd, cnt, live


@nb.njit(cache=True)
def _grow(pool_id, pool_st, off, cap, hd, cnt, need):
    """Rebuild the pool so every node has at least `need` free slots."""
    n = off.size
    newcap = cap.copy()
    for u in range(n):
        free = cap[u] - cnt[u]
        if free < need or free < cap[u] // 8:
            c = 2 * cap[u]
            if c < cnt[u] + 2 * need:
                c = cnt[u] + 2 * need
            newcap[u] = c
    newoff = np.empty(n, dtype=np.int64)
    total = 0
    for u in range(n):
        newoff[u] = total
        total += newcap[u]
    nid = np.empty(total, dtype=np.int32)
    nst = np.empty(total, dtype=np.uint16)
    for u in range(n):
        for j in range(cnt[u]):
            p = hd[u] + j
            if p >= cap[u]:
                p -= cap[u]
            nid[newoff[u] + j] = pool_id[off[u] + p]
            nst[newoff[u] + j] = pool_st[off[u] + p]
        hd[u] = 0
    return nid, nst, newoff, newcap


# meta slots
_LIVE, _ROUNDS, _VCUR, _RMAX, _MAXALL, _VIOL, _INROUND = 0, 1, 2, 3, 4, 5, 6


@nb.njit(cache=True)
def _run_rounds(endpoint, pool_id, pool_st, off, cap, hd, cnt, meta, avail, load, touched,
                uniform_w, origins, widx, base, indptr, indices, xs, ys, half, delta1, kappa,
                budget, max_rounds, trace_live, trace_load):
    """Run synchronous rounds until done, max_rounds, or a queue may overflow.

    Each node serves at most `budget` tokens from the head of its FIFO per
    round (only tokens present when the round began). A token either holds
    (step consumed, back of its own queue), moves over an edge with spare
    capacity (step consumed, back of the receiver's queue) or is blocked by the
    cap (no step consumed, back of its own queue). Token ids follow
    (origin, walk_index) order; with uniform_w > 0 the origin and index are
    derived from the id.

    Returns -1 when finished (or out of rounds), else the free-slot count the
    caller must guarantee before resuming; progress is kept in `meta`.
    """
    n = indptr.size - 1
    cap_tr = trace_live.size
    live = meta[_LIVE]
    rounds = meta[_ROUNDS]
    violations = meta[_VIOL]
    while True:
        if meta[_INROUND] == 0:
            if live == 0 or rounds >= max_rounds:
                break
            for v in range(n):
                avail[v] = cnt[v] if cnt[v] < budget else budget
            meta[_VCUR] = 0
            meta[_RMAX] = 0
            meta[_INROUND] = 1
        round_max = meta[_RMAX]
        v = meta[_VCUR]
        while v < n:
            a = avail[v]
            if a > 0:
                # a node can push at most min(a, kappa) tokens over any one edge
                need = a if a < kappa else kappa
                st = indptr[v]
                for j in range(st, indptr[v + 1]):
                    w = indices[j]
                    if cap[w] - cnt[w] < need:
                        meta[_LIVE] = live
                        meta[_ROUNDS] = rounds
                        meta[_VIOL] = violations
                        meta[_VCUR] = v
                        meta[_RMAX] = round_max
                        return need
            ntouched = 0
            for _ in range(a):
                slot = off[v] + hd[v]
                i = pool_id[slot]
                s = np.int64(pool_st[slot])
                hd[v] += 1
                if hd[v] == cap[v]:
                    hd[v] = 0
                cnt[v] -= 1
                if uniform_w > 0:
                    o = i // uniform_w
                    wi = i - o * uniform_w
                else:
                    o = origins[i]
                    wi = widx[i]
                key = _token_key(base, o, wi)
                st = indptr[v]
                deg = indptr[v + 1] - st
                ox = xs[o]
                oy = ys[o]
                k = -1
                if deg <= delta1:
                    kk = _draw(key, s, delta1)
                    if kk < deg:
                        w = indices[st + kk]
                        if abs(xs[w] - ox) <= half and abs(ys[w] - oy) <= half:
                            k = kk
                else:
                    violations += 1
                    k = _scan_choice(v, key, s, indptr, indices, xs, ys, ox, oy, half, delta1)
                dest = v
                if k == -1:
                    s -= 1
                else:
                    e = st + k
                    if load[e] < kappa:
                        if load[e] == 0:
                            touched[ntouched] = e
                            ntouched += 1
                        load[e] += 1
                        if load[e] > round_max:
                            round_max = load[e]
                        s -= 1
                        dest = indices[e]
                if s == 0:
                    endpoint[i] = dest
                    live -= 1
                    continue
                p = hd[dest] + cnt[dest]
                if p >= cap[dest]:
                    p -= cap[dest]
                pool_id[off[dest] + p] = i
                pool_st[off[dest] + p] = s
                cnt[dest] += 1
            for j in range(ntouched):
                load[touched[j]] = 0
            v += 1
        if rounds < cap_tr:
            trace_live[rounds] = live
            trace_load[rounds] = round_max
        if round_max > meta[_MAXALL]:
            meta[_MAXALL] = round_max
        rounds += 1
        meta[_INROUND] = 0
    meta[_LIVE] = live
    meta[_ROUNDS] = rounds
    meta[_VIOL] = violations
    return -1


@dataclass(frozen=True)
class WalkToken:
    origin: int
    phase: int
    steps_left: int
    walk_index: int


def stream_key(seed: int, phase: int, purpose: str) -> int:
    return derive_seed(seed, phase, PURPOSE[purpose])


class RoundEngine:
    """Synchronous engine over a fixed adjacency (typically one phase view).

    side: side length of the confining box around each token's origin
    (INF_SIDE = unconfined). delta: degree ceiling used by the lazy rule.
    """

    def __init__(self, indptr, indices, coords, *, side=INF_SIDE, delta: int, kappa: int,
                 seed: int = 0, phase: int = 1, budget: int | None = None, trace: bool = False):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        coords = np.asarray(coords, dtype=np.float64)
        self.xs = np.ascontiguousarray(coords[:, 0])
        self.ys = np.ascontiguousarray(coords[:, 1])
        self.n = self.indptr.size - 1
        self.side = float(side)
        self.delta = int(delta)
        self.kappa = int(kappa)
        self.budget = int(budget) if budget is not None else self.kappa * (self.delta + 1)
        self.phase = phase
        self.base = np.uint64(stream_key(seed, phase, "walk"))
        self.trace_enabled = trace
        self.round = 0
        self.trace_cap = 1 << 20
        self.max_edge_load = 0
        self.ceiling_violations = 0
        self._state = None
        self.regrowths = 0
        self._reset_tokens()

    def _reset_tokens(self):
        self._pos = np.zeros(0, dtype=np.int32)
        self._steps = np.zeros(0, dtype=np.uint16)
        self._origin = np.zeros(0, dtype=np.int32)
        self._widx = np.zeros(0, dtype=np.int32)
        self._uniform_w = 0
        self._tokens = []

    # -- injection ------------------------------------------------------
    def inject(self, tokens):
        """Queue WalkTokens at their origins (order fixed by (origin, walk_index))."""
        toks = sorted(tokens, key=lambda t: (t.origin, t.walk_index))
        if self._uniform_w:
            raise RuntimeError("cannot mix inject() with inject_uniform()")
        if self._state is not None:
            raise RuntimeError("inject() must precede the first round")
        keys = {(t.origin, t.walk_index) for t in toks} | {(t.origin, t.walk_index) for t in self._tokens}
        if len(keys) != len(toks) + len(self._tokens):
            raise ValueError("duplicate (origin, walk_index)")
        self._tokens = sorted(self._tokens + toks, key=lambda t: (t.origin, t.walk_index))
        self._pos = np.array([t.origin for t in self._tokens], dtype=np.int32)
        self._origin = self._pos.copy()
        self._widx = np.array([t.walk_index for t in self._tokens], dtype=np.int32)
        self._steps = np.array([t.steps_left for t in self._tokens], dtype=np.uint16)

    def inject_uniform(self, walks_per_node: int, length: int):
        """walks_per_node tokens of the given length at every node (compact layout)."""
        if self._tokens or self._steps.size or self._state is not None:
            raise RuntimeError("engine already holds tokens")
        if length >= 2**16:
            raise ValueError("walk length too large")
        w = int(walks_per_node)
        self._uniform_w = w
        self._pos = np.repeat(np.arange(self.n, dtype=np.int32), w)
        self._steps = np.full(self.n * w, length, dtype=np.uint16)

    # -- running --------------------------------------------------------
    def _ensure_state(self):
        if self._state is None:
            self._state = list(_init_queues(self._pos, self._steps, self.n, 2 * self.kappa + 64))
            # the pool now owns the token state
            self._pos = np.zeros(0, dtype=np.int32)
            self._steps = np.zeros(0, dtype=np.uint16)
            cap = self.trace_cap if self.trace_enabled else 1
            self._trace_live = np.zeros(cap, dtype=np.int64)
            self._trace_load = np.zeros(cap, dtype=np.int64)
            self._meta = np.zeros(8, dtype=np.int64)
            self._meta[_LIVE] = self._state[7]
            self._avail = np.zeros(self.n, dtype=np.int64)
            self._load = np.zeros(self.indices.size, dtype=np.int64)
            self._touched = np.zeros(max(1, self.indices.size), dtype=np.int64)

    def _advance(self, max_rounds):
        """Run until done or until `max_rounds` more rounds have completed."""
        self._ensure_state()
        endpoint, pool_id, pool_st, off, cap, hd, cnt, _ = self._state
        limit = int(self._meta[_ROUNDS]) + int(min(max_rounds, 2**62))
        while True:
            need = _run_rounds(endpoint, pool_id, pool_st, off, cap, hd, cnt, self._meta,
                               self._avail, self._load, self._touched, self._uniform_w,
                               self._origin, self._widx, self.base, self.indptr, self.indices,
                               self.xs, self.ys, self.side / 2.0, self.delta + 1, self.kappa,
                               self.budget, limit, self._trace_live, self._trace_load)
            if need < 0:
                break
            pool_id, pool_st, off, cap = _grow(pool_id, pool_st, off, cap, hd, cnt, need)
            self.regrowths += 1
        self._state = [endpoint, pool_id, pool_st, off, cap, hd, cnt, int(self._meta[_LIVE])]
        before = self.round
        self.round = int(self._meta[_ROUNDS])
        self.max_edge_load = int(self._meta[_MAXALL])
        self.ceiling_violations = int(self._meta[_VIOL])
        return self.round - before

    @property
    def live(self) -> int:
        if self._state is None:
            return int(np.count_nonzero(self._steps))
        return int(self._state[7])

    def step_round(self) -> int:
        """Advance one synchronous round; returns the number of live tokens."""
        self._advance(1)
        return self.live

    def run_until_done(self, max_rounds: int = 10**9):
        """Run to completion. Returns (rounds_used, endpoints in token order)."""
        start = self.round
        self._advance(max_rounds)
        return self.round - start, self._state[0]

    @property
    def trace(self):
        k = min(self.round, self._trace_live.size) if self._state is not None and self.trace_enabled else 0
        return [(i + 1, int(self._trace_live[i]), int(self._trace_load[i])) for i in range(k)]

    def endpoint_map(self, endpoints):
        if self._uniform_w:
            w = self._uniform_w
            return {(i // w, i % w): int(e) for i, e in enumerate(endpoints.tolist())}
        return {(t.origin, t.walk_index): int(e) for t, e in zip(self._tokens, endpoints.tolist())}

    def trace_lines(self) -> str:
        return "".join(f"{r} {lv} {ld}\n" for r, lv, ld in self.trace)


def walk_endpoints(indptr, indices, coords, starts, origins, walk_index, length, *,
                   side=INF_SIDE, delta: int, seed: int = 0, phase: int = 1):
    """Scheduling-free simulation of the same lazy walks (same stream keys)."""
    coords = np.asarray(coords, dtype=np.float64)
    length = np.broadcast_to(np.asarray(length, dtype=np.int64), np.shape(starts)).copy()
    return _walk_only(np.ascontiguousarray(starts, dtype=np.int64),
                      np.ascontiguousarray(origins, dtype=np.int64),
                      np.ascontiguousarray(walk_index, dtype=np.int64), length,
                      np.uint64(stream_key(seed, phase, "walk")),
                      np.ascontiguousarray(indptr, dtype=np.int64),
                      np.ascontiguousarray(indices, dtype=np.int64),
                      np.ascontiguousarray(coords[:, 0]), np.ascontiguousarray(coords[:, 1]),
                      float(side) / 2.0, int(delta) + 1)


def walk_collect_uniform(indptr, indices, coords, walks: int, length: int, inner_side: float, *,
                         side=INF_SIDE, delta: int, seed: int = 0, phase: int = 1):
    """Endpoints of inject_uniform(walks, length) tokens without scheduling, reduced to successes."""
    coords = np.asarray(coords, dtype=np.float64)
    return _walk_collect_uniform(int(walks), int(length), np.uint64(stream_key(seed, phase, "walk")),
                                 np.ascontiguousarray(indptr, dtype=np.int64),
                                 np.ascontiguousarray(indices, dtype=np.int64),
                                 np.ascontiguousarray(coords[:, 0]), np.ascontiguousarray(coords[:, 1]),
                                 float(side) / 2.0, int(delta) + 1, float(inner_side) / 2.0)


def default_kappa(n: int) -> int:
    return int(math.ceil(math.log2(n) ** 2))
