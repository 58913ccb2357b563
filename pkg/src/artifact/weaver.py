"""Topology construction: refinement phases of local expanders plus a saturating final phase."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numba as nb
import numpy as np

from . import geometry, simnet
from .errors import DegenerateSize, NotConnected
from .graphs import EmbeddedGraph, PhaseView, is_connected, spectral_gap
from .simnet import INF_SIDE, _draw, _mix, _token_key, stream_key


MODES = ("fast", "walks", "rounds")


@dataclass(frozen=True)
class WeaverConfig:
    r: float = 0.25          # box ratio, 1/r integer >= 4
    a: float = 4.0           # tau = a log2 n, walks have length 2 tau
    c_w: float = 8.0         # walks per node per refinement phase = c_w log2 n
    b: float = 3.0           # partners sampled per phase = b log2 n
    c_f: float = 4.0         # final walks = c_f log2^2 n   (final_rule="log2sq")
    c_fb: float = 1.0        # final walks = c_fb m log2 n  (final_rule="box")
    final_rule: str = "box"
    c_min: float = 4.0       # final-box density constant in the phase-count rule
    c_delta: float = 8.0     # degree ceiling Delta = c_delta log2 n for phases >= 2
    kappa: int | None = None  # tokens per edge-direction per round; None = ceil(log2^2 n)
    mode: str = "fast"       # "fast", "walks" (exact walks, no scheduling) or "rounds"
    seed: int = 0
    walk_len: int | None = None  # override 2 tau (negative control uses 1)

    def __post_init__(self):
        k = geometry.inverse_ratio(self.r)
        if k < 4:
            raise ValueError("1/r must be an integer >= 4")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.final_rule not in ("box", "log2sq"):
            raise ValueError(f"unknown final_rule {self.final_rule!r}")
        for name in ("a", "c_w", "b", "c_f", "c_fb", "c_min", "c_delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.walk_len is not None and self.walk_len < 1:
            raise ValueError("walk_len must be >= 1")
        if self.kappa is not None and self.kappa < 1:
            raise ValueError("kappa must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def log2n(n: int) -> float:
    return math.log2(n)


def num_phases(n: int, r: float, c_min: float) -> int:
    """Largest l >= 1 with r^(2l) n >= c_min log2 n."""
    if n < 2:
        raise DegenerateSize("n must be >= 2")
    k = geometry.inverse_ratio(r)
    need = c_min * math.log2(n)
    if n / k ** 2 < need:
        raise DegenerateSize(f"n={n} too small for even one phase")
    ell = 1
    while n / k ** (2 * (ell + 1)) >= need:
        ell += 1
    return ell


def effective_phases(n: int, cfg: WeaverConfig) -> int:
    try:
        return num_phases(n, cfg.r, cfg.c_min)
    except DegenerateSize:
        return 1


@dataclass
class PhaseParams:
    phase: int
    walks: int
    length: int
    outer_side: float   # confining box side (INF_SIDE = whole graph)
    inner_side: float   # success box side
    delta: int
    kappa: int
    sample: int | None  # partners per node (None = connect to all, final phase)


def phase_params(n: int, i: int, ell: int, cfg: WeaverConfig, d0: int) -> PhaseParams:
    lg = log2n(n)
    tau = max(1, math.ceil(cfg.a * lg))
    length = cfg.walk_len if cfg.walk_len is not None else 2 * tau
    outer = INF_SIDE if i == 1 else cfg.r ** (i - 1)
    delta = d0 if i == 1 else max(1, math.ceil(cfg.c_delta * lg))
    kappa = cfg.kappa if cfg.kappa is not None else simnet.default_kappa(n)
    if i < ell:
        walks = max(1, math.ceil(cfg.c_w * lg))
        sample = max(1, math.ceil(cfg.b * lg))
    else:
        if cfg.final_rule == "log2sq":
            walks = max(1, math.ceil(cfg.c_f * lg * lg))
        else:
            # expected population of the confining box times log2 n
            m = n * (1.0 if i == 1 else cfg.r ** (2 * (i - 1)))
            walks = max(1, math.ceil(cfg.c_fb * m * lg))
        sample = None
    return PhaseParams(i, walks, int(length), outer, cfg.r ** i, int(delta), int(kappa), sample)


@dataclass
class PhaseStats:
    phase: int
    final: bool
    walks_per_node: int
    walk_length: int
    rounds_used: int | None
    successes: np.ndarray = field(repr=False)
    incoming: np.ndarray = field(repr=False)
    accepted: np.ndarray = field(repr=False)
    max_edge_load: int | None = None
    ceiling_violations: int = 0

    @property
    def success_fraction(self) -> float:
        total = self.walks_per_node * self.successes.size
        return float(self.successes.sum()) / total if total else 0.0

    def summary(self) -> dict:
        def q(x):
            x = np.sort(x)
            if x.size == 0:
                return None
            pick = lambda p: int(x[max(1, math.ceil(p * x.size)) - 1])
            return {"min": int(x[0]), "median": pick(0.5), "p99": pick(0.99), "max": int(x[-1])}
        return {
            "phase": self.phase, "final": self.final, "walks_per_node": self.walks_per_node,
            "walk_length": self.walk_length, "rounds_used": self.rounds_used,
            "success_fraction": self.success_fraction, "successes": q(self.successes),
            "incoming": q(self.incoming), "accepted": q(self.accepted),
            "max_edge_load": self.max_edge_load, "ceiling_violations": self.ceiling_violations,
        }


# -- kernels ------------------------------------------------------------

@nb.njit(cache=True)
def _cell_index(xs, ys, h):
    """Bucket nodes into square cells of side h; returns (m, start, order)."""
    m = int(math.ceil(1.0 / h))
    if m < 1:
        m = 1
    n = xs.size
    cell = np.empty(n, dtype=np.int64)
    for v in range(n):
        cx = int(xs[v] / h)
        cy = int(ys[v] / h)
        if cx >= m:
            cx = m - 1
        if cy >= m:
            cy = m - 1
        cell[v] = cy * m + cx
    counts = np.zeros(m * m + 1, dtype=np.int64)
    for v in range(n):
        counts[cell[v] + 1] += 1
    for c in range(m * m):
        counts[c + 1] += counts[c]
    order = np.empty(n, dtype=np.int64)
    fill = counts[:-1].copy()
    for v in range(n):
        order[fill[cell[v]]] = v
        fill[cell[v]] += 1
    return m, counts, order


@nb.njit(cache=True)
def _box_members(u, xs, ys, half, m, start, order, h, buf):
    """Fill buf with ids v (ascending) with linf(u, v) <= half; returns count."""
    x, y = xs[u], ys[u]
    x0 = int((x - half) / h) if x - half > 0 else 0
    x1 = int((x + half) / h)
    y0 = int((y - half) / h) if y - half > 0 else 0
    y1 = int((y + half) / h)
    if x1 >= m:
        x1 = m - 1
    if y1 >= m:
        y1 = m - 1
    c = 0
    for cy in range(y0, y1 + 1):
        for cx in range(x0, x1 + 1):
            cid = cy * m + cx
            for j in range(start[cid], start[cid + 1]):
                v = order[j]
                if abs(xs[v] - x) <= half and abs(ys[v] - y) <= half:
                    buf[c] = v
                    c += 1
    buf[:c].sort()
    return c


@nb.njit(cache=True)
def _fast_endpoints_collect(xs, ys, walks, base, outer_half, inner_half):
    """Fast mode: endpoints uniform over the confining box; keep the successful ones.

    Returns (successes per node, CSR of distinct successful endpoints != u).
    """
    n = xs.size
    unconfined = outer_half >= 1.0
    if unconfined:
        m, start, order = 1, np.zeros(2, dtype=np.int64), np.arange(n)
        h = 1.0
    else:
        h = outer_half
        m, start, order = _cell_index(xs, ys, h)
    buf = np.empty(n, dtype=np.int64)
    stamp = np.full(n, -1, dtype=np.int64)
    succ = np.zeros(n, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    out = np.empty(max(16, n * 4), dtype=np.int64)
    used = 0
    for u in range(n):
        if unconfined:
            cnt = n
        else:
            cnt = _box_members(u, xs, ys, outer_half, m, start, order, h, buf)
        x, y = xs[u], ys[u]
        for wi in range(walks):
            key = _token_key(base, u, wi)
            j = _draw(key, 0, cnt)
            v = j if unconfined else buf[j]
            if abs(xs[v] - x) <= inner_half and abs(ys[v] - y) <= inner_half:
                succ[u] += 1
                if v != u and stamp[v] != u:
                    stamp[v] = u
                    if used == out.size:
                        out2 = np.empty(out.size * 2, dtype=np.int64)
                        out2[:used] = out[:used]
                        out = out2
                    out[used] = v
                    used += 1
        out[ptr[u]:used].sort()
        ptr[u + 1] = used
    return succ, ptr, out[:used].copy()


@nb.njit(cache=True)
def _collect_endpoints(endpoint, walks, xs, ys, inner_half):
    """Round mode: same output as the fast collector, from an endpoint array."""
    n = xs.size
    stamp = np.full(n, -1, dtype=np.int64)
    succ = np.zeros(n, dtype=np.int64)
    ptr = np.zeros(n + 1, dtype=np.int64)
    out = np.empty(max(16, n * 4), dtype=np.int64)
    used = 0
    for u in range(n):
        x, y = xs[u], ys[u]
        for wi in range(walks):
            v = endpoint[u * walks + wi]
            if abs(xs[v] - x) <= inner_half and abs(ys[v] - y) <= inner_half:
                succ[u] += 1
                if v != u and stamp[v] != u:
                    stamp[v] = u
                    if used == out.size:
                        out2 = np.empty(out.size * 2, dtype=np.int64)
                        out2[:used] = out[:used]
                        out = out2
                    out[used] = v
                    used += 1
        out[ptr[u]:used].sort()
        ptr[u + 1] = used
    return succ, ptr, out[:used].copy()


@nb.njit(cache=True)
def _sample_partners(ptr, cand, k, base):
    """Uniform sample without replacement of min(k, |cand_u|) per node (partial shuffle)."""
    n = ptr.size - 1
    optr = np.zeros(n + 1, dtype=np.int64)
    for u in range(n):
        c = ptr[u + 1] - ptr[u]
        optr[u + 1] = optr[u] + (c if c < k else k)
    out = np.empty(optr[n], dtype=np.int64)
    tmp = np.empty(cand.size if cand.size > 0 else 1, dtype=np.int64)
    for u in range(n):
        c = ptr[u + 1] - ptr[u]
        take = optr[u + 1] - optr[u]
        for j in range(c):
            tmp[j] = cand[ptr[u] + j]
        key = _mix(base ^ np.uint64(u))
        for j in range(take):
            r = j + _draw(key, j, c - j)
            t = tmp[j]
            tmp[j] = tmp[r]
            tmp[r] = t
        seg = tmp[:take].copy()
        seg.sort()
        out[optr[u]:optr[u + 1]] = seg
    return optr, out


# -- phases -------------------------------------------------------------

def _walk_outcomes(g: EmbeddedGraph, p: PhaseParams, cfg: WeaverConfig, traces=None):
    n = g.n
    xs = np.ascontiguousarray(g.coords[:, 0])
    ys = np.ascontiguousarray(g.coords[:, 1])
    inner_half = p.inner_side / 2.0
    # an explicit walk length means the walk itself matters: fast mode cannot stand in for it
    mode = "walks" if cfg.mode == "fast" and cfg.walk_len is not None else cfg.mode
    if mode == "fast":
        base = np.uint64(stream_key(cfg.seed, p.phase, "fast"))
        succ, ptr, cand = _fast_endpoints_collect(xs, ys, p.walks, base, p.outer_side / 2.0, inner_half)
        return succ, ptr, cand, None, None, 0
    indptr, indices = g.csr(p.phase - 1)
    if mode == "walks":
        succ, ptr, cand, viol = simnet.walk_collect_uniform(
            indptr, indices, g.coords, p.walks, p.length, p.inner_side,
            side=p.outer_side, delta=p.delta, seed=cfg.seed, phase=p.phase)
        return succ, ptr, cand, None, None, int(viol)
    eng = simnet.RoundEngine(indptr, indices, g.coords, side=p.outer_side, delta=p.delta,
                             kappa=p.kappa, seed=cfg.seed, phase=p.phase, trace=traces is not None)
    eng.inject_uniform(p.walks, p.length)
    rounds, endpoint = eng.run_until_done()
    if traces is not None:
        traces[p.phase] = eng.trace_lines()
    succ, ptr, cand = _collect_endpoints(endpoint, p.walks, xs, ys, inner_half)
    del endpoint
    return succ, ptr, cand, rounds, eng.max_edge_load, eng.ceiling_violations


def _add_phase_edges(g: EmbeddedGraph, ptr, partners, phase: int):
    n = g.n
    u = np.repeat(np.arange(n, dtype=np.int64), np.diff(ptr))
    g.add_edges(u, partners, phase)
    incoming = np.bincount(partners, minlength=n).astype(np.int64)
    accepted = np.diff(ptr).astype(np.int64)
    return incoming, accepted


def run_phase(g: EmbeddedGraph, i: int, cfg: WeaverConfig, ell: int | None = None,
              d0: int | None = None, traces: dict | None = None) -> PhaseStats:
    """Refinement phase i (1 <= i <= l-1); adds phase-i edges to g."""
    if ell is None:
        ell = effective_phases(g.n, cfg)
    if not 1 <= i < ell:
        raise ValueError(f"refinement phase must satisfy 1 <= i < l={ell}")
    if d0 is None:
        d0 = int(g.degree(0).max()) if g.n else 0
    p = phase_params(g.n, i, ell, cfg, d0)
    succ, ptr, cand, rounds, maxload, viol = _walk_outcomes(g, p, cfg, traces)
    base = np.uint64(stream_key(cfg.seed, i, "sample"))
    optr, partners = _sample_partners(ptr, cand, p.sample, base)
    incoming, accepted = _add_phase_edges(g, optr, partners, i)
    return PhaseStats(i, False, p.walks, p.length, rounds, succ, incoming, accepted, maxload, viol)


def run_final_phase(g: EmbeddedGraph, ell: int, cfg: WeaverConfig, d0: int | None = None,
                    traces: dict | None = None) -> PhaseStats:
    """Final phase l: connect each node to every node its walks found inside B_u(r^l)."""
    if d0 is None:
        d0 = int(g.degree(0).max()) if g.n else 0
    p = phase_params(g.n, ell, ell, cfg, d0)
    succ, ptr, cand, rounds, maxload, viol = _walk_outcomes(g, p, cfg, traces)
    incoming, accepted = _add_phase_edges(g, ptr, cand, ell)
    return PhaseStats(ell, True, p.walks, p.length, rounds, succ, incoming, accepted, maxload, viol)


def run_weaver(g0: EmbeddedGraph, cfg: WeaverConfig, traces: dict | None = None):
    """Run phases 1..l-1 and the final phase on a copy of g0; returns (g_star, stats).

    In rounds mode, a dict passed as `traces` receives each phase's round trace.
    """
    g = g0.copy()
    ell = effective_phases(g.n, cfg)
    d0 = int(g.degree(0).max()) if g.n else 0
    stats = []
    for i in range(1, ell):
        stats.append(run_phase(g, i, cfg, ell, d0, traces))
    stats.append(run_final_phase(g, ell, cfg, d0, traces))
    return g, stats


def total_rounds(stats) -> int | None:
    if any(s.rounds_used is None for s in stats):
        return None
    return int(sum(s.rounds_used for s in stats))


# -- checks -------------------------------------------------------------

def box_view(g: EmbeddedGraph, i: int, center: int, r: float) -> PhaseView:
    """G_u(i): phase-i edges inside B_u(r^i); G_u(0) is the whole input graph."""
    if i == 0:
        return PhaseView(g, 0)
    return PhaseView(g, i, int(center), r ** i)


def check_phase_expansion(g_star: EmbeddedGraph, i: int, sample_centers, cfg: WeaverConfig):
    """[(center, gap)] for the box views G_u(i); gap None when the view has < 3 nodes.

    A disconnected view has lazy-walk gap exactly 0 and is reported as 0.0.
    """
    out = []
    cache = {}
    for u in sample_centers:
        u = int(u)
        view = box_view(g_star, i, u, cfg.r)
        key = None if i == 0 else u
        if key in cache:
            out.append((u, cache[key]))
            continue
        if view.n < 3:
            gap = None
        elif not is_connected(view):
            gap = 0.0
        else:
            try:
                gap = spectral_gap(view)
            except NotConnected:
                gap = 0.0
        cache[key] = gap
        out.append((u, gap))
    return out


@dataclass
class Occupancy:
    center: int
    level: int
    count: int
    expected: float
    asserted: bool

    @property
    def ok(self) -> bool:
        return (not self.asserted) or (self.expected / 2 <= self.count <= 2 * self.expected)


def check_box_occupancy(coords, r: float, ell: int, sample_centers, c_min: float = 4.0):
    """Node counts of B_u(r^i), i = 0..l, against n * clipped area."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    thresh = c_min * math.log2(n) / n if n > 1 else 0.0
    out = []
    for u in sample_centers:
        u = int(u)
        c = coords[u]
        for i in range(ell + 1):
            side = r ** i
            cnt = int(np.count_nonzero(geometry.linf(coords, c) <= side / 2.0))
            area = geometry.clipped_area(c, side)
            out.append(Occupancy(u, i, cnt, n * area, area >= thresh))
    return out


def occupancy_in_box(coords, center, side):
    coords = np.asarray(coords, dtype=np.float64)
    return int(np.count_nonzero(geometry.linf(coords, center) <= side / 2.0))


def with_overrides(cfg: WeaverConfig, **kw) -> WeaverConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
