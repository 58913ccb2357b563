"""Embedded graphs with phase-tagged edges, generators and expansion/path measures."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.spatial import Delaunay, QhullError, cKDTree

from . import geometry
from .errors import (GraphFormatError, InfeasibleDegree, NotConnected,
                     TooLarge, Unreachable)
from .metrics import nearest_rank
from .rng import generator


class EmbeddedGraph:
    """Coordinates in the unit square plus an undirected edge set with tag masks.

    Edges are stored once per unordered pair as (u < v, mask); bit i of the
    mask means the edge belongs to phase i. Weights are always recomputed from
    the coordinates.
    """

    def __init__(self, coords, d: int = 0, seed: int = 0):
        coords = np.ascontiguousarray(coords, dtype=np.float64).reshape(-1, 2)
        if coords.size and (coords.min() < 0.0 or coords.max() > 1.0):
            raise ValueError("coordinates must lie in [0,1]^2")
        self.coords = coords
        self.n = coords.shape[0]
        self.d = int(d)
        self.seed = int(seed)
        self._keys = np.zeros(0, dtype=np.int64)
        self._mask = np.zeros(0, dtype=np.int64)
        self._cache = {}

    # -- mutation -------------------------------------------------------
    def add_edges(self, u, v, phase: int):
        """Add undirected edges tagged with `phase`; existing pairs accumulate the tag."""
        u = np.asarray(u, dtype=np.int64).ravel()
        v = np.asarray(v, dtype=np.int64).ravel()
        if u.shape != v.shape:
            raise ValueError("u and v must have equal length")
        if not 0 <= phase < 62:
            raise ValueError("phase out of range")
        if u.size == 0:
            return
        if np.any(u == v):
            raise ValueError("self-loops are not allowed")
        if u.min() < 0 or v.min() < 0 or max(u.max(), v.max()) >= self.n:
            raise ValueError("node id out of range")
        lo = np.minimum(u, v)
        hi = np.maximum(u, v)
        keys = np.concatenate([self._keys, lo * self.n + hi])
        masks = np.concatenate([self._mask, np.full(lo.size, 1 << phase, dtype=np.int64)])
        uk, inv = np.unique(keys, return_inverse=True)
        um = np.zeros(uk.size, dtype=np.int64)
        np.bitwise_or.at(um, inv, masks)
        self._keys, self._mask = uk, um
        self._cache.clear()

    def copy(self) -> "EmbeddedGraph":
        g = EmbeddedGraph(self.coords.copy(), self.d, self.seed)
        g._keys = self._keys.copy()
        g._mask = self._mask.copy()
        return g

    # -- queries --------------------------------------------------------
    @property
    def num_edges(self) -> int:
        return int(self._keys.size)

    def edges(self, phase=None):
        """(u, v, mask) arrays with u < v; restricted to edges containing `phase` if given."""
        u = self._keys // self.n if self.n else self._keys
        v = self._keys % self.n if self.n else self._keys
        m = self._mask
        if phase is not None:
            sel = (m >> phase) & 1 == 1
            u, v, m = u[sel], v[sel], m[sel]
        return u, v, m

    def phases(self):
        allm = int(np.bitwise_or.reduce(self._mask)) if self._mask.size else 0
        return [i for i in range(62) if (allm >> i) & 1]

    def max_phase(self) -> int:
        ph = self.phases()
        return ph[-1] if ph else 0

    def tags(self, u: int, v: int) -> int:
        lo, hi = min(u, v), max(u, v)
        k = lo * self.n + hi
        i = np.searchsorted(self._keys, k)
        if i < self._keys.size and self._keys[i] == k:
            return int(self._mask[i])
        return 0

    def csr(self, phase=None):
        """Symmetric adjacency (indptr, indices) with sorted neighbour lists."""
        key = ("csr", phase)
        if key not in self._cache:
            u, v, _ = self.edges(phase)
            self._cache[key] = _build_csr(self.n, u, v)
        return self._cache[key]

    def neighbors(self, u: int, phase=None) -> np.ndarray:
        indptr, indices = self.csr(phase)
        return indices[indptr[u]:indptr[u + 1]]

    def degree(self, phase=None) -> np.ndarray:
        indptr, _ = self.csr(phase)
        return np.diff(indptr)

    def edge_set(self, phase=None) -> set:
        u, v, _ = self.edges(phase)
        return set(zip(u.tolist(), v.tolist()))

    def weight(self, u, v):
        return geometry.euclid(self.coords[u], self.coords[v])

    def view(self, phase=None, center=None, side=None) -> "PhaseView":
        return PhaseView(self, phase, center, side)

    # -- serialization --------------------------------------------------
    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"{self.n} {self.d} {self.seed}\n")
        for i, (x, y) in enumerate(self.coords.tolist()):
            out.write(f"node {i} {x!r} {y!r}\n")
        u, v, m = self.edges()
        for a, b, c in zip(u.tolist(), v.tolist(), m.tolist()):
            out.write(f"edge {a} {b} {c}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "EmbeddedGraph":
        lines = text.splitlines()
        if not lines:
            raise GraphFormatError("empty graph file")
        try:
            n, d, seed = (int(t) for t in lines[0].split())
        except ValueError as exc:
            raise GraphFormatError(f"bad header: {lines[0]!r}") from exc
        coords = np.empty((n, 2), dtype=np.float64)
        seen = np.zeros(n, dtype=bool)
        eu, ev, em = [], [], []
        for ln in lines[1:]:
            parts = ln.split()
            if not parts:
                continue
            try:
                if parts[0] == "node" and len(parts) == 4:
                    i = int(parts[1])
                    coords[i] = (float(parts[2]), float(parts[3]))
                    seen[i] = True
                elif parts[0] == "edge" and len(parts) == 4:
                    eu.append(int(parts[1]))
                    ev.append(int(parts[2]))
                    em.append(int(parts[3]))
                else:
                    raise GraphFormatError(f"bad line: {ln!r}")
            except (ValueError, IndexError) as exc:
                raise GraphFormatError(f"bad line: {ln!r}") from exc
        if not seen.all():
            raise GraphFormatError("missing node lines")
        g = cls(coords, d, seed)
        if eu:
            u = np.asarray(eu, dtype=np.int64)
            v = np.asarray(ev, dtype=np.int64)
            m = np.asarray(em, dtype=np.int64)
            if np.any(u == v) or u.min() < 0 or max(u.max(), v.max()) >= n or m.min() <= 0:
                raise GraphFormatError("invalid edge record")
            lo, hi = np.minimum(u, v), np.maximum(u, v)
            keys = lo * n + hi
            order = np.argsort(keys, kind="stable")
            keys, m = keys[order], m[order]
            if np.any(np.diff(keys) == 0):
                raise GraphFormatError("duplicate edge record")
            g._keys, g._mask = keys, m
        return g

    def save(self, path):
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "EmbeddedGraph":
        with open(path, encoding="ascii") as fh:
            return cls.from_text(fh.read())

    def __eq__(self, other):
        if not isinstance(other, EmbeddedGraph):
            return NotImplemented
        return (self.n == other.n and self.d == other.d and self.seed == other.seed
                and np.array_equal(self.coords, other.coords)
                and np.array_equal(self._keys, other._keys)
                and np.array_equal(self._mask, other._mask))

    __hash__ = None

    def __repr__(self):
        return f"EmbeddedGraph(n={self.n}, edges={self.num_edges}, phases={self.phases()})"


def _build_csr(n, u, v):
    if u.size == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    src = np.concatenate([u, v])
    dst = np.concatenate([v, u])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    return indptr, dst.astype(np.int64)


@dataclass
class PhaseView:
    """Edges of one phase (None = all phases), optionally restricted to a box.

    A box-restricted view keeps only nodes inside the box and the edges with
    both endpoints inside; nodes are relabelled 0..k-1 in increasing global id.
    """
    base: EmbeddedGraph
    phase: int | None = None
    center: object = None
    side: float | None = None
    nodes: np.ndarray = field(init=False, repr=False)
    indptr: np.ndarray = field(init=False, repr=False)
    indices: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.base
        if self.center is None:
            self.nodes = np.arange(g.n)
            self.indptr, self.indices = g.csr(self.phase)
            return
        c = g.coords[self.center] if np.ndim(self.center) == 0 else np.asarray(self.center, float)
        inside = geometry.linf(g.coords, c) <= self.side / 2.0
        self.nodes = np.flatnonzero(inside)
        u, v, _ = g.edges(self.phase)
        keep = inside[u] & inside[v]
        local = np.full(g.n, -1, dtype=np.int64)
        local[self.nodes] = np.arange(self.nodes.size)
        self.indptr, self.indices = _build_csr(self.nodes.size, local[u[keep]], local[v[keep]])

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def coords(self) -> np.ndarray:
        return self.base.coords[self.nodes]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def csr(self, phase=None):
        return self.indptr, self.indices


def _adjacency(g):
    """(n, indptr, indices, coords) for a graph or view."""
    if isinstance(g, EmbeddedGraph):
        indptr, indices = g.csr(None)
        return g.n, indptr, indices, g.coords
    if isinstance(g, PhaseView):
        return g.n, g.indptr, g.indices, g.coords
    raise TypeError(f"expected EmbeddedGraph or PhaseView, got {type(g)!r}")


def _sparse(n, indptr, indices, coords=None):
    if coords is None:
        data = np.ones(indices.size)
    else:
        src = np.repeat(np.arange(n), np.diff(indptr))
        data = geometry.euclid(coords[src], coords[indices]) if indices.size else np.zeros(0)
        data = np.atleast_1d(data)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def from_edge_list(coords, edges, phase: int = 0, d: int = 0, seed: int = 0) -> EmbeddedGraph:
    g = EmbeddedGraph(coords, d, seed)
    if len(edges):
        e = np.asarray(edges, dtype=np.int64)
        g.add_edges(e[:, 0], e[:, 1], phase)
    return g


# -- generators ---------------------------------------------------------

def _pair_stubs(n, d, rng, max_tries=1000):
    """Random simple d-regular edge keys by stub pairing.

    Each pass shuffles the free stubs and accepts every consecutive pair that
    is neither a loop nor a repeat; rejected stubs are re-paired in the next
    pass. If the leftover stubs admit no valid pair the attempt restarts.
    """
    for _ in range(max_tries):
        keys = np.zeros(0, dtype=np.int64)
        stubs = np.repeat(np.arange(n, dtype=np.int64), d)
        stalls = 0
        while stubs.size:
            rng.shuffle(stubs)
            a, b = stubs[0::2], stubs[1::2]
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            k = lo * n + hi
            ok = (lo != hi) & ~np.isin(k, keys)
            _, first = np.unique(k, return_index=True)
            firstmask = np.zeros(k.size, dtype=bool)
            firstmask[first] = True
            ok &= firstmask
            if ok.any():
                keys = np.union1d(keys, k[ok])
                stubs = np.concatenate([a[~ok], b[~ok]])
                stalls = 0
            else:
                stalls += 1
                if not _suitable(stubs, keys, n) or stalls > 50:
                    break
        if stubs.size == 0:
            return keys
    raise RuntimeError("stub pairing failed repeatedly")


def _suitable(stubs, keys, n):
    nodes = np.unique(stubs)
    keyset = set(keys.tolist())
    for i in range(nodes.size):
        for j in range(i + 1, nodes.size):
            if int(nodes[i]) * n + int(nodes[j]) not in keyset:
                return True
    return False


def gen_random_regular(n: int, d: int, seed: int) -> EmbeddedGraph:
    if d < 3 or d >= n or (n * d) % 2:
        raise InfeasibleDegree(f"no simple {d}-regular graph on {n} nodes (need n*d even, 3 <= d < n)")
    coords = geometry.sample_points(n, generator("coords", seed).integers(2**63))
    keys = _pair_stubs(n, d, generator("edges", "regular", seed))
    g = EmbeddedGraph(coords, d, seed)
    g._keys = keys
    g._mask = np.ones(keys.size, dtype=np.int64)
    return g


def gen_gnp(n: int, p: float, seed: int) -> EmbeddedGraph:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    coords = geometry.sample_points(n, generator("coords", seed).integers(2**63))
    g = EmbeddedGraph(coords, 0, seed)
    total = n * (n - 1) // 2
    rng = generator("edges", "gnp", seed)
    m = int(rng.binomial(total, p)) if total else 0
    if m == total:
        idx = np.arange(total, dtype=np.int64)
    else:
        chosen = np.zeros(0, dtype=np.int64)
        while chosen.size < m:
            extra = rng.integers(0, total, size=int(1.1 * (m - chosen.size)) + 16)
            chosen = np.union1d(chosen, extra)
        idx = rng.choice(chosen, size=m, replace=False) if chosen.size > m else chosen
    if idx.size:
        u, v = _pair_from_index(np.sort(idx), n)
        g.add_edges(u, v, 0)
    return g


def _pair_from_index(idx, n):
    """Map linear index over pairs u<v (row-major) to (u, v)."""
    # row u starts at u*n - u*(u+1)/2
    u = (n - 0.5 - np.sqrt((n - 0.5) ** 2 - 2.0 * idx)).astype(np.int64)
    start = u * n - u * (u + 1) // 2
    fix = idx < start
    while np.any(fix):
        u[fix] -= 1
        start = u * n - u * (u + 1) // 2
        fix = idx < start
    nxt = (u + 1) * n - (u + 1) * (u + 2) // 2
    fix = idx >= nxt
    while np.any(fix):
        u[fix] += 1
        start = u * n - u * (u + 1) // 2
        nxt = (u + 1) * n - (u + 1) * (u + 2) // 2
        fix = idx >= nxt
    v = idx - start + u + 1
    return u, v


def rgg_edges(coords, rho: float):
    """All pairs (u < v) with euclid <= rho; depends on coordinates only."""
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape[0] < 2:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = cKDTree(coords).query_pairs(rho, output_type="ndarray").astype(np.int64)
    if pairs.size == 0:
        return pairs.reshape(0, 2)
    # confirm with the same distance formula used everywhere else
    dist = geometry.euclid(coords[pairs[:, 0]], coords[pairs[:, 1]])
    pairs = pairs[np.atleast_1d(dist <= rho)]
    pairs.sort(axis=1)
    return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]


def gen_rgg(n: int, rho: float, seed: int) -> EmbeddedGraph:
    if not 0.0 < rho:
        raise ValueError("rho must be positive")
    coords = geometry.sample_points(n, generator("coords", seed).integers(2**63))
    return from_edge_list(coords, rgg_edges(coords, rho), 0, 0, seed)


def is_connected(g) -> bool:
    n, indptr, indices, _ = _adjacency(g)
    if n <= 1:
        return True
    k, _ = csgraph.connected_components(_sparse(n, indptr, indices), directed=False)
    return k == 1


# -- measures -----------------------------------------------------------

def mst_weight(coords) -> float:
    """Euclidean MST weight (Delaunay edges contain the MST)."""
    pts = np.unique(np.asarray(coords, dtype=np.float64), axis=0)
    n = pts.shape[0]
    if n < 2:
        return 0.0
    if n <= 3:
        cand = np.array([(i, j) for i in range(n) for j in range(i + 1, n)])
    else:
        try:
            tri = Delaunay(pts)
            s = tri.simplices
            cand = np.concatenate([s[:, [0, 1]], s[:, [1, 2]], s[:, [0, 2]]])
        except QhullError:
            cand = np.array([(i, j) for i in range(n) for j in range(i + 1, n)])
    cand = np.unique(np.sort(cand, axis=1), axis=0)
    w = np.atleast_1d(geometry.euclid(pts[cand[:, 0]], pts[cand[:, 1]]))
    m = sp.coo_matrix((w, (cand[:, 0], cand[:, 1])), shape=(n, n)).tocsr()
    return float(csgraph.minimum_spanning_tree(m).sum())


def conductance_exact(g) -> float:
    """min over cuts of |E(S, S^c)| / min(vol S, vol S^c) by full enumeration."""
    n, indptr, indices, _ = _adjacency(g)
    if n > 20:
        raise TooLarge(f"exhaustive conductance needs n <= 20, got {n}")
    if n < 2:
        raise ValueError("need at least two nodes")
    deg = np.diff(indptr)
    src = np.repeat(np.arange(n), deg)
    sel = src < indices
    eu, ev = src[sel], indices[sel]
    # S never contains the last node; S and its complement give the same ratio
    masks = np.arange(1, 1 << (n - 1), dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    vol = bits.astype(np.int64) @ deg
    cut = np.zeros(masks.size, dtype=np.int64)
    for a, b in zip(eu.tolist(), ev.tolist()):
        cut += bits[:, a] ^ bits[:, b]
    total = int(deg.sum())
    small = np.minimum(vol, total - vol)
    if np.any(small == 0):
        # a zero-volume side means an isolated part: conductance is 0
        return 0.0
    return float((cut / small).min())


def spectral_gap(g, tol: float = 1e-6, max_iter: int | None = None, seed: int = 0) -> float:
    """1 - lambda_2 of the lazy walk (I + D^-1 A)/2 by deflated power iteration."""
    n, indptr, indices, _ = _adjacency(g)
    if n < 2:
        raise ValueError("spectral gap needs at least two nodes")
    if not is_connected(g):
        raise NotConnected("graph is not connected")
    deg = np.diff(indptr).astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    a = _sparse(n, indptr, indices)
    # symmetric similar form: S = (I + D^-1/2 A D^-1/2) / 2
    na = sp.diags(inv_sqrt) @ a @ sp.diags(inv_sqrt)
    top = np.sqrt(deg)
    top /= np.linalg.norm(top)
    if max_iter is None:
        max_iter = max(100, int(math.ceil(10 * n * math.log(n))))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x -= top * (top @ x)
    x /= np.linalg.norm(x)
    lam_prev = None
    lam = 0.0
    for _ in range(max_iter):
        y = 0.5 * (x + na @ x)
        y -= top * (top @ y)
        lam = float(x @ y)
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            lam = 0.0
            break
        x = y / nrm
        if lam_prev is not None and abs(lam - lam_prev) < tol:
            break
        lam_prev = lam
    return 1.0 - lam


def shortest_path(g, u: int, v: int):
    """(cost, hops, path) of the minimum Euclidean-weight path."""
    n, indptr, indices, coords = _adjacency(g)
    if u == v:
        return 0.0, 0, [int(u)]
    m = _sparse(n, indptr, indices, coords)
    dist, pred = csgraph.dijkstra(m, directed=True, indices=int(u), return_predecessors=True)
    if not np.isfinite(dist[v]):
        raise Unreachable(f"{v} unreachable from {u}")
    path = [int(v)]
    while path[-1] != u:
        path.append(int(pred[path[-1]]))
    path.reverse()
    return float(dist[v]), len(path) - 1, path


def baseline_stretch(g, samples: int, seed: int) -> dict:
    """Stretch cost/euclid over sampled pairs.

    For each sampled source u: its Euclidean-nearest non-neighbour and one
    uniformly random other node.
    """
    n, indptr, indices, coords = _adjacency(g)
    rng = generator("pairs", "stretch", seed)
    srcs = np.sort(rng.choice(n, size=min(samples, n), replace=False))
    tree = cKDTree(coords)
    m = _sparse(n, indptr, indices, coords)
    dist = csgraph.dijkstra(m, directed=True, indices=srcs)
    ratios, pairs = [], []
    for row, u in enumerate(srcs.tolist()):
        nb = set(indices[indptr[u]:indptr[u + 1]].tolist())
        k = min(n, 16)
        target = None
        while target is None:
            _, idx = tree.query(coords[u], k=k)
            for j in np.atleast_1d(idx).tolist():
                if j != u and j not in nb and j < n:
                    target = j
                    break
            if k >= n:
                break
            k = min(n, 4 * k)
        other = int(rng.integers(n - 1))
        other += other >= u
        for t in ([target] if target is not None else []) + [other]:
            e = geometry.euclid(coords[u], coords[t])
            if e > 0 and np.isfinite(dist[row, t]):
                ratios.append(dist[row, t] / e)
                pairs.append((u, t))
    r = np.asarray(ratios)
    return {
        "max": float(r.max()) if r.size else float("nan"),
        "mean": float(r.mean()) if r.size else float("nan"),
        "median": nearest_rank(r, 0.5) if r.size else float("nan"),
        "p99": nearest_rank(r, 0.99) if r.size else float("nan"),
        "ratios": r,
        "pairs": pairs,
    }
