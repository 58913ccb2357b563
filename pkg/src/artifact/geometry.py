"""Points in the unit square, distances, boxes and hierarchical grid partitions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonIntegerRatio

DIRECTIONS = ("N", "S", "E", "W")
_STEP = {"N": (0, 1), "S": (0, -1), "E": (1, 0), "W": (-1, 0)}


def euclid(p, q):
    """L2 distance. Works on single points or broadcastable (..., 2) arrays."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    d = p - q
    out = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1])
    return float(out) if out.ndim == 0 else out


def linf(p, q):
    """L-infinity distance max(|dx|, |dy|)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    d = np.abs(p - q)
    out = np.maximum(d[..., 0], d[..., 1])
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Box:
    """Axis-aligned square of side `side` centred at `center`, clipped to [0,1]^2."""
    center: tuple
    side: float

    def contains(self, p) -> bool:
        return box_contains(self, p)

    def area(self) -> float:
        return clipped_area(self.center, self.side)


def box_contains(b: Box, p):
    """True iff linf(center, p) <= side/2. Vectorised over (..., 2) arrays."""
    res = linf(b.center, p) <= b.side / 2.0
    return bool(res) if np.ndim(res) == 0 else res


def clipped_area(center, side: float) -> float:
    """Area of the side-`side` box around `center` intersected with the unit square."""
    h = side / 2.0
    cx, cy = float(center[0]), float(center[1])
    wx = min(1.0, cx + h) - max(0.0, cx - h)
    wy = min(1.0, cy + h) - max(0.0, cy - h)
    return max(wx, 0.0) * max(wy, 0.0)


def inverse_ratio(r: float) -> int:
    """Return k = 1/r, raising NonIntegerRatio unless it is an integer."""
    if r <= 0:
        raise NonIntegerRatio(f"r must be positive, got {r}")
    k = round(1.0 / r)
    if k < 1 or not math.isclose(k * r, 1.0, rel_tol=0, abs_tol=1e-12):
        raise NonIntegerRatio(f"1/r = {1.0 / r} is not an integer")
    return int(k)


@dataclass(frozen=True)
class GridSquare:
    level: int
    ix: int
    iy: int


def grid_size(level: int, r: float) -> int:
    """Number of squares per side of H_level."""
    return inverse_ratio(r) ** level


def square_indices(pts, level: int, r: float):
    """Vectorised square_of: (ix, iy) integer arrays for an (n, 2) coordinate array."""
    m = grid_size(level, r)
    pts = np.asarray(pts, dtype=np.float64)
    # floor(p / r^i) == floor(p * m); using the integer count avoids r^i rounding
    idx = np.floor(pts * m).astype(np.int64)
    np.clip(idx, 0, m - 1, out=idx)
    return idx[..., 0], idx[..., 1]


def square_of(p, level: int, r: float) -> GridSquare:
    if level < 1:
        raise ValueError("level must be >= 1")
    ix, iy = square_indices(np.asarray(p, dtype=np.float64), level, r)
    return GridSquare(level, int(ix), int(iy))


def adjacent_square(s: GridSquare, direction: str, r: float = 0.25):
    """Neighbouring square at the same level, or None past the boundary."""
    m = grid_size(s.level, r)
    dx, dy = _STEP[direction]
    ix, iy = s.ix + dx, s.iy + dy
    if 0 <= ix < m and 0 <= iy < m:
        return GridSquare(s.level, ix, iy)
    return None


def children(s: GridSquare, r: float):
    """The 1/r^2 squares of the next level that lie inside s."""
    k = inverse_ratio(r)
    return [GridSquare(s.level + 1, s.ix * k + a, s.iy * k + b)
            for b in range(k) for a in range(k)]


def sample_points(n: int, seed: int) -> np.ndarray:
    """n i.i.d. uniform points on [0,1]^2 as an (n, 2) float64 array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return rng.random((n, 2))
