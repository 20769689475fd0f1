"""Triangle histogram descriptor built from contact points.

Every triple of contacts forms a triangle described by its largest side
``l0``, second side ``l1`` and largest angle ``a0`` (the angle opposite
``l0``). Triangles are binned on a uniform 3D grid; the bin index is the
discretized observation used by the planner.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, NamedTuple

import numpy as np

MIN_ALTITUDE = 1e-6


class Triangle(NamedTuple):
    l0: float
    l1: float
    a0: float


class BinIndex(NamedTuple):
    i: int
    j: int
    k: int


@dataclass(frozen=True)
class Binning:
    bins: tuple[int, int, int] = (10, 10, 10)
    l_max: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(int(b) for b in self.bins))
        if len(self.bins) != 3 or min(self.bins) < 1:
            raise ValueError(f"bad bin counts {self.bins}")
        if not self.l_max > 0:
            raise ValueError("l_max must be positive")

    @property
    def size(self) -> int:
        return self.bins[0] * self.bins[1] * self.bins[2]

    @property
    def ranges(self) -> tuple[float, float, float]:
        return (self.l_max, self.l_max, math.pi)

    def edges(self, axis: int) -> np.ndarray:
        return np.linspace(0.0, self.ranges[axis], self.bins[axis] + 1)

    def center(self, z: BinIndex) -> Triangle:
        r = self.ranges
        return Triangle(*((idx + 0.5) * r[a] / self.bins[a] for a, idx in enumerate(z)))

    def flat(self, z: BinIndex) -> int:
        return (z[0] * self.bins[1] + z[1]) * self.bins[2] + z[2]

    def unflat(self, n: int) -> BinIndex:
        i, rest = divmod(int(n), self.bins[1] * self.bins[2])
        j, k = divmod(rest, self.bins[2])
        return BinIndex(i, j, k)

    def to_dict(self) -> dict:
        return {"bins": list(self.bins), "l_max": self.l_max}


def triangle_from_points(p0, p1, p2) -> Triangle | None:
    """Parameterize one triangle, or ``None`` if its smallest altitude is below 1 um."""
    p = np.array([p0, p1, p2], dtype=float)
    sides = np.array([
        np.linalg.norm(p[1] - p[2]),  # opposite vertex 0
        np.linalg.norm(p[0] - p[2]),
        np.linalg.norm(p[0] - p[1]),
    ])
    area = 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]))
    longest = sides.max()
    if longest == 0.0 or 2.0 * area / longest < MIN_ALTITUDE:
        return None
    l0, l1, l2 = sorted(sides, reverse=True)
    cos_a0 = (l1 * l1 + l2 * l2 - l0 * l0) / (2.0 * l1 * l2)
    a0 = math.acos(max(-1.0, min(1.0, cos_a0)))
    return Triangle(float(l0), float(l1), a0)


def triangles_from_contacts(contacts) -> list[Triangle]:
    """All non-degenerate triangles among the contact points, in combination order."""
    pts = getattr(contacts, "points", contacts)
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    out = []
    for a, b, c in combinations(range(len(pts)), 3):
        t = triangle_from_points(pts[a], pts[b], pts[c])
        if t is not None:
            out.append(t)
    return out


def bin_triangle(t: Triangle, binning: Binning = Binning()) -> BinIndex:
    idx = []
    for axis, value in enumerate(t):
        n = binning.bins[axis]
        cell = int(math.floor(value / binning.ranges[axis] * n))
        idx.append(min(max(cell, 0), n - 1))
    return BinIndex(*idx)


class HistogramDescriptor:
    """Dense 3D count histogram. Treated as a value: ``accumulate`` returns a new one."""

    __slots__ = ("counts",)

    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 3:
            raise ValueError("histogram counts must be 3D")
        if (counts < 0).any():
            raise ValueError("histogram counts must be non-negative")
        self.counts = counts

    @classmethod
    def empty(cls, binning: Binning = Binning()) -> "HistogramDescriptor":
        return cls(np.zeros(binning.bins, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def flat(self) -> np.ndarray:
        return self.counts.reshape(-1)

    def nonzero_bins(self) -> list[BinIndex]:
        return [BinIndex(*map(int, ijk)) for ijk in np.argwhere(self.counts > 0)]

    def __eq__(self, other):
        if not isinstance(other, HistogramDescriptor):
            return NotImplemented
        return self.counts.shape == other.counts.shape and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"HistogramDescriptor(shape={self.counts.shape}, total={self.total})"


def accumulate(h: HistogramDescriptor, zs: Iterable[BinIndex]) -> HistogramDescriptor:
    counts = h.counts.copy()
    for z in zs:
        counts[z[0], z[1], z[2]] += 1
    return HistogramDescriptor(counts)


def observe(contacts, binning: Binning = Binning()) -> list[BinIndex]:
    """Contacts -> discretized triangle observations."""
    return [bin_triangle(t, binning) for t in triangles_from_contacts(contacts)]


def _vec(h) -> np.ndarray:
    if isinstance(h, HistogramDescriptor):
        return h.flat().astype(float)
    return np.asarray(h, dtype=float).reshape(-1)


def cosine_distance(h1, h2) -> float:
    a, b = _vec(h1), _vec(h2)
    aa, bb = float(a @ a), float(b @ b)
    if aa == 0 or bb == 0:
        raise ValueError("cosine distance undefined for an all-zero histogram")
    # sqrt(aa * bb) rather than |a| |b|: exact on self for integer counts
    d = 1.0 - float(a @ b) / math.sqrt(aa * bb)
    return min(1.0, max(0.0, d))


def intersection_distance(h1, h2) -> float:
    a, b = _vec(h1), _vec(h2)
    sa, sb = a.sum(), b.sum()
    if sa == 0 or sb == 0:
        raise ValueError("intersection distance undefined for an all-zero histogram")
    # cross-multiplied so integer counts stay exact (zero on self)
    d = 1.0 - float(np.minimum(a * sb, b * sa).sum()) / float(sa * sb)
    return min(1.0, max(0.0, d))


METRICS = {"cosine": cosine_distance, "intersection": intersection_distance}
