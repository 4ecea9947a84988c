"""Lattice geometry on Z^d: the box convention, finite sets, boundaries.

Every module takes its box convention from here.  A box of side length r
around x is

    Q(x, r) = x + ([-floor((r-1)/2), ceil((r-1)/2)] cap Z)^d

which is deliberately asymmetric for even r, so that Q(0, N) tiles the
torus (Z/NZ)^d exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

Point = tuple[int, ...]


def box_range(r: int) -> range:
    """1-d section of the box Q(0, r): integers in [-floor((r-1)/2), ceil((r-1)/2)]."""
    if r < 1:
        raise ValueError(f"box side must be >= 1, got {r}")
    lo = -((r - 1) // 2)
    return range(lo, lo + r)


def box_bounds(center: Point, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive (lo, hi) corner vectors of Q(center, r)."""
    c = np.asarray(center, dtype=np.int64)
    lo = c - (r - 1) // 2
    return lo, lo + r - 1


def box_points(center: Point, r: int, d: int | None = None) -> list[Point]:
    """All lattice points of Q(center, r)."""
    if d is None:
        d = len(center)
    lo, hi = box_bounds(tuple(center), r)
    return [tuple(p) for p in itertools.product(*(range(int(lo[k]), int(hi[k]) + 1) for k in range(d)))]


def in_box(x: Sequence[int], center: Point, r: int) -> bool:
    lo, hi = box_bounds(tuple(center), r)
    return bool(np.all(np.asarray(x) >= lo) and np.all(np.asarray(x) <= hi))


def neighbors(x: Point) -> Iterator[Point]:
    """The 2d nearest neighbors of x on Z^d."""
    for k in range(len(x)):
        for s in (-1, 1):
            y = list(x)
            y[k] += s
            yield tuple(y)


def linf_diameter(points: Iterable[Point]) -> int:
    """Smallest R such that the set fits in some Q(x, R) (paper's delta)."""
    arr = np.asarray(list(points), dtype=np.int64)
    if arr.size == 0:
        return 0
    spread = arr.max(axis=0) - arr.min(axis=0)
    # A side-R box spans R-1 in each coordinate.
    return int(spread.max()) + 1


@dataclass(frozen=True)
class FiniteSet:
    """A finite subset of Z^d in canonical (deduplicated, sorted) form."""

    points: tuple[Point, ...]
    d: int

    @staticmethod
    def of(points: Iterable[Sequence[int]], d: int | None = None) -> "FiniteSet":
        pts = sorted({tuple(int(c) for c in p) for p in points})
        if not pts:
            raise ValueError("empty set; use FiniteSet.empty(d)")
        dim = len(pts[0])
        if d is not None and d != dim:
            raise ValueError(f"declared d={d} but points have dimension {dim}")
        if any(len(p) != dim for p in pts):
            raise ValueError("points of mixed dimension")
        if dim < 3:
            raise ValueError(f"dimension must be >= 3, got {dim}")
        return FiniteSet(tuple(pts), dim)

    @staticmethod
    def empty(d: int) -> "FiniteSet":
        return FiniteSet((), d)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self) -> Iterator[Point]:
        return iter(self.points)

    def __contains__(self, p: Sequence[int]) -> bool:
        return tuple(p) in set(self.points)

    def translate(self, v: Sequence[int]) -> "FiniteSet":
        return FiniteSet.of([tuple(a + b for a, b in zip(p, v)) for p in self.points])

    def diameter(self) -> int:
        return linf_diameter(self.points)

    def is_connected(self) -> bool:
        """Nearest-neighbor connectivity."""
        if len(self.points) <= 1:
            return True
        pts = set(self.points)
        seen = {self.points[0]}
        stack = [self.points[0]]
        while stack:
            for y in neighbors(stack.pop()):
                if y in pts and y not in seen:
                    seen.add(y)
                    stack.append(y)
        return len(seen) == len(pts)

    def internal_boundary(self) -> tuple[Point, ...]:
        pts = set(self.points)
        return tuple(p for p in self.points if any(y not in pts for y in neighbors(p)))


def embed(points: Iterable[Sequence[int]], d: int) -> FiniteSet:
    """View a low-dimensional set inside Z^d by zero-padding coordinates."""
    out = []
    for p in points:
        p = tuple(int(c) for c in p)
        if len(p) > d:
            raise ValueError(f"cannot embed a {len(p)}-dimensional point into Z^{d}")
        out.append(p + (0,) * (d - len(p)))
    return FiniteSet.of(out)


def _signed_permutations(d: int) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    return [
        (perm, signs)
        for perm in itertools.permutations(range(d))
        for signs in itertools.product((-1, 1), repeat=d)
    ]


def canonical_shape(points: Iterable[Sequence[int]], d: int | None = None) -> FiniteSet:
    """Canonical representative of a shape modulo translations and lattice symmetries.

    Minimizes the sorted point tuple over all signed coordinate permutations,
    then translates so the minimal corner sits at the origin.
    """
    base = FiniteSet.of(points, d)
    d = base.d
    best = None
    arr = np.asarray(base.points, dtype=np.int64)
    for perm, signs in _signed_permutations(d):
        img = arr[:, perm] * np.asarray(signs)
        img = img - img.min(axis=0)
        key = tuple(sorted(map(tuple, img.tolist())))
        if best is None or key < best:
            best = key
    return FiniteSet.of(best)


def symmetry_images(shape: FiniteSet) -> list[FiniteSet]:
    """All distinct images of a shape under lattice symmetries, anchored at the origin."""
    arr = np.asarray(shape.points, dtype=np.int64)
    seen: set[tuple] = set()
    out = []
    for perm, signs in _signed_permutations(shape.d):
        img = arr[:, perm] * np.asarray(signs)
        img = img - img.min(axis=0)
        key = tuple(sorted(map(tuple, img.tolist())))
        if key not in seen:
            seen.add(key)
            out.append(FiniteSet.of(key))
    return out


# The two connected three-point shapes (up to lattice symmetries) and the
# eight reduction sets whose capacities settle which triples proliferate in
# the late set.  Stored in their native low dimension; embed() lifts them.
K1_2D = ((0, 0), (0, 1), (0, 2))
K2_2D = ((0, 0), (0, 1), (1, 0))

A_SETS_3D = (
    ((0, 0, 0), (0, 2, 0), (0, 1, 1)),
    ((0, 0, 0), (0, 2, 0), (0, 3, 0)),
    ((0, 0, 0), (1, 1, 0), (0, 3, 0)),
    ((0, 0, 0), (0, 2, 0), (1, 2, 0)),
    ((0, 0, 0), (1, 1, 0), (1, 2, 0)),
    ((0, 0, 0), (0, 2, 0), (1, 1, 1)),
    ((0, 0, 0), (1, 1, 0), (1, 1, 1)),
    ((0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1)),
)


def k_sets(d: int) -> tuple[FiniteSet, FiniteSet]:
    return embed(K1_2D, d), embed(K2_2D, d)


def a_sets(d: int = 3) -> tuple[FiniteSet, ...]:
    return tuple(embed(a, d) for a in A_SETS_3D)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box Q(center, side) in Z^d."""

    center: Point
    side: int

    @property
    def d(self) -> int:
        return len(self.center)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return box_bounds(self.center, self.side)

    def points(self) -> list[Point]:
        return box_points(self.center, self.side)

    def __contains__(self, x: Sequence[int]) -> bool:
        return in_box(x, self.center, self.side)

    def contains_array(self, xs: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds()
        xs = np.asarray(xs)
        return np.all((xs >= lo) & (xs <= hi), axis=-1)

    def internal_boundary(self) -> list[Point]:
        lo, hi = self.bounds()
        return [
            p for p in self.points()
            if any(c == int(lo[k]) or c == int(hi[k]) for k, c in enumerate(p))
        ]

    def exterior_boundary(self) -> list[Point]:
        """Sites outside the box adjacent to it (the paper's boundary of the complement)."""
        out: set[Point] = set()
        for p in self.internal_boundary():
            for y in neighbors(p):
                if y not in self:
                    out.add(y)
        return sorted(out)


@dataclass(frozen=True)
class DirichletRegion:
    """A box, or a box with an inner box removed, with per-site boundary flags."""

    outer: Box
    inner: Box | None = None

    @property
    def d(self) -> int:
        return self.outer.d

    def __post_init__(self):
        if self.inner is not None:
            lo_o, hi_o = self.outer.bounds()
            lo_i, hi_i = self.inner.bounds()
            if not (np.all(lo_o <= lo_i) and np.all(hi_i <= hi_o)):
                raise ValueError("inner box must sit inside the outer box")

    def __contains__(self, x: Sequence[int]) -> bool:
        if self.inner is not None and x in self.inner:
            return False
        return x in self.outer

    def points(self) -> list[Point]:
        if self.inner is None:
            return self.outer.points()
        return [p for p in self.outer.points() if p not in self.inner]
