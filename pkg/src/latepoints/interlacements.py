"""Random interlacements observed in a box, with an exact vacancy law oracle.

The trajectory count at level u is Poisson(u cap(B)); each trajectory starts
from the normalized equilibrium measure of B and contributes the local times
of a doubly infinite transient walk.  Everything the trajectory does outside
B is integrated out exactly: whenever the walk steps out of B at x, the
distribution of its next entrance point (or of never returning) is the
first-entrance kernel

    K(x, z) = P_x(H_B < infinity, X_{H_B} = z),

which solves g(x - .) = sum_z K(x, z) g(z - .) on the internal boundary,
so K(x, .) = g(x - .) G_B^{-1} row by row from the same Green matrix that
yields the equilibrium measure.  The row sum is the hitting probability
h(x), the survival coin.  No path truncation is involved; the only error
is the 1e-13-level error of the Green table, reported with each sample.

The closed form P(K subset vacant) = exp(-u cap(K)) is exposed separately
and serves as the oracle for every Monte Carlo test.
"""

from __future__ import annotations

import json
import math
import csv
from dataclasses import dataclass

import numpy as np
from numba import njit, uint64, int64
from scipy.linalg import cho_factor, cho_solve

from .capacity import capacity
from .geometry import Box, FiniteSet
from .green import GreenTable, green_table
from .torus import _sm64, stream_state, u_scale

__all__ = [
    "BoxEnvironment",
    "RISample",
    "build_environment",
    "sample_ri",
    "vacant_probability",
    "vacancy_mc",
    "late_set_ri",
]


def vacant_probability(K: FiniteSet, u: float, table: GreenTable | None = None) -> float:
    """Exact law P(K subset of the vacant set at level u) = exp(-u cap(K))."""
    if u < 0:
        raise ValueError("u must be >= 0")
    return math.exp(-u * capacity(K, table).cap)


@dataclass
class BoxEnvironment:
    """Equilibrium starts and the exact re-entry kernel for one centered box."""

    box: Box
    cap: float
    bpts: np.ndarray        # internal boundary sites, shape (nB, d)
    bflat: np.ndarray       # their flat indices within the box
    start_cum: np.ndarray   # cumulative normalized equilibrium weights
    xmap: np.ndarray        # (side+2)^d flat map: exit site -> kernel row, -1 off
    h: np.ndarray           # per exit site, return probability = row sum of K
    row_cum: np.ndarray     # per exit site, cumulative re-entry distribution
    entry_flat: np.ndarray  # kernel columns as flat box indices (= bflat)
    kernel_err: float       # linf bound on the kernel rows from table errors

    @property
    def d(self) -> int:
        return self.box.d


_ENV_CACHE: dict[tuple, BoxEnvironment] = {}


def _flat_in(pts: np.ndarray, lo: np.ndarray, side: int) -> np.ndarray:
    rel = pts - lo
    out = np.zeros(len(pts), np.int64)
    for k in range(pts.shape[1]):
        out = out * side + rel[:, k]
    return out


def build_environment(box: Box, table: GreenTable | None = None) -> BoxEnvironment:
    """Precompute starts and the first-entrance kernel for a box centered at 0."""
    if any(c != 0 for c in box.center):
        raise ValueError("the sampler expects a box centered at the origin")
    key = (box.center, box.side, box.d)
    if key in _ENV_CACHE:
        return _ENV_CACHE[key]
    d = box.d
    lo, hi = box.bounds()
    lo = lo.astype(np.int64)
    rb = int(max(np.max(np.abs(lo)), np.max(np.abs(hi))))
    if table is None:
        table = green_table(d, 2 * rb + 1)
    bnd = FiniteSet.of(box.internal_boundary())
    bpts = np.asarray(bnd.points, dtype=np.int64)
    nB = len(bpts)
    G = np.empty((nB, nB))
    for i in range(nB):
        for j in range(i, nB):
            G[i, j] = G[j, i] = table.g(bpts[i] - bpts[j])
    factor = cho_factor(G)
    e = cho_solve(factor, np.ones(nB))
    e = np.clip(e, 0.0, None)
    cap = float(e.sum())
    start_cum = np.cumsum(e / cap)
    start_cum[-1] = 1.0
    xpts = np.asarray(box.exterior_boundary(), dtype=np.int64)
    nX = len(xpts)
    # rows of the first-entrance kernel: K(x, .) = g(x - .) G^{-1}
    rhs = np.empty((nB, nX))
    for j in range(nX):
        for i in range(nB):
            rhs[i, j] = table.g(xpts[j] - bpts[i])
    rows = cho_solve(factor, rhs).T  # (nX, nB)
    h = rows.sum(axis=1)
    neg = float(-min(rows.min(), 0.0))
    rows = np.clip(rows, 0.0, None)
    # restore the exact row sums after clipping the solver's tiny negatives
    rows *= (h / rows.sum(axis=1))[:, None]
    if np.any(h <= 0) or np.any(h >= 1):
        raise RuntimeError("re-entry kernel produced hitting probabilities off (0,1)")
    row_cum = np.cumsum(rows, axis=1)
    side2 = box.side + 2
    xmap = np.full(side2**d, -1, np.int64)
    xflat = _flat_in(xpts, lo - 1, side2)
    xmap[xflat] = np.arange(nX)
    bflat = _flat_in(bpts, lo, box.side)
    kernel_err = 2.0 * nB * table.max_err() + neg
    env = BoxEnvironment(box, cap, bpts, bflat, start_cum, xmap, h, row_cum,
                         bflat, kernel_err)
    _ENV_CACHE[key] = env
    return env


@njit(cache=True, inline="always")
def _u01(s):
    s, z = _sm64(s)
    return s, (z >> uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _poisson(s, lam):
    """Knuth inversion; fine for the means used here (< a few hundred)."""
    L = math.exp(-lam)
    k = int64(0)
    p = 1.0
    while True:
        s, u = _u01(s)
        p *= u
        if p <= L:
            return s, k
        k += 1


@njit(cache=True)
def _sample_kernel(s, n_traj, bpts, start_cum, lo, side, d, xmap, h, row_cum,
                   bflat, local, kflat):
    """Run n_traj trajectories, in-box steps only; exterior via the kernel.

    Returns the RNG state, per-trajectory bitmask of which marked sites were
    visited, and the total number of in-box steps.
    """
    nk = kflat.shape[0]
    hit = np.zeros(n_traj, np.uint64)
    steps = int64(0)
    x = np.empty(d, np.int64)
    side2 = side + 2
    for i in range(n_traj):
        s, u = _u01(s)
        j = np.searchsorted(start_cum, u)
        if j >= bpts.shape[0]:
            j = bpts.shape[0] - 1
        for k in range(d):
            x[k] = bpts[j, k]
        bits = uint64(0)
        alive = True
        while alive:
            # x is inside the box here: record and step
            idx = int64(0)
            for k in range(d):
                idx = idx * side + (x[k] - lo[k])
            local[idx] += 1
            for m in range(nk):
                if idx == kflat[m]:
                    bits |= uint64(1) << uint64(m)
            steps += 1
            s, u = _u01(s)
            r = int64(u * 2 * d)
            if r >= 2 * d:
                r = 2 * d - 1
            k = r // 2
            x[k] += 2 * (r % 2) - 1
            out = False
            for k2 in range(d):
                if x[k2] < lo[k2] or x[k2] > lo[k2] + side - 1:
                    out = True
                    break
            if out:
                # exterior collapsed into the exact first-entrance kernel
                xi = int64(0)
                for k2 in range(d):
                    xi = xi * side2 + (x[k2] - lo[k2] + 1)
                row = xmap[xi]
                s, u = _u01(s)
                if u >= h[row]:
                    alive = False
                else:
                    # u is uniform on (0, h(x)) here and row_cum ends at h(x),
                    # so inverting the same u draws the entry point exactly
                    z = np.searchsorted(row_cum[row], u)
                    if z >= bpts.shape[0]:
                        z = bpts.shape[0] - 1
                    for k2 in range(d):
                        x[k2] = bpts[z, k2]
        hit[i] = bits
    return s, hit, steps


@dataclass
class RISample:
    """Local times of all level-u trajectories meeting a box."""

    box: Box
    u: float
    trajCount: int
    localTimes: np.ndarray      # dense over box sites, row-major
    levels: np.ndarray          # per-trajectory level in (0, u]
    kernelErr: float            # linf error bound of the re-entry kernel rows

    def vacant_mask(self) -> np.ndarray:
        return self.localTimes == 0

    def to_json(self) -> str:
        return json.dumps({
            "box": {"center": list(self.box.center), "side": self.box.side},
            "u": self.u,
            "trajCount": self.trajCount,
            "kernelErr": self.kernelErr,
        }, sort_keys=True)

    def local_times_csv(self, path) -> None:
        lo, _ = self.box.bounds()
        side = self.box.side
        d = self.box.d
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"x{i + 1}" for i in range(d)] + ["local_time"])
            for flat, lt in enumerate(self.localTimes):
                if lt == 0:
                    continue
                coords = []
                rem = flat
                for _ in range(d):
                    coords.append(rem % side)
                    rem //= side
                coords = [int(c + l) for c, l in zip(reversed(coords), lo)]
                w.writerow(coords + [int(lt)])


def _box_flat(box: Box, pts) -> np.ndarray:
    lo, _ = box.bounds()
    side = box.side
    out = []
    for p in pts:
        idx = 0
        for k in range(box.d):
            c = int(p[k]) - int(lo[k])
            if not (0 <= c < side):
                raise ValueError(f"site {tuple(p)} is outside the box")
            idx = idx * side + c
        out.append(idx)
    return np.asarray(out, dtype=np.int64)


def _levels_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(int(np.uint64(stream_state(seed ^ 0x5851F42D, stream))))


def sample_ri(box: Box, u: float, seed: int, stream: int = 0,
              env: BoxEnvironment | None = None) -> RISample:
    """One interlacement sample at level u inside the box.

    Trajectory levels are uniform in (0, u], so restricting to levels <= u'
    yields the monotone coupling across levels.
    """
    if u < 0:
        raise ValueError("u must be >= 0")
    env = env or build_environment(box)
    s = np.uint64(stream_state(seed, stream))
    lam = u * env.cap
    if lam > 0:
        s2, n = _poisson(s, lam)
        s = np.uint64(s2)
        n = int(n)
    else:
        n = 0
    levels = np.sort(_levels_rng(seed, stream).uniform(0.0, u, size=n)) if n else np.zeros(0)
    lo, _ = box.bounds()
    local = np.zeros(box.side**box.d, np.int64)
    kf = np.zeros(0, np.int64)
    _sample_kernel(s, int64(n), env.bpts, env.start_cum, lo.astype(np.int64),
                   int64(box.side), int64(box.d), env.xmap, env.h, env.row_cum,
                   env.bflat, local, kf)
    return RISample(box, u, n, local, levels, env.kernel_err)


def vacancy_mc(box: Box, K_points, u_grid, replicas: int, seed: int,
               env: BoxEnvironment | None = None) -> np.ndarray:
    """Fraction of replicas with K fully vacant, for each level in u_grid.

    One trajectory stream per replica at u_max, coupled across the grid via
    uniform levels: K is vacant at u exactly when no trajectory of level <= u
    touches K.
    """
    env = env or build_environment(box)
    u_grid = np.sort(np.asarray(u_grid, dtype=np.float64))
    umax = float(u_grid[-1])
    kflat = _box_flat(box, K_points)
    if len(kflat) > 63:
        raise ValueError("at most 63 marked sites")
    lo, _ = box.bounds()
    lo = lo.astype(np.int64)
    counts = np.zeros(len(u_grid), np.int64)
    local = np.zeros(box.side**box.d, np.int64)
    rng = _levels_rng(seed, 0)
    lam = umax * env.cap
    for rep in range(replicas):
        s = np.uint64(stream_state(seed, rep))
        s2, n = _poisson(s, lam)
        s = np.uint64(s2)
        n = int(n)
        levels = rng.uniform(0.0, umax, size=n)
        s2, hit, _ = _sample_kernel(s, int64(n), env.bpts, env.start_cum, lo,
                                    int64(box.side), int64(box.d), env.xmap,
                                    env.h, env.row_cum, env.bflat, local, kflat)
        touching = levels[np.asarray(hit) != 0]
        threshold = touching.min() if touching.size else np.inf
        counts += u_grid < threshold
    return counts / replicas


def late_set_ri(box: Box, alpha: float, seed: int, g0: float, stream: int = 0,
                env: BoxEnvironment | None = None) -> tuple[np.ndarray, RISample]:
    """Vacant sites of the box at level u_F(alpha) with F the box itself."""
    cardF = box.side**box.d
    u = u_scale(alpha, cardF, g0)
    sample = sample_ri(box, u, seed, stream, env)
    return np.flatnonzero(sample.vacant_mask()), sample
