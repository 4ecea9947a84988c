"""Excursion decomposition of a trace across nested boxes B1 in B2 in B3.

The schedule records departures D_k (exits from B3), returns R_k (entries
into B2 after a departure), hits H_k (first visit to B1 within excursion k,
infinity if none), the clothesline pairs (entry site, exit site), and the
excursion ranges from the hit of B1 to the last visit of B2 before leaving
B3.  Counts of such excursions, for walk traces up to a time horizon and
for interlacement trajectory bundles, concentrate around u M with
M = cap_{B3}(B2), which a Dirichlet solve provides independently.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit, int64

from .geometry import Box
from .interlacements import BoxEnvironment, _poisson, _u01, build_environment
from .torus import stream_state

__all__ = [
    "ExcursionSchedule",
    "excursion_decompose",
    "lift_torus_trace",
    "excursion_count_rw",
    "excursion_counts_ri",
    "rw_cycle_m",
    "concentration_report",
]

INF = -1  # sentinel for an excursion that never reaches B1


@dataclass
class ExcursionSchedule:
    """Return/departure/hit times and clotheslines of one trace."""

    returns: np.ndarray      # R_k, k >= 1
    departures: np.ndarray   # D_k, k >= 0 (D_0 is the initial exit of B3)
    hits: np.ndarray         # H_k aligned with returns; INF sentinel allowed
    entries: np.ndarray      # trace position at R_k, shape (K, d)
    exits: np.ndarray        # trace position at D_k, shape (K, d)
    ranges: list             # per excursion: array of sites, or None for no hit

    def __post_init__(self):
        K = len(self.returns)
        for k in range(K):
            d_prev = self.departures[k]
            if not (d_prev <= self.returns[k] <= self.departures[k + 1]):
                raise AssertionError(f"schedule ordering violated at k={k}")

    @property
    def count(self) -> int:
        return len(self.returns)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["k", "R_k", "D_k", "H_k", "entry", "exit"])
            for k in range(self.count):
                h = self.hits[k]
                w.writerow([
                    k + 1, int(self.returns[k]), int(self.departures[k + 1]),
                    "inf" if h == INF else int(h),
                    ":".join(map(str, self.entries[k])),
                    ":".join(map(str, self.exits[k])),
                ])


def _check_nesting(B1: Box, B2: Box, B3: Box) -> None:
    for inner, outer, name in ((B1, B2, "B1 in B2"), (B2, B3, "B2 in B3")):
        li, hi = inner.bounds()
        lo, ho = outer.bounds()
        if not (np.all(lo <= li) and np.all(hi <= ho)):
            raise ValueError(f"malformed nesting: {name} fails")


def excursion_decompose(trace: np.ndarray, B1: Box, B2: Box, B3: Box) -> ExcursionSchedule:
    """Split a Z^d trace (rows are positions) along the B2/B3 annulus."""
    trace = np.asarray(trace)
    if trace.ndim != 2:
        raise ValueError("trace must be an (n, d) array of positions")
    _check_nesting(B1, B2, B3)
    in1 = B1.contains_array(trace)
    in2 = B2.contains_array(trace)
    in3 = B3.contains_array(trace)
    n = len(trace)
    departures = []
    returns = []
    hits = []
    ranges = []
    t = 0
    # D_0: first exit from B3 (0 if the trace starts outside)
    while t < n and in3[t]:
        t += 1
    if t == n:
        # never leaves B3: no departures means no complete excursion structure
        return ExcursionSchedule(
            np.zeros(0, np.int64), np.asarray([], np.int64), np.zeros(0, np.int64),
            np.zeros((0, trace.shape[1]), np.int64),
            np.zeros((0, trace.shape[1]), np.int64), [])
    departures.append(t)
    while True:
        # R_{k+1}: next entry into B2
        while t < n and not in2[t]:
            t += 1
        if t == n:
            break
        r = t
        # D_{k+1}: next exit from B3
        while t < n and in3[t]:
            t += 1
        if t == n:
            break
        d = t
        returns.append(r)
        departures.append(d)
        seg1 = np.flatnonzero(in1[r:d])
        if len(seg1) == 0:
            hits.append(INF)
            ranges.append(None)
        else:
            h = r + int(seg1[0])
            hits.append(h)
            last2 = r + int(np.flatnonzero(in2[r:d])[-1])
            ranges.append(np.unique(trace[h:last2 + 1], axis=0))
    returns = np.asarray(returns, np.int64)
    departures = np.asarray(departures, np.int64)
    K = len(returns)
    return ExcursionSchedule(
        returns, departures, np.asarray(hits, np.int64),
        trace[returns] if K else np.zeros((0, trace.shape[1]), np.int64),
        trace[departures[1:K + 1]] if K else np.zeros((0, trace.shape[1]), np.int64),
        ranges)


def lift_torus_trace(flat_trace: np.ndarray, N: int, d: int,
                     center: tuple[int, ...] | None = None) -> np.ndarray:
    """Represent a torus trace in Z^d coordinates around a center.

    Valid for decompositions whose outer box has diameter below N: each
    coordinate is shifted to the representative in (-N/2, N/2] around the
    center, the unique lift under that constraint.
    """
    coords = np.stack(np.unravel_index(np.asarray(flat_trace), (N,) * d), axis=1).astype(np.int64)
    if center is not None:
        coords = coords - np.asarray(center, np.int64)
    coords = (coords + N // 2) % N - N // 2
    return coords


def excursion_count_rw(schedule: ExcursionSchedule, u: float, N: int, d: int) -> int:
    """Number of returns before time u N^d."""
    if u < 0:
        raise ValueError("u must be >= 0")
    return int(np.sum(schedule.returns < u * N**d))


@njit(cache=True)
def _ri_excursion_kernel(s, n_traj, bpts, start_cum, lo, side, d, xmap, h, row_cum,
                         lo2, hi2):
    """Total excursion count over n_traj interlacement trajectories.

    An excursion starts at an entry into B2 (armed at trajectory start and
    after every exit from the sampler box, which plays the role of B3).
    """
    total = int64(0)
    x = np.empty(d, np.int64)
    side2 = side + 2
    for i in range(n_traj):
        s, u = _u01(s)
        j = np.searchsorted(start_cum, u)
        if j >= bpts.shape[0]:
            j = bpts.shape[0] - 1
        for k in range(d):
            x[k] = bpts[j, k]
        armed = True
        alive = True
        while alive:
            if armed:
                inb2 = True
                for k in range(d):
                    if x[k] < lo2[k] or x[k] > hi2[k]:
                        inb2 = False
                        break
                if inb2:
                    total += 1
                    armed = False
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
                armed = True
                xi = int64(0)
                for k2 in range(d):
                    xi = xi * side2 + (x[k2] - lo[k2] + 1)
                row = xmap[xi]
                s, u = _u01(s)
                if u >= h[row]:
                    alive = False
                else:
                    z = np.searchsorted(row_cum[row], u)
                    if z >= bpts.shape[0]:
                        z = bpts.shape[0] - 1
                    for k2 in range(d):
                        x[k2] = bpts[z, k2]
    return s, total


def excursion_counts_ri(B2: Box, B3: Box, u: float, replicas: int, seed: int,
                        env: BoxEnvironment | None = None) -> np.ndarray:
    """N_RI samples: per replica, total excursions of all level-u trajectories."""
    _check_nesting(B2, B2, B3)
    env = env or build_environment(B3)
    lo, _ = B3.bounds()
    lo2, hi2 = B2.bounds()
    lam = u * env.cap
    out = np.empty(replicas, np.int64)
    for rep in range(replicas):
        s = np.uint64(stream_state(seed, rep))
        s2, n = _poisson(s, lam)
        s = np.uint64(s2)
        _, total = _ri_excursion_kernel(
            s, int64(int(n)), env.bpts, env.start_cum, lo.astype(np.int64),
            int64(B3.side), int64(B3.d), env.xmap, env.h, env.row_cum,
            lo2.astype(np.int64), hi2.astype(np.int64))
        out[rep] = total
    return out


def rw_cycle_m(schedule: ExcursionSchedule, N: int, d: int) -> float:
    """Alternative excursion-rate estimator N^d / mean cycle duration.

    A cycle runs from one return R_k to the next; its empirical mean
    estimates the stationary expected excursion duration, so N^d over it
    estimates the same rate as the relative capacity of B2 in B3.
    """
    if schedule.count < 2:
        raise ValueError("need at least two returns to form a cycle")
    return N**d / float(np.mean(np.diff(schedule.returns)))


@dataclass(frozen=True)
class ConcentrationReport:
    mean: float
    target: float
    eps: np.ndarray
    tail: np.ndarray        # empirical P(|X - target| > eps * target)
    replicas: int

    def describe(self) -> str:
        lines = [f"mean = {self.mean:.3f}, target = {self.target:.3f}, "
                 f"replicas = {self.replicas}"]
        for e, t in zip(self.eps, self.tail):
            lines.append(f"  eps = {e:.2f}: tail = {t:.4f}")
        return "\n".join(lines)


def concentration_report(samples, target: float, eps_grid=None) -> ConcentrationReport:
    """Empirical deviation tails of excursion counts around a target."""
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 1000:
        raise ValueError("need at least 1000 replicas for tail estimates")
    eps = np.asarray(eps_grid if eps_grid is not None else
                     [0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5])
    tail = np.array([float(np.mean(np.abs(samples - target) > e * target)) for e in eps])
    return ConcentrationReport(float(samples.mean()), target, eps, tail, len(samples))
