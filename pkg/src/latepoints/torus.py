"""Simple random walk on the torus (Z/NZ)^d: local times, late sets, cover time.

A walk of t steps from a uniform start is summarized by two per-site arrays:
the visit count up to time t (time 0 included) and the first hitting time
H_x (-1 while unhit).  Late sets at level alpha are read off the hitting
times at the integer horizon floor(u_N(alpha) N^d), and the field
alpha_x = H_x / (g(0) N^d log(N^d)) records the level at which each site
stops being late.

Traces are bit-reproducible functions of (N, d, seed, stream); the stream
index separates Monte Carlo replicas.
"""

from __future__ import annotations

import json
import math
import csv
from dataclasses import dataclass

import numpy as np
from numba import njit, uint64, int64

from .green import green_value

__all__ = [
    "TorusConfig",
    "LocalTimeField",
    "AlphaField",
    "LateSet",
    "run_walk",
    "u_scale",
    "late_set",
    "cover_time",
    "g0_for",
]

SITE_CAP = 10**9

_G0_CACHE: dict[int, float] = {}


def g0_for(d: int) -> float:
    if d not in _G0_CACHE:
        _G0_CACHE[d] = green_value((0,) * d)[0]
    return _G0_CACHE[d]


@dataclass(frozen=True)
class TorusConfig:
    """Everything that determines a trace."""

    N: int
    d: int
    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.d < 3:
            raise ValueError("d must be >= 3")
        if self.N**self.d > SITE_CAP:
            raise MemoryError(f"N^d = {self.N**self.d} exceeds the site cap {SITE_CAP}")

    @property
    def sites(self) -> int:
        return self.N**self.d


_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True, inline="always")
def _sm64(s):
    s = (s + uint64(0x9E3779B97F4A7C15)) & uint64(0xFFFFFFFFFFFFFFFF)
    z = s
    z = ((z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)) & uint64(0xFFFFFFFFFFFFFFFF)
    z = ((z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)) & uint64(0xFFFFFFFFFFFFFFFF)
    return s, z ^ (z >> uint64(31))


def stream_state(seed: int, stream: int) -> np.uint64:
    """Derive an independent counter-RNG state for one replica stream."""
    s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    t = np.uint64((stream * 0x9E3779B97F4A7C15 + 0x243F6A8885A308D3) & 0xFFFFFFFFFFFFFFFF)
    s = np.uint64((int(s) ^ int(t)) & 0xFFFFFFFFFFFFFFFF)
    for _ in range(3):
        # jitted helpers hand back Python ints; re-wrap to keep uint64 dispatch
        s = np.uint64(_sm64(s)[1])
    return s


@njit(cache=True)
def _uniform_below(s, n):
    """Unbiased draw in [0, n) by rejection."""
    n = uint64(n)
    lim = n * (uint64(0xFFFFFFFFFFFFFFFF) // n)
    while True:
        s, z = _sm64(s)
        if z < lim:
            return s, z % n


_SIX20 = uint64(6) ** uint64(20)


@njit(cache=True)
def _walk_d3(nsteps, pos, visited, first_hit, counts, use_counts, t0, N, rstate, stop_covered, remaining):
    """d = 3 hot loop; 20 direction draws per 64-bit word."""
    x, y, zc = pos[0], pos[1], pos[2]
    NN = N * N
    t = t0
    flat = x * NN + y * N + zc
    s = rstate
    nrej = _SIX20 * (uint64(0xFFFFFFFFFFFFFFFF) // _SIX20)
    overflow = False
    i = int64(0)
    while i < nsteps:
        while True:
            s, z = _sm64(s)
            if z < nrej:
                break
        z = z % _SIX20
        for _ in range(20):
            if i >= nsteps:
                break
            r = z % uint64(6)
            z //= uint64(6)
            if r < uint64(2):
                x += int64(2 * r) - 1
                if x == N:
                    x = 0
                elif x < 0:
                    x = N - 1
            elif r < uint64(4):
                y += int64(2 * (r - 2)) - 1
                if y == N:
                    y = 0
                elif y < 0:
                    y = N - 1
            else:
                zc += int64(2 * (r - 4)) - 1
                if zc == N:
                    zc = 0
                elif zc < 0:
                    zc = N - 1
            flat = x * NN + y * N + zc
            t += 1
            i += 1
            w = flat >> 3
            b = np.uint8(1 << (flat & 7))
            if not (visited[w] & b):
                visited[w] |= b
                first_hit[flat] = t
                remaining -= 1
            if use_counts:
                if counts[flat] == uint64(0xFFFFFFFF):
                    overflow = True
                else:
                    counts[flat] += 1
            if stop_covered and remaining == 0:
                pos[0], pos[1], pos[2] = x, y, zc
                return t, s, remaining, overflow
    pos[0], pos[1], pos[2] = x, y, zc
    return t, s, remaining, overflow


@njit(cache=True)
def _walk_generic(nsteps, pos, visited, first_hit, counts, use_counts, t0, N, d, rstate, stop_covered, remaining):
    """Any d >= 3; one rejection-sampled direction draw per step."""
    t = t0
    s = rstate
    flat = int64(0)
    for k in range(d):
        flat = flat * N + pos[k]
    two_d = uint64(2 * d)
    lim = two_d * (uint64(0xFFFFFFFFFFFFFFFF) // two_d)
    overflow = False
    for _ in range(nsteps):
        while True:
            s, z = _sm64(s)
            if z < lim:
                break
        r = z % two_d
        k = int64(r // uint64(2))
        step = int64(2 * (r % uint64(2))) - 1
        c = pos[k] + step
        if c == N:
            c = 0
        elif c < 0:
            c = N - 1
        pos[k] = c
        flat = int64(0)
        for j in range(d):
            flat = flat * N + pos[j]
        t += 1
        w = flat >> 3
        b = np.uint8(1 << (flat & 7))
        if not (visited[w] & b):
            visited[w] |= b
            first_hit[flat] = t
            remaining -= 1
        if use_counts:
            if counts[flat] == uint64(0xFFFFFFFF):
                overflow = True
            else:
                counts[flat] += 1
        if stop_covered and remaining == 0:
            return t, s, remaining, overflow
    return t, s, remaining, overflow


@dataclass
class LocalTimeField:
    """Per-site visit counts of one trace; includes the time-0 position."""

    counts: np.ndarray | None
    steps: int
    config: TorusConfig
    overflow: bool = False

    def total(self) -> int:
        if self.counts is None:
            raise ValueError("trace was run without count recording")
        return int(self.counts.sum())


@dataclass
class AlphaField:
    """First hitting times and the level alpha_x at which each site is reached."""

    first_hit: np.ndarray  # int64, -1 while unhit within the horizon
    horizon: int
    config: TorusConfig
    start: int  # flat index of the time-0 site

    def hit_all(self) -> bool:
        return bool(np.all(self.first_hit >= 0))

    def alpha_x(self, g0: float | None = None) -> np.ndarray:
        """alpha_x = H_x / (g(0) N^d log(N^d)); unhit sites get +inf."""
        cfg = self.config
        g0 = g0 if g0 is not None else g0_for(cfg.d)
        scale = g0 * cfg.sites * math.log(cfg.sites)
        out = self.first_hit / scale
        out[self.first_hit < 0] = np.inf
        return out

    def cover_time(self) -> int:
        if not self.hit_all():
            raise ValueError("trace horizon ended before covering the torus")
        return int(self.first_hit.max())

    def to_binary(self, path_bin, path_json) -> None:
        self.first_hit.astype("<i8").tofile(path_bin)
        cfg = self.config
        with open(path_json, "w") as f:
            json.dump(
                {"N": cfg.N, "d": cfg.d, "seed": cfg.seed, "stream": cfg.stream,
                 "horizon": self.horizon, "g0": g0_for(cfg.d)},
                f, sort_keys=True)


@dataclass(frozen=True)
class LateSet:
    """Sites of F unvisited at time floor(u N^d)."""

    alpha: float
    u: float
    members: np.ndarray  # flat indices, sorted
    F_size: int
    config: TorusConfig

    def __len__(self) -> int:
        return len(self.members)

    def coords(self) -> np.ndarray:
        cfg = self.config
        return np.stack(np.unravel_index(self.members, (cfg.N,) * cfg.d), axis=1)

    def to_csv(self, path) -> None:
        cfg = self.config
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow([f"# N={cfg.N} d={cfg.d} alpha={self.alpha} u={self.u} "
                        f"seed={cfg.seed} stream={cfg.stream}"])
            w.writerow([f"x{i + 1}" for i in range(cfg.d)])
            for row in self.coords():
                w.writerow([int(c) for c in row])


def u_scale(alpha: float, cardF: int, g0: float) -> float:
    """Occupation level u_F(alpha) = alpha g(0) log|F|."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if cardF < 2:
        raise ValueError("|F| must be >= 2")
    return alpha * g0 * math.log(cardF)


def _start_site(config: TorusConfig) -> tuple[np.ndarray, np.uint64]:
    s = stream_state(config.seed, config.stream)
    s, flat = _uniform_below(s, uint64(config.sites))
    pos = np.array(np.unravel_index(int(flat), (config.N,) * config.d), dtype=np.int64)
    return pos, np.uint64(s)


def _run_kernel(config: TorusConfig, horizon: int, with_counts: bool, stop_covered: bool,
                max_steps: int | None = None):
    sites = config.sites
    pos, s = _start_site(config)
    visited = np.zeros((sites + 7) // 8, np.uint8)
    first_hit = np.full(sites, -1, np.int64)
    counts = np.zeros(sites if with_counts else 1, np.uint32)
    flat0 = int(np.ravel_multi_index(tuple(pos), (config.N,) * config.d))
    visited[flat0 >> 3] |= np.uint8(1 << (flat0 & 7))
    first_hit[flat0] = 0
    if with_counts:
        counts[flat0] = 1
    remaining = sites - 1
    if config.d == 3:
        t, s, remaining, overflow = _walk_d3(
            int64(horizon), pos, visited, first_hit, counts, with_counts,
            int64(0), int64(config.N), s, stop_covered, int64(remaining))
    else:
        t, s, remaining, overflow = _walk_generic(
            int64(horizon), pos, visited, first_hit, counts, with_counts,
            int64(0), int64(config.N), int64(config.d), s, stop_covered, int64(remaining))
    return int(t), first_hit, (counts if with_counts else None), bool(overflow), flat0, int(remaining)


def run_walk(config: TorusConfig, horizon_steps: int, with_counts: bool = False) -> tuple[LocalTimeField, AlphaField]:
    """Run one trace for a fixed number of steps from a uniform start."""
    if horizon_steps < 0:
        raise ValueError("horizonSteps must be >= 0")
    t, first_hit, counts, overflow, flat0, _ = _run_kernel(
        config, horizon_steps, with_counts, stop_covered=False)
    field = LocalTimeField(counts, t, config, overflow)
    return field, AlphaField(first_hit, t, config, flat0)


def late_set(alpha_field: AlphaField, alpha: float, g0: float | None = None,
             F: np.ndarray | None = None) -> LateSet:
    """Sites of F not yet visited at time floor(u_F(alpha) N^d)."""
    cfg = alpha_field.config
    g0 = g0 if g0 is not None else g0_for(cfg.d)
    cardF = cfg.sites if F is None else len(F)
    u = u_scale(alpha, cardF, g0)
    threshold = math.floor(u * cfg.sites)
    if threshold > alpha_field.horizon:
        raise ValueError(
            f"late set at alpha={alpha} needs the trace up to step {threshold}, "
            f"but the horizon is {alpha_field.horizon}")
    fh = alpha_field.first_hit if F is None else alpha_field.first_hit[F]
    late = (fh < 0) | (fh > threshold)
    idx = np.flatnonzero(late) if F is None else np.asarray(F)[late]
    return LateSet(alpha, u, idx.astype(np.int64), cardF, cfg)


@njit(cache=True)
def _walk_trace(nsteps, pos, N, d, rstate, out):
    """Record the flat index of every step (same stepping as _walk_generic)."""
    s = rstate
    two_d = uint64(2 * d)
    lim = two_d * (uint64(0xFFFFFFFFFFFFFFFF) // two_d)
    for i in range(nsteps):
        while True:
            s, z = _sm64(s)
            if z < lim:
                break
        r = z % two_d
        k = int64(r // uint64(2))
        c = pos[k] + int64(2 * (r % uint64(2))) - 1
        if c == N:
            c = 0
        elif c < 0:
            c = N - 1
        pos[k] = c
        flat = int64(0)
        for j in range(d):
            flat = flat * N + pos[j]
        out[i + 1] = flat
    return s


def run_walk_trace(config: TorusConfig, horizon_steps: int) -> np.ndarray:
    """Full trace of flat positions, length horizon_steps + 1.

    Retains every position, so it is meant for excursion decompositions at
    moderate horizons; the stepping differs from run_walk's d = 3 fast path
    only in RNG draw batching, not in law.
    """
    if horizon_steps < 0:
        raise ValueError("horizonSteps must be >= 0")
    if (horizon_steps + 1) * 8 > 8 * 10**9:
        raise MemoryError("trace too long to retain")
    pos, s = _start_site(config)
    out = np.empty(horizon_steps + 1, np.int64)
    out[0] = int(np.ravel_multi_index(tuple(pos), (config.N,) * config.d))
    _walk_trace(int64(horizon_steps), pos, int64(config.N), int64(config.d), s, out)
    return out


def cover_time(config: TorusConfig, g0: float | None = None) -> int:
    """First time every site has been visited."""
    g0 = g0 if g0 is not None else g0_for(config.d)
    safety = int(100 * g0 * config.sites * math.log(config.sites)) + 1
    t, first_hit, _, _, _, remaining = _run_kernel(
        config, safety, with_counts=False, stop_covered=True)
    if remaining > 0:
        raise RuntimeError(
            f"walk failed to cover the torus within the safety horizon {safety}")
    return t
