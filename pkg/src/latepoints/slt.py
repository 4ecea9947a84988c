"""Soft local times: sampling a Markov chain from a Poisson cloud, and back.

A chain with per-step transition densities g_i (with respect to a reference
measure mu on a finite state space) is read off a Poisson point set on
states x (0, infinity): at each step the surface

    G_{i+1}(z) = G_i(z) + xi_{i+1} g_{i+1}(z_i, z)

grows until it touches the lowest live point, which becomes the next state;
the marks xi are then i.i.d. Exp(1).  The inverse construction rebuilds a
Poisson cloud from a realized chain and marks, such that running the chain
forward on it reproduces the inputs; this underlies couplings that compare
the ranges of two chains through their G surfaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .torus import stream_state

__all__ = [
    "ChainSpec",
    "PoissonCloud",
    "SLTState",
    "forward_slt",
    "inverse_slt",
    "couple_chains",
]

TIE_TOLERANCE = 1e-14
ROW_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ChainSpec:
    """Finite-space inhomogeneous chain given by densities against mu.

    densities[i] is the matrix of step i+1 (rows: previous state, columns:
    next state); if fewer matrices than steps are supplied the last one
    repeats (homogeneous tail).  z0 is the deterministic start state.
    """

    mu: np.ndarray
    densities: tuple[np.ndarray, ...]
    z0: int

    @staticmethod
    def of(mu, densities, z0: int) -> "ChainSpec":
        mu = np.asarray(mu, dtype=np.float64)
        if np.any(mu <= 0):
            raise ValueError("mu must be strictly positive")
        mats = tuple(np.asarray(m, dtype=np.float64) for m in densities)
        n = len(mu)
        for i, m in enumerate(mats):
            if m.shape != (n, n):
                raise ValueError(f"density {i} has shape {m.shape}, expected {(n, n)}")
            if np.any(m < 0):
                raise ValueError(f"density {i} has negative entries")
            rows = m @ mu
            if np.max(np.abs(rows - 1.0)) > ROW_TOLERANCE:
                raise ValueError(
                    f"density {i} rows do not integrate to 1 against mu "
                    f"(max defect {np.max(np.abs(rows - 1.0)):.3e})")
        if not (0 <= z0 < n):
            raise ValueError("z0 out of range")
        return ChainSpec(mu, mats, z0)

    @property
    def n(self) -> int:
        return len(self.mu)

    def density(self, step: int) -> np.ndarray:
        """Matrix of the given 1-based step."""
        return self.densities[min(step - 1, len(self.densities) - 1)]

    def transition_matrix(self, step: int) -> np.ndarray:
        return self.density(step) * self.mu[None, :]

    @staticmethod
    def from_json(text: str) -> "ChainSpec":
        obj = json.loads(text)
        return ChainSpec.of(obj["mu"], obj["densities"], int(obj["initial"]))

    def to_json(self) -> str:
        return json.dumps({
            "states": list(range(self.n)),
            "mu": self.mu.tolist(),
            "densities": [m.tolist() for m in self.densities],
            "initial": self.z0,
        }, sort_keys=True)


class PoissonCloud:
    """Lazy Poisson point set on states x (0, infinity), intensity mu x dv.

    Per-state streams extend on demand; state z's substream is keyed by
    (seed, z) so realizations are reproducible.  A cloud may carry explicit
    lower points (from the inverse construction) followed by a lazy tail
    whose levels are offset upward.
    """

    def __init__(self, mu, seed: int, base_points=None, tail_offset=None):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.seed = seed
        n = len(self.mu)
        self._points = [np.asarray(base_points[z], dtype=np.float64) if base_points
                        else np.zeros(0) for z in range(n)]
        self._tail_offset = (np.asarray(tail_offset, dtype=np.float64)
                            if tail_offset is not None else np.zeros(n))
        self._tail_level = np.zeros(n)  # levels generated so far, pre-offset
        self._rngs = [np.random.default_rng(int(np.uint64(stream_state(seed ^ 0x51A7C0DE, z))))
                      for z in range(n)]

    def ensure_above(self, z: int, level: float) -> None:
        while len(self._points[z]) == 0 or self._points[z][-1] <= level:
            gaps = self._rngs[z].exponential(scale=1.0 / self.mu[z], size=64)
            new = self._tail_level[z] + np.cumsum(gaps)
            self._tail_level[z] = new[-1]
            self._points[z] = np.concatenate([self._points[z], new + self._tail_offset[z]])

    def point(self, z: int, index: int) -> float:
        while index >= len(self._points[z]):
            gaps = self._rngs[z].exponential(scale=1.0 / self.mu[z], size=64)
            new = self._tail_level[z] + np.cumsum(gaps)
            self._tail_level[z] = new[-1]
            self._points[z] = np.concatenate([self._points[z], new + self._tail_offset[z]])
        return float(self._points[z][index])


@dataclass
class SLTState:
    """Surface, consumption pointers and audit trail of one forward run."""

    G: np.ndarray
    next_index: np.ndarray            # per state, index of the lowest live point
    consumed: list[tuple[int, int, float]] = field(default_factory=list)
    ties: list[int] = field(default_factory=list)

    def check_invariants(self, cloud: PoissonCloud) -> None:
        for step, (z, v) in enumerate(
                (zz, vv) for (_, zz, vv) in self.consumed):
            if v > self.G[z] + 1e-9:
                raise AssertionError(
                    f"consumed point {step} at state {z} lies above the surface")
        for z in range(len(self.G)):
            live = cloud.point(z, int(self.next_index[z]))
            if live <= self.G[z] - 1e-12:
                raise AssertionError(f"live point below the surface at state {z}")


def forward_slt(spec: ChainSpec, cloud: PoissonCloud, steps: int):
    """Read the chain off the cloud; returns (states, xi, SLTState).

    states has length steps + 1 and begins at spec.z0.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    n = spec.n
    G = np.zeros(n)
    nxt = np.zeros(n, dtype=np.int64)
    chain = [spec.z0]
    xi = np.empty(steps)
    state = SLTState(G, nxt)
    for i in range(steps):
        grow = spec.density(i + 1)[chain[-1]]
        best = np.inf
        best_z = -1
        best_v = np.inf
        tie = False
        for z in range(n):
            if grow[z] <= 0.0:
                continue
            cloud.ensure_above(z, G[z])
            v = cloud.point(z, int(nxt[z]))
            cand = (v - G[z]) / grow[z]
            if cand < best - TIE_TOLERANCE * max(1.0, abs(best)):
                best, best_z, best_v, tie = cand, z, v, False
            elif cand <= best + TIE_TOLERANCE * max(1.0, abs(best)):
                # tie: keep the smaller (v, state) pair, flag the step
                tie = True
                if (v, z) < (best_v, best_z):
                    best, best_z, best_v = cand, z, v
        if best_z < 0:
            raise RuntimeError(f"no reachable state at step {i + 1}")
        if tie:
            state.ties.append(i + 1)
        G += best * grow
        state.consumed.append((i + 1, best_z, best_v))
        nxt[best_z] += 1
        xi[i] = best
        chain.append(best_z)
    return np.asarray(chain, dtype=np.int64), xi, state


def inverse_slt(chain, xi_hat, spec: ChainSpec, seed: int, T: int | None = None) -> PoissonCloud:
    """Rebuild a Poisson cloud that the forward construction maps to (chain, xi).

    The consumed points sit exactly on the surfaces G_i evaluated at the
    realized states; everything above the final surface is an independent
    fresh Poisson cloud shifted by G_T.
    """
    chain = np.asarray(chain, dtype=np.int64)
    xi_hat = np.asarray(xi_hat, dtype=np.float64)
    if T is None:
        T = len(xi_hat)
    if len(chain) != T + 1 or len(xi_hat) < T:
        raise ValueError("chain must have length T+1 and xi_hat length >= T")
    n = spec.n
    G = np.zeros(n)
    pts: list[list[float]] = [[] for _ in range(n)]
    for i in range(T):
        G = G + xi_hat[i] * spec.density(i + 1)[chain[i]]
        pts[chain[i + 1]].append(G[chain[i + 1]])
    base = [np.sort(np.asarray(p)) for p in pts]
    return PoissonCloud(spec.mu, seed, base_points=base, tail_offset=G.copy())


def surfaces(spec: ChainSpec, chain, xi) -> np.ndarray:
    """G_i for i = 0..T as rows, from realized states and marks."""
    chain = np.asarray(chain)
    xi = np.asarray(xi)
    T = len(xi)
    out = np.zeros((T + 1, spec.n))
    for i in range(T):
        out[i + 1] = out[i] + xi[i] * spec.density(i + 1)[chain[i]]
    return out


@dataclass(frozen=True)
class InclusionReport:
    p: int
    m: int
    n_: int
    lower_holds: bool        # Gtilde_p <= G_m pointwise
    upper_holds: bool        # G_m <= Gtilde_n pointwise
    range_lower: bool        # {Ztilde_1..p} subset {Z_1..m}
    range_upper: bool        # {Z_1..m} subset {Ztilde_1..n}


def couple_chains(chain, xi_hat, spec: ChainSpec, spec_tilde: ChainSpec, seed: int,
                  checks: list[tuple[int, int, int]] | None = None):
    """Drive the tilde chain through the cloud rebuilt from the given chain.

    Returns (chain_tilde, xi_tilde, reports).  For each requested (p, m, n)
    the report records whether the G-surface sandwich holds and whether the
    corresponding range inclusions hold; the implication sandwich => ranges
    is asserted, never its converse.
    """
    if not np.array_equal(spec.mu, spec_tilde.mu):
        raise ValueError("specs must share the reference measure")
    T = len(xi_hat)
    cloud = inverse_slt(chain, xi_hat, spec, seed, T)
    chain_t, xi_t, _ = forward_slt(spec_tilde, cloud, T)
    G = surfaces(spec, chain, xi_hat)
    Gt = surfaces(spec_tilde, chain_t, xi_t)
    reports = []
    for (p, m, n_) in checks or []:
        lower = bool(np.all(Gt[p] <= G[m] + 1e-12))
        upper = bool(np.all(G[m] <= Gt[n_] + 1e-12))
        rlow = set(chain_t[1:p + 1]) <= set(np.asarray(chain)[1:m + 1])
        rupp = set(np.asarray(chain)[1:m + 1]) <= set(chain_t[1:n_ + 1])
        if lower and not rlow:
            raise AssertionError(f"surface sandwich holds but lower range inclusion fails at {(p, m, n_)}")
        if upper and not rupp:
            raise AssertionError(f"surface sandwich holds but upper range inclusion fails at {(p, m, n_)}")
        reports.append(InclusionReport(p, m, n_, lower, upper, rlow, rupp))
    return chain_t, xi_t, reports
