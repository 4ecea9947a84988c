"""Phase-transition statistics of late/vacant site sets on the torus.

Counts of neighbor pairs and of general pattern translates, independent
comparison fields (site Bernoulli and pattern Bernoulli, monotone in alpha
under shared uniform marks), Chen-Stein b1/b2 bounds, separation checks,
and the two distributional tests: the exponential law of the last-point
heights and the Poisson point process limit of the rescaled late set.

Site sets live on the torus (Z/NZ)^d and are passed as flat row-major
indices; pattern shapes are finite subsets of Z^d in canonical form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .capacity import capacity
from .geometry import Box, FiniteSet, canonical_shape
from .green import GreenTable, green_table
from .torus import g0_for, stream_state, u_scale

__all__ = [
    "PatternShape",
    "PatternField",
    "neighbor_pair_shapes",
    "double_points",
    "pattern_count",
    "pattern_count_classes",
    "bernoulli_field",
    "enumerate_patterns",
    "estimate_pf_alpha",
    "build_pattern_bernoulli",
    "chen_stein_bounds",
    "separation_check",
    "exp_law_pool",
    "exp_law_test",
    "poisson_pp_test",
    "scaling_fit",
    "isolation_radius",
]


def isolation_radius(cardF: int, d: int) -> float:
    """R_F = log(|F|)^(1/(d-2)), the pattern neighborhood radius."""
    return math.log(cardF) ** (1.0 / (d - 2))


@dataclass(frozen=True)
class PatternShape:
    """A finite pattern in canonical position with its capacity data."""

    shape: FiniteSet
    cap: float
    alphaStar: float

    @staticmethod
    def of(points, table: GreenTable | None = None) -> "PatternShape":
        return PatternShape._make(canonical_shape(points), table)

    @staticmethod
    def oriented(points, table: GreenTable | None = None) -> "PatternShape":
        """Keep the given orientation (translated to min corner 0) as is."""
        fs = FiniteSet.of(points)
        arr = np.asarray(fs.points, np.int64)
        return PatternShape._make(
            FiniteSet.of((arr - arr.min(axis=0)).tolist(), fs.d), table)

    @staticmethod
    def _make(fs: FiniteSet, table: GreenTable | None) -> "PatternShape":
        res = capacity(fs, table)
        g0 = g0_for(fs.d)
        return PatternShape(fs, res.cap, 1.0 / (g0 * res.cap))

    @property
    def d(self) -> int:
        return self.shape.d

    def diameter(self) -> int:
        return self.shape.diameter()


def neighbor_pair_shapes(d: int, table: GreenTable | None = None) -> list[PatternShape]:
    """The d axis-aligned neighbor pairs {0, e_i}."""
    out = []
    for i in range(d):
        e = tuple(1 if k == i else 0 for k in range(d))
        out.append(PatternShape.oriented((tuple([0] * d), e), table))
    return out


def _occupancy(flat: np.ndarray, N: int, d: int) -> np.ndarray:
    occ = np.zeros((N,) * d, dtype=bool)
    occ.reshape(-1)[np.asarray(flat, dtype=np.int64)] = True
    return occ


def pattern_count(flat: np.ndarray, N: int, d: int, shape: PatternShape) -> int:
    """Number of translates x with x + K inside the set, torus wraparound."""
    if shape.d != d:
        raise ValueError("shape dimension does not match the torus")
    if shape.diameter() >= N:
        raise ValueError("shape diameter must be below N on the torus")
    occ = _occupancy(flat, N, d)
    hit = np.ones_like(occ)
    for p in shape.shape.points:
        hit &= np.roll(occ, tuple(-c for c in p), axis=tuple(range(d)))
    return int(hit.sum())


def pattern_count_classes(flat: np.ndarray, N: int, d: int,
                          shape: PatternShape,
                          table: GreenTable | None = None) -> int:
    """Translate counts aggregated over the symmetry images of a shape."""
    from .geometry import symmetry_images
    total = 0
    for img in symmetry_images(shape.shape):
        total += pattern_count(flat, N, d, PatternShape.oriented(img.points, table))
    return total


def double_points(flat: np.ndarray, N: int, d: int) -> int:
    """Number of unordered neighbor pairs inside the set (torus edges)."""
    occ = _occupancy(flat, N, d)
    total = 0
    for i in range(d):
        total += int(np.sum(occ & np.roll(occ, -1, axis=i)))
    return total


class PatternField:
    """Union of shape placements with per-placement uniform marks.

    Each shape s carries an array of i.i.d. uniform marks over the N^d
    anchor sites, keyed by (seed, shape index); realize(p) places shape s at
    every anchor whose mark is at most p[s].  Realizations with smaller p
    are subsets of those with larger p, which gives the monotone coupling in
    alpha when p decreases in alpha.
    """

    def __init__(self, shapes: list[PatternShape], N: int, d: int, seed: int):
        for s in shapes:
            if s.diameter() >= N:
                raise ValueError("shape diameter must be below N on the torus")
        self.shapes = list(shapes)
        self.N = N
        self.d = d
        self.seed = seed
        self.marks = [
            np.random.default_rng(int(np.uint64(stream_state(seed ^ 0xBE57F1E1D, i))))
            .random(N**d).reshape((N,) * d)
            for i in range(len(shapes))
        ]

    def realize(self, p: list[float]) -> np.ndarray:
        """Flat indices of the union set at the given per-shape levels."""
        if len(p) != len(self.shapes):
            raise ValueError("one level per shape required")
        occ = np.zeros((self.N,) * self.d, dtype=bool)
        axes = tuple(range(self.d))
        for s, m, pv in zip(self.shapes, self.marks, p):
            sel = m <= pv
            for pt in s.shape.points:
                occ |= np.roll(sel, pt, axis=axes)
        return np.flatnonzero(occ.reshape(-1))


def bernoulli_field(N: int, d: int, seed: int,
                    table: GreenTable | None = None) -> PatternField:
    """Site Bernoulli comparison field: a singleton-only pattern field."""
    single = PatternShape.of((tuple([0] * d),), table)
    return PatternField([single], N, d, seed)


def enumerate_patterns(d: int, alpha_star_floor: float,
                       diameter_cap: float | None = None,
                       table: GreenTable | None = None) -> list[PatternShape]:
    """All symmetry classes with alphaStar above the floor.

    Capacity is monotone under inclusion, so the search grows qualifying
    shapes one site at a time and prunes as soon as the capacity crosses
    1/(g(0) floor); any superset of a pruned shape is also above it.
    """
    if alpha_star_floor <= 0.5 and diameter_cap is None:
        raise ValueError(
            "alphaStarFloor <= 1/2 admits pairs at every distance; "
            "a diameter cap is required")
    g0 = g0_for(d)
    cap_max = 1.0 / (g0 * alpha_star_floor)
    if diameter_cap is None:
        # pairs qualify iff g(x) > g(0) (2 floor - 1); bound the search radius
        # by the point where the capacity of a pair reaches cap_max
        r = 2
        while 2.0 / (g0 + _pair_g(d, r, table)) < cap_max:
            r += 1
        diameter_cap = r + 1
    rad = int(diameter_cap)
    if table is None:
        table = green_table(d, 2 * rad + 2)
    found: dict[tuple, PatternShape] = {}
    origin = tuple([0] * d)
    frontier = [(origin,)]
    found[(origin,)] = PatternShape.of((origin,), table)
    offsets = [tuple(p) for p in Box(origin, 2 * rad + 1).points() if any(p)]
    while frontier:
        nxt = []
        for pts in frontier:
            arr = np.asarray(pts, np.int64)
            for off in offsets:
                if off in pts:
                    continue
                ext = np.vstack([arr, [off]])
                spread = ext.max(axis=0) - ext.min(axis=0)
                if spread.max() + 1 > diameter_cap:
                    continue
                fs = canonical_shape(pts + (off,))
                key = fs.points
                if key in found:
                    continue
                c = capacity(fs, table)
                if c.cap < cap_max:
                    found[key] = PatternShape(fs, c.cap, 1.0 / (g0 * c.cap))
                    nxt.append(key)
                else:
                    found[key] = None  # pruned; supersets cannot qualify
        frontier = nxt
    return sorted((p for p in found.values() if p is not None),
                  key=lambda p: (len(p.shape), p.shape.points))


def _pair_g(d: int, r: int, table: GreenTable | None):
    x = tuple([r] + [0] * (d - 1))
    if table is not None and table.covers(x):
        return table.g(x)
    from .green import green_value, wide_params
    return green_value(x, wide_params(0), d)[0]


@dataclass(frozen=True)
class PFEstimate:
    """Isolated-occurrence probability with its closed-form brackets."""

    p_hat: float
    se: float
    upper: float
    lower: float
    replicas: int

    def within_brackets(self, z: float = 3.0) -> bool:
        return (self.p_hat <= self.upper + z * self.se
                and self.p_hat >= max(self.lower, 0.0) - z * self.se)


def estimate_pf_alpha(shape: PatternShape, N: int, alpha: float, replicas: int,
                      seed: int, model: str = "walk",
                      table: GreenTable | None = None) -> PFEstimate:
    """MC estimate of p^alpha(K) = P(late set cap Q(K, R_F) = K).

    The closed-form interlacement brackets are
        upper = |F|^(-alpha g(0) cap(K)),
        lower = upper - sum over x in Q(K, R_F) minus K of
                |F|^(-alpha g(0) cap(K + {x})).
    """
    d = shape.d
    cardF = N**d
    g0 = g0_for(d)
    u = u_scale(alpha, cardF, g0)
    R = int(math.ceil(isolation_radius(cardF, d)))
    kpts = np.asarray(shape.shape.points, np.int64)
    lo = kpts.min(axis=0) - R
    hi = kpts.max(axis=0) + R
    side = int((hi - lo).max()) + 1
    if side >= N:
        raise ValueError("pattern neighborhood does not fit in the domain")
    hood = np.asarray(np.meshgrid(*[np.arange(l, h + 1) for l, h in zip(lo, hi)],
                                  indexing="ij")).reshape(d, -1).T
    kset = {tuple(int(c) for c in p) for p in kpts}
    others = [tuple(int(c) for c in p) for p in hood
              if tuple(int(c) for c in p) not in kset]
    if table is None:
        table = green_table(d, 2 * (R + shape.diameter()) + 3)
    upper = math.exp(-u * shape.cap)
    defect = 0.0
    for x in others:
        c = capacity(FiniteSet.of(tuple(kset) + (x,)), table).cap
        defect += math.exp(-u * c)
    lower = upper - defect
    hits = 0
    if model == "walk":
        from .torus import TorusConfig, late_set, run_walk
        horizon = int(math.floor(u * cardF)) + 1
        for rep in range(replicas):
            cfg = TorusConfig(N=N, d=d, seed=seed, stream=rep)
            _, afield = run_walk(cfg, horizon)
            ls = set(late_set(afield, alpha, g0).members.tolist())
            ok = all(_flat_mod(p, N, d) in ls for p in kset)
            if ok:
                ok = all(_flat_mod(x, N, d) not in ls for x in others)
            hits += ok
    elif model == "ri":
        from .interlacements import build_environment, sample_ri
        box = Box(tuple([0] * d), side + 2 if (side + 2) % 2 == 1 else side + 3)
        env = build_environment(box, table)
        blo, _ = box.bounds()
        for rep in range(replicas):
            sample = sample_ri(box, u, seed, rep, env)
            vac = sample.vacant_mask()
            ok = all(vac[_flat_box(p, blo, box.side, d)] for p in kset)
            if ok:
                ok = all(not vac[_flat_box(x, blo, box.side, d)] for x in others)
            hits += ok
    else:
        raise ValueError("model must be 'walk' or 'ri'")
    p_hat = hits / replicas
    se = math.sqrt(max(p_hat * (1 - p_hat), 1.0 / replicas) / replicas)
    return PFEstimate(p_hat, se, upper, lower, replicas)


def _flat_mod(p, N: int, d: int) -> int:
    idx = 0
    for k in range(d):
        idx = idx * N + (int(p[k]) % N)
    return idx


def _flat_box(p, lo, side: int, d: int) -> int:
    idx = 0
    for k in range(d):
        idx = idx * side + (int(p[k]) - int(lo[k]))
    return idx


def build_pattern_bernoulli(shapes: list[PatternShape], p: list[float],
                            N: int, d: int, seed: int) -> tuple[PatternField, np.ndarray]:
    """Pattern Bernoulli comparison set: the field and one realization."""
    field = PatternField(shapes, N, d, seed)
    return field, field.realize(p)


@dataclass(frozen=True)
class ChenSteinReport:
    b1: float
    b2: float
    bound: float
    alpha_sup: float
    d_eps_term: float       # caller-supplied d_eps |S|^2 contribution

    def astuple(self):
        return self.b1, self.b2, self.bound


def chen_stein_bounds(alpha: float, epsilon: float, N: int, d: int,
                      R: int | None = None, table: GreenTable | None = None,
                      d_eps_term: float = 0.0) -> ChenSteinReport:
    """Chen-Stein b1/b2 for the singleton late field over the torus.

    b1 = |F| |N_x| |F|^(-2 alpha'),  with N_x = Q(x, R);
    b2 = |F| sum over y in Q(0,R), y != 0 of |F|^(-alpha' g(0) cap({0,y}));
    the returned bound is 400 sup over alpha' in {alpha - 2 epsilon, alpha}
    of (b1 + b2), plus the caller-supplied coupling-distance term.
    """
    cardF = N**d
    if R is None:
        R = int(math.ceil(isolation_radius(cardF, d)))
    if table is None or not table.covers(tuple([R] + [0] * (d - 1))):
        table = green_table(d, R + 1)
    g0 = g0_for(d)
    offsets = np.asarray(np.meshgrid(*[np.arange(-R, R + 1)] * d,
                                     indexing="ij")).reshape(d, -1).T
    caps = []
    for off in offsets:
        if not np.any(off):
            continue
        caps.append(2.0 / (g0 + table.g(off)))
    caps = np.asarray(caps)
    n_hood = min((2 * R + 1)**d, cardF)
    logF = math.log(cardF)
    best = -1.0
    picked = (0.0, 0.0, alpha)
    for ap in (alpha - 2 * epsilon, alpha):
        b1 = cardF * n_hood * math.exp(-2 * ap * logF)
        b2 = cardF * float(np.sum(np.exp(-ap * g0 * caps * logF)))
        if b1 + b2 > best:
            best = b1 + b2
            picked = (b1, b2, ap)
    return ChenSteinReport(picked[0], picked[1], 400.0 * best + d_eps_term,
                           picked[2], d_eps_term)


def separation_check(flat: np.ndarray, N: int, d: int, R: int,
                     table: GreenTable | None = None) -> np.ndarray:
    """Sites x whose R-neighborhood trace is not an admissible pattern.

    For each x in the set, S cap Q(x, R) must have diameter at most R_F and
    capacity at most 2/g(0); violators are returned as flat indices.
    """
    g0 = g0_for(d)
    cardF = N**d
    rf = isolation_radius(cardF, d)
    occ = _occupancy(flat, N, d)
    coords = np.stack(np.unravel_index(np.asarray(flat, np.int64), (N,) * d), axis=1)
    if table is None:
        table = green_table(d, 2 * min(R, int(rf) + 1) + 3)
    offsets = np.asarray(np.meshgrid(*[np.arange(-R, R + 1)] * d,
                                     indexing="ij")).reshape(d, -1).T
    bad = []
    for x, fx in zip(coords, np.asarray(flat, np.int64)):
        nbhd = (x + offsets) % N
        inset = occ[tuple(nbhd.T)]
        trace = offsets[inset]
        if len(trace) == 1:
            continue
        spread = trace.max(axis=0) - trace.min(axis=0)
        if spread.max() + 1 > rf:
            bad.append(fx)
            continue
        cap = capacity(FiniteSet.of([tuple(p) for p in trace]), table).cap
        if cap > 2.0 / g0:
            bad.append(fx)
    return np.asarray(bad, np.int64)


def exp_law_pool(alpha_values: np.ndarray, flat: np.ndarray, N: int, d: int,
                 alpha_star: float, R: int) -> np.ndarray:
    """Samples (alpha_x - alpha_star) d log N over 2R-isolated late points.

    flat indexes the late set at level alpha_star; alpha_values are the
    per-site heights alpha_x aligned with flat.  Points whose 2R torus
    neighborhood contains another late point are excluded.
    """
    flat = np.asarray(flat, np.int64)
    alpha_values = np.asarray(alpha_values, np.float64)
    if len(flat) != len(alpha_values):
        raise ValueError("one alpha value per late point required")
    occ = _occupancy(flat, N, d)
    coords = np.stack(np.unravel_index(flat, (N,) * d), axis=1)
    offsets = np.asarray(np.meshgrid(*[np.arange(-2 * R, 2 * R + 1)] * d,
                                     indexing="ij")).reshape(d, -1).T
    offsets = offsets[np.any(offsets != 0, axis=1)]
    out = []
    for x, a in zip(coords, alpha_values):
        if a < alpha_star:
            continue
        nbhd = (x + offsets) % N
        if not np.any(occ[tuple(nbhd.T)]):
            out.append((a - alpha_star) * d * math.log(N))
    return np.asarray(out)


@dataclass(frozen=True)
class KSReport:
    statistic: float
    pvalue: float
    count: int
    verdict: str            # pass | fail | inconclusive


def exp_law_test(samples: np.ndarray, threshold: float = 0.01,
                 min_count: int = 50) -> KSReport:
    """KS test of pooled height samples against the Exp(1) law."""
    samples = np.asarray(samples, np.float64)
    if len(samples) < min_count:
        return KSReport(float("nan"), float("nan"), len(samples), "inconclusive")
    res = sps.kstest(samples, "expon")
    verdict = "pass" if res.pvalue > threshold else "fail"
    return KSReport(float(res.statistic), float(res.pvalue), len(samples), verdict)


@dataclass(frozen=True)
class ChiSquareReport:
    statistic: float
    df: int
    pvalue: float
    cells: int
    lam_hat: float
    verdict: str


def poisson_pp_test(flat: np.ndarray, N: int, d: int, cells: int,
                    threshold: float = 0.01) -> ChiSquareReport:
    """Chi-square test of cell counts against a Poisson with matched mean.

    The torus splits into `cells` congruent boxes (cells must be m^d with m
    dividing N).  Count-value bins with expected frequency below 1 are
    merged into their neighbor; when fewer than 3 usable bins remain the
    test is degenerate and the cells themselves are merged by coarsening.
    One degree of freedom is spent on the estimated mean.
    """
    m = round(cells ** (1.0 / d))
    if m**d != cells:
        raise ValueError("cells must be a perfect d-th power")
    if N % m != 0:
        raise ValueError("the cell grid must divide N")
    coords = np.stack(np.unravel_index(np.asarray(flat, np.int64), (N,) * d), axis=1)

    def binned(m: int):
        ncell = m**d
        lam = len(flat) / ncell
        cell = np.zeros(len(coords), np.int64)
        w = N // m
        for k in range(d):
            cell = cell * m + coords[:, k] // w
        counts = np.bincount(cell, minlength=ncell)
        kmax = int(counts.max())
        obs = np.bincount(counts, minlength=kmax + 1).astype(np.float64)
        exp = ncell * sps.poisson.pmf(np.arange(kmax + 1), lam)
        exp[-1] = ncell * sps.poisson.sf(kmax - 1, lam)  # fold the tail in
        # merge low-expectation bins from both ends toward the middle
        o, e = list(obs), list(exp)
        i = 0
        while i < len(e) - 1:
            if e[i] < 1.0:
                e[i + 1] += e[i]
                o[i + 1] += o[i]
                del e[i], o[i]
            else:
                i += 1
        while len(e) > 1 and e[-1] < 1.0:
            e[-2] += e[-1]
            o[-2] += o[-1]
            del e[-1], o[-1]
        return np.asarray(o), np.asarray(e), ncell, lam

    o, e, ncell, lam_hat = binned(m)
    while len(e) < 3 and m > 1:
        m = m // 2 if m % 2 == 0 else 1
        o, e, ncell, lam_hat = binned(m)
    stat = float(np.sum((o - e) ** 2 / e))
    df = max(len(e) - 2, 1)
    p = float(sps.chi2.sf(stat, df))
    verdict = "pass" if p > threshold else "fail"
    return ChiSquareReport(stat, df, p, ncell, lam_hat, verdict)


@dataclass(frozen=True)
class ScalingReport:
    slope: float
    ci_low: float
    ci_high: float
    theory: float
    verdict: str            # supercritical | subcritical
    means: np.ndarray
    Ns: np.ndarray


def scaling_fit(counts_by_N: dict[int, np.ndarray], shape: PatternShape,
                alpha: float, d: int, seed: int = 0,
                bootstrap: int = 1000) -> ScalingReport:
    """Log-log fit of mean pattern counts against N with a bootstrap CI.

    The theoretical slope is d (1 - alpha / alphaStar(K)).  When the
    theoretical slope is negative and the empirical means head to zero the
    verdict is subcritical and no slope is fitted.
    """
    Ns = np.asarray(sorted(counts_by_N), np.float64)
    if len(Ns) < 3:
        raise ValueError("at least 3 values of N required")
    reps = [np.asarray(counts_by_N[int(n)], np.float64) for n in Ns]
    means = np.asarray([r.mean() for r in reps])
    theory = d * (1.0 - alpha / shape.alphaStar)
    if np.all(means == 0):
        raise ValueError("all counts are zero; use a smaller alpha")
    if theory < 0 and (np.any(means == 0) or means[-1] <= means[0]):
        return ScalingReport(float("nan"), float("nan"), float("nan"),
                             theory, "subcritical", means, Ns.astype(np.int64))
    if np.any(means == 0):
        raise ValueError("zero mean counts inside a supercritical fit")
    x = np.log(Ns)
    slope = float(np.polyfit(x, np.log(means), 1)[0])
    rng = np.random.default_rng(int(np.uint64(stream_state(seed ^ 0x5CA11E, 0))))
    boots = []
    for _ in range(bootstrap):
        bm = np.asarray([r[rng.integers(0, len(r), len(r))].mean() for r in reps])
        if np.any(bm <= 0):
            continue
        boots.append(np.polyfit(x, np.log(bm), 1)[0])
    if boots:
        lo, hi = np.percentile(boots, [2.5, 97.5])
    else:
        lo = hi = float("nan")
    verdict = "supercritical" if slope > 0 else "subcritical"
    return ScalingReport(slope, float(lo), float(hi), theory, verdict,
                         means, Ns.astype(np.int64))
