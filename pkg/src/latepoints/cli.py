"""Command-line front end: experiments, reports and figures.

Every subcommand stamps its outputs with the digest of its canonical-JSON
config and the seed, so reruns with identical configs are byte identical.
`--config file.json` overrides flag values; `--check` turns property
verdicts into the exit code.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .capacity import alpha_star_neighbors, capacity, classify_admissible, relative_capacity
from .geometry import Box, DirichletRegion, FiniteSet, a_sets, k_sets
from .green import GreenParams, green_table, green_value, green_value_mp
from .report import SvgCanvas, StatsReport, config_digest, write_csv
from .torus import TorusConfig, g0_for, late_set, run_walk, run_walk_trace, u_scale

G0_TRUTH = {3: 1.516386059151978, 4: 1.2394671218484817}


def _apply_config(args: argparse.Namespace) -> None:
    if getattr(args, "config", None):
        with open(args.config) as f:
            for k, v in json.load(f).items():
                setattr(args, k.replace("-", "_"), v)


def _digest_of(args: argparse.Namespace, keys: list[str]) -> tuple[dict, str]:
    cfg = {k: getattr(args, k) for k in keys}
    cfg["command"] = args.command
    cfg["version"] = __version__
    return cfg, config_digest(cfg)


def _out(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def cmd_green(args) -> int:
    d = args.d
    if d not in (3, 4):
        print(f"warning: d={d} is outside the classification policy (d in {{3,4}}); "
              "plain values only", file=sys.stderr)
    cfg, dg = _digest_of(args, ["d", "radius", "extended", "refine"])
    params = GreenParams()
    if args.extended:
        val = green_value_mp((0,) * d, d, dps=60)
        print(f"g(0) d={d} (extended) = {val}")
        g0 = float(val)
    else:
        g0, err = green_value((0,) * d, params, d)
        print(f"g(0) d={d} = {g0:.15f}  (err estimate {err:.2e})")
    if args.refine:
        rp = params.refined()
        g0r, _ = green_value((0,) * d, rp, d)
        print(f"refined (h/2, 2M): g(0) = {g0r:.15f}, delta = {abs(g0r - g0):.2e}")
    if args.radius > 0:
        table = green_table(d, args.radius)
        path = _out(args, f"green_d{d}_r{args.radius}.csv")
        rows = [[d, ":".join(map(str, k)), repr(v), repr(e)]
                for k, (v, e) in sorted(table.values.items())]
        write_csv(path, ["d", "key", "value", "err"], rows, comment=f"digest={dg}")
        print(f"wrote {path}")
    if args.check:
        if d not in G0_TRUTH:
            print("error: --check requires d in {3,4}", file=sys.stderr)
            return 2
        tol = 1e-25 if args.extended else 1e-9
        ok = abs(g0 - G0_TRUTH[d]) < max(tol, 5e-16)
        print(f"check g(0): {'pass' if ok else 'FAIL'}")
        return 0 if ok else 1
    return 0


_NAMED_SETS = {}


def _named_set(name: str, d: int) -> FiniteSet:
    k1, k2 = k_sets(d)
    table = {"K1": k1, "K2": k2, "single": FiniteSet.of([(0,) * d]),
             "pair": FiniteSet.of([(0,) * d, (1,) + (0,) * (d - 1)])}
    if d == 3:
        for i, a in enumerate(a_sets(3), start=1):
            table[f"A{i}"] = a
    if name in table:
        return table[name]
    pts = [tuple(int(c) for c in p.split(":")) for p in name.split(",")]
    return FiniteSet.of(pts)


def cmd_cap(args) -> int:
    fs = _named_set(args.set, args.d)
    res = capacity(fs)
    cfg, dg = _digest_of(args, ["d", "set"])
    print(f"cap({args.set}) d={args.d} = {res.cap:.12f}  "
          f"alphaStar = {res.alphaStar:.12f}  err <= {res.errEstimate:.2e}")
    rep = StatsReport(cfg)
    rep.add("cap", res.cap, res.errEstimate)
    rep.add("alphaStar", res.alphaStar)
    rep.write(_out(args, f"cap_{args.set.replace(':', '_').replace(',', '-')}.json"))
    return 0


def cmd_classify(args) -> int:
    rep = classify_admissible(args.d)
    print(rep.describe())
    if args.check:
        min_margin = min(abs(c.margin) for c in rep.comparisons)
        if min_margin < 0.015:
            print(f"margin check: FAIL ({min_margin:.6f} < 0.015)")
            return 2
        print(f"margin check: pass (min |margin| = {min_margin:.6f})")
    return 0


def cmd_walk(args) -> int:
    cfg_d, dg = _digest_of(args, ["N", "d", "alpha", "seed", "stream"])
    cfg = TorusConfig(N=args.N, d=args.d, seed=args.seed, stream=args.stream)
    g0 = g0_for(args.d)
    u = u_scale(args.alpha, cfg.sites, g0)
    horizon = int(math.floor(u * cfg.sites))
    field, afield = run_walk(cfg, horizon)
    ls = late_set(afield, args.alpha, g0)
    print(f"N={args.N} d={args.d} alpha={args.alpha}: {len(ls)} late sites "
          f"after {horizon} steps (digest {dg})")
    path = _out(args, f"late_N{args.N}_a{args.alpha}_s{args.seed}.{args.stream}.csv")
    ls.to_csv(path)
    print(f"wrote {path}")
    return 0


def cmd_ri(args) -> int:
    from .interlacements import build_environment, vacancy_mc, vacant_probability
    cfg, dg = _digest_of(args, ["d", "side", "u", "replicas", "seed", "set"])
    d = args.d
    box = Box((0,) * d, args.side)
    env = build_environment(box)
    fs = _named_set(args.set, d)
    target = vacant_probability(fs, args.u)
    frac = vacancy_mc(box, fs.points, [args.u], args.replicas, args.seed, env)[0]
    se = math.sqrt(max(target * (1 - target), 1.0 / args.replicas) / args.replicas)
    z = (frac - target) / se
    print(f"P({args.set} vacant) at u={args.u}: MC {frac:.5f} vs exact {target:.5f} "
          f"(z = {z:+.2f}, {args.replicas} replicas)")
    rep = StatsReport(cfg)
    rep.add("vacant_mc", frac, se, args.replicas)
    rep.add("vacant_exact", target)
    rep.write(_out(args, f"ri_{args.set}_u{args.u}.json"))
    if args.check:
        return 0 if abs(z) <= 3.0 else 1
    return 0


def cmd_latepoints(args) -> int:
    if args.model == "walk":
        return cmd_walk(args)
    from .interlacements import late_set_ri
    cfg, dg = _digest_of(args, ["N", "d", "alpha", "seed", "stream", "model"])
    d = args.d
    side = args.N if args.N % 2 == 1 else args.N - 1
    box = Box((0,) * d, side)
    vac, sample = late_set_ri(box, args.alpha, args.seed, g0_for(d), args.stream)
    print(f"RI late set in a side-{side} box at alpha={args.alpha}: "
          f"{len(vac)} vacant sites ({sample.trajCount} trajectories, digest {dg})")
    lo, _ = box.bounds()
    coords = np.stack(np.unravel_index(vac, (side,) * d), axis=1) + lo
    path = _out(args, f"late_ri_N{side}_a{args.alpha}_s{args.seed}.{args.stream}.csv")
    write_csv(path, [f"x{i + 1}" for i in range(d)], coords.tolist(),
              comment=f"digest={dg} seed={args.seed}")
    print(f"wrote {path}")
    return 0


def cmd_phase(args) -> int:
    from .stats import double_points, neighbor_pair_shapes, scaling_fit
    cfg, dg = _digest_of(args, ["d", "alphas", "Ns", "replicas", "seed"])
    d = args.d
    g0 = g0_for(d)
    alphas = [float(a) for a in args.alphas.split(",")]
    Ns = [int(n) for n in args.Ns.split(",")]
    shape = neighbor_pair_shapes(d)[0]
    rows = []
    all_ok = True
    for alpha in alphas:
        counts = {}
        for N in Ns:
            cfgN = TorusConfig(N=N, d=d, seed=args.seed, stream=0)
            u = u_scale(alpha, N**d, g0)
            horizon = int(math.floor(u * N**d))
            per = np.empty(args.replicas, np.int64)
            for r in range(args.replicas):
                c = TorusConfig(N=N, d=d, seed=args.seed, stream=r)
                _, af = run_walk(c, horizon)
                ls = late_set(af, alpha, g0)
                per[r] = double_points(ls.members, N, d)
            counts[N] = per
            rows.append([alpha, N, repr(float(per.mean())),
                         repr(float(per.std(ddof=1) / math.sqrt(len(per)))),
                         args.replicas])
        fit = scaling_fit(counts, shape, alpha, d, seed=args.seed)
        theory = fit.theory
        if fit.verdict == "subcritical":
            ok = theory < 0 and counts[Ns[-1]].mean() < 0.5
            print(f"alpha={alpha}: subcritical (mean at N={Ns[-1]} is "
                  f"{counts[Ns[-1]].mean():.3f}, theory slope {theory:.3f}) "
                  f"{'pass' if ok else 'FAIL'}")
        else:
            ok = abs(fit.slope - theory) <= 0.3
            print(f"alpha={alpha}: slope {fit.slope:.3f} vs theory {theory:.3f} "
                  f"CI ({fit.ci_low:.3f}, {fit.ci_high:.3f}) "
                  f"{'pass' if ok else 'FAIL'}")
        all_ok = all_ok and ok
    path = _out(args, "phase.csv")
    write_csv(path, ["alpha", "N", "mean_D", "se", "replicas"], rows,
              comment=f"digest={dg} seed={args.seed}")
    print(f"wrote {path}")
    if args.check:
        return 0 if all_ok else 1
    return 0


def _axonometric(coords: np.ndarray, N: int, size: int):
    """Project 3D lattice points onto the canvas plane."""
    x, y, z = coords[:, 0], coords[:, 1], coords[:, 2]
    px = (x + 0.45 * z) / (N * 1.45) * (size - 20) + 10
    py = size - 10 - (y + 0.45 * z) / (N * 1.45) * (size - 20)
    return px, py


def cmd_figure1(args) -> int:
    from .stats import double_points
    cfg, dg = _digest_of(args, ["N", "d", "alpha", "seed", "stream"])
    N, d, alpha = args.N, args.d, args.alpha
    if d != 3:
        print("error: the figure is specific to d=3", file=sys.stderr)
        return 2
    g0 = g0_for(3)
    u = u_scale(alpha, N**d, g0)
    horizon = int(math.floor(u * N**d))
    cfgT = TorusConfig(N=N, d=3, seed=args.seed, stream=args.stream)
    _, afield = run_walk(cfgT, horizon)
    ls = late_set(afield, alpha, g0)
    lflat = ls.members
    lred = _red_mask(lflat, N, d)
    # matched Bernoulli panel at the idealized density |F|^-alpha
    p = float(N**d) ** (-alpha)
    rng = np.random.default_rng(int(args.seed) * 1000003 + int(args.stream))
    n_b = rng.binomial(N**d, p)
    bflat = np.sort(rng.choice(N**d, size=n_b, replace=False))
    bred = _red_mask(bflat, N, d)
    dl = double_points(lflat, N, d)
    db = double_points(bflat, N, d)
    print(f"late set: {len(lflat)} sites, {int(lred.sum())} red, D = {dl}")
    print(f"bernoulli: {len(bflat)} sites, {int(bred.sum())} red, D = {db}")
    size = 500
    svg = SvgCanvas(2 * size + 30, size + 20, title=f"late set vs bernoulli N={N}")
    svg.comment(f"digest={dg} seed={args.seed} stream={args.stream}")
    svg.rect(0, 0, 2 * size + 30, size + 20, "white")
    rows = []
    for panel, (flat, red) in enumerate([(lflat, lred), (bflat, bred)]):
        coords = np.stack(np.unravel_index(flat, (N,) * d), axis=1)
        px, py = _axonometric(coords, N, size)
        off = panel * (size + 30)
        for (x, y, z), cx, cy, r in zip(coords, px, py, red):
            svg.circle(off + cx, cy, 2.2 if r else 1.4, "red" if r else "black")
            rows.append([panel, int(x), int(y), int(z), int(r)])
    path_svg = _out(args, f"figure1_N{N}_a{alpha}_s{args.seed}.svg")
    svg.write(path_svg)
    path_csv = _out(args, f"figure1_N{N}_a{alpha}_s{args.seed}.csv")
    write_csv(path_csv, ["panel", "x", "y", "z", "red"], rows,
              comment=f"digest={dg} seed={args.seed}")
    print(f"wrote {path_svg} and {path_csv}")
    if args.check:
        return 0 if dl >= 1 and db == 0 else 1
    return 0


def _red_mask(flat: np.ndarray, N: int, d: int) -> np.ndarray:
    occ = np.zeros((N,) * d, dtype=bool)
    occ.reshape(-1)[flat] = True
    red = np.zeros_like(occ)
    for i in range(d):
        red |= occ & np.roll(occ, 1, axis=i)
        red |= occ & np.roll(occ, -1, axis=i)
    return red.reshape(-1)[flat]


def cmd_slt_demo(args) -> int:
    from .slt import ChainSpec, PoissonCloud, forward_slt, inverse_slt
    cfg, dg = _digest_of(args, ["states", "steps", "instances", "seed"])
    rng = np.random.default_rng(args.seed)
    n, T = args.states, args.steps
    failures = 0
    for inst in range(args.instances):
        mu = rng.uniform(0.5, 1.5, n)
        P = rng.uniform(0.1, 1.0, (n, n))
        P /= P.sum(axis=1, keepdims=True)
        spec = ChainSpec.of(mu, [P / mu[None, :]], int(rng.integers(n)))
        cloud = PoissonCloud(mu, int(rng.integers(2**31)))
        chain, xi, _ = forward_slt(spec, cloud, T)
        cloud2 = inverse_slt(chain, xi, spec, seed=int(rng.integers(2**31)))
        chain2, xi2, _ = forward_slt(spec, cloud2, T)
        if not (np.array_equal(chain, chain2)
                and np.allclose(xi, xi2, rtol=0, atol=1e-10)):
            failures += 1
    print(f"round-trip: {args.instances - failures}/{args.instances} exact")
    rep = StatsReport(cfg)
    rep.add("roundtrip_failures", failures, 0.0, args.instances)
    rep.write(_out(args, "slt_demo.json"))
    if args.check:
        return 0 if failures == 0 else 1
    return 0


def cmd_excursions(args) -> int:
    from .excursions import (excursion_count_rw, excursion_counts_ri,
                             excursion_decompose, lift_torus_trace, rw_cycle_m)
    cfg, dg = _digest_of(args, ["N", "d", "r2", "r3", "u", "replicas", "seed"])
    d = args.d
    B1 = Box((0,) * d, max(args.r2 - 2, 1))
    B2 = Box((0,) * d, args.r2)
    B3 = Box((0,) * d, args.r3)
    K = FiniteSet.of(B2.points())
    target = relative_capacity(K, DirichletRegion(B3)).cap
    samples = excursion_counts_ri(B2, B3, args.u, args.replicas, args.seed)
    mean = samples.mean()
    se = samples.std(ddof=1) / math.sqrt(len(samples))
    print(f"RI: mean N = {mean:.3f} vs u cap_B3(B2) = {args.u * target:.3f} "
          f"(se {se:.3f})")
    N = args.N
    horizon = int(args.u * N**d)
    cfgT = TorusConfig(N=N, d=d, seed=args.seed, stream=0)
    trace = lift_torus_trace(run_walk_trace(cfgT, horizon), N, d)
    sch = excursion_decompose(trace, B1, B2, B3)
    n_rw = excursion_count_rw(sch, args.u, N, d)
    m2 = rw_cycle_m(sch, N, d) if sch.count >= 2 else float("nan")
    print(f"RW: N = {n_rw} vs u M = {args.u * target:.3f}; "
          f"cycle estimator M' = {m2:.3f} vs M = {target:.3f}")
    path = _out(args, f"excursions_N{N}_u{args.u}.csv")
    sch.to_csv(path)
    rep = StatsReport(cfg)
    rep.add("ri_mean", mean, se, args.replicas)
    rep.add("target_uM", args.u * target)
    rep.add("rw_count", n_rw)
    rep.add("rw_cycle_M", m2)
    rep.write(_out(args, f"excursions_N{N}_u{args.u}.json"))
    print(f"wrote {path}")
    if args.check:
        ok = abs(mean - args.u * target) <= 3 * se
        return 0 if ok else 1
    return 0


def cmd_exp_law(args) -> int:
    from .stats import exp_law_pool, exp_law_test
    cfg, dg = _digest_of(args, ["N", "d", "seeds", "seed", "R"])
    N, d = args.N, args.d
    g0 = g0_for(d)
    table = green_table(d, 3)
    astar = alpha_star_neighbors(table)
    horizon = int(2.0 * g0 * math.log(N**d) * N**d)
    pool = []
    for s in range(args.seeds):
        cfgT = TorusConfig(N=N, d=d, seed=args.seed, stream=s)
        _, af = run_walk(cfgT, horizon)
        ax = af.alpha_x(g0)
        ls = late_set(af, astar, g0)
        vals = ax[ls.members]
        keep = np.isfinite(vals)
        pool.append(exp_law_pool(vals[keep], ls.members[keep], N, d, astar, args.R))
    pool = np.concatenate(pool)
    rep = exp_law_test(pool)
    print(f"exp law: n = {rep.count}, KS = {rep.statistic:.4f}, "
          f"p = {rep.pvalue:.4f} -> {rep.verdict}")
    out = StatsReport(cfg)
    out.add("ks_statistic", rep.statistic, 0.0, rep.count)
    out.add("ks_pvalue", rep.pvalue, 0.0, rep.count)
    out.write(_out(args, f"exp_law_N{N}.json"))
    if args.check:
        return 0 if rep.verdict == "pass" else 1
    return 0


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file overriding flag values")
    p.add_argument("--out", default="artifacts", help="output directory")
    p.add_argument("--check", action="store_true", help="exit nonzero on failed checks")
    p.add_argument("--jobs", type=int, default=os.cpu_count(),
                   help="worker count (replica-to-stream mapping is fixed)")
    p.add_argument("--seed", type=int, default=0)


def main(argv=None) -> int:
    threads = os.environ.get("LATEPOINTS_THREADS")
    if threads:
        os.environ.setdefault("NUMBA_NUM_THREADS", threads)
    ap = argparse.ArgumentParser(prog="latepoints",
                                 description="late points of random walks, at desk scale")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("green", help="lattice Green function values and tables")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--radius", type=int, default=0)
    p.add_argument("--extended", action="store_true")
    p.add_argument("--refine", action="store_true")
    _common(p)
    p.set_defaults(fn=cmd_green)

    p = sub.add_parser("cap", help="capacity of a finite set")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--set", default="K1",
                   help="K1|K2|A1..A8|single|pair or x:y:z,x:y:z,...")
    _common(p)
    p.set_defaults(fn=cmd_cap)

    p = sub.add_parser("classify", help="admissible-set classification")
    p.add_argument("--d", type=int, default=3)
    _common(p)
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("walk", help="torus walk late set")
    p.add_argument("--N", type=int, default=32)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--stream", type=int, default=0)
    _common(p)
    p.set_defaults(fn=cmd_walk)

    p = sub.add_parser("ri", help="interlacement vacancy Monte Carlo vs exact law")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--side", type=int, default=9)
    p.add_argument("--u", type=float, default=1.0)
    p.add_argument("--replicas", type=int, default=20000)
    p.add_argument("--set", default="K1")
    _common(p)
    p.set_defaults(fn=cmd_ri)

    p = sub.add_parser("latepoints", help="late/vacant set from either model")
    p.add_argument("--N", type=int, default=32)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--model", choices=["walk", "ri"], default="walk")
    _common(p)
    p.set_defaults(fn=cmd_latepoints)

    p = sub.add_parser("phase", help="pattern-count scaling across (N, alpha)")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--alphas", default="0.5,0.6,0.75")
    p.add_argument("--Ns", default="16,24,32,48")
    p.add_argument("--replicas", type=int, default=300)
    _common(p)
    p.set_defaults(fn=cmd_phase)

    p = sub.add_parser("figure1", help="late set vs Bernoulli panels (SVG + CSV)")
    p.add_argument("--N", type=int, default=400)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--stream", type=int, default=0)
    _common(p)
    p.set_defaults(fn=cmd_figure1)

    p = sub.add_parser("slt-demo", help="soft-local-time round-trip demo")
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--instances", type=int, default=200)
    _common(p)
    p.set_defaults(fn=cmd_slt_demo)

    p = sub.add_parser("excursions", help="excursion counts vs capacity estimators")
    p.add_argument("--N", type=int, default=32)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--r2", type=int, default=5)
    p.add_argument("--r3", type=int, default=11)
    p.add_argument("--u", type=float, default=2.0)
    p.add_argument("--replicas", type=int, default=2000)
    _common(p)
    p.set_defaults(fn=cmd_excursions)

    p = sub.add_parser("exp-law", help="exponential law of late-point heights")
    p.add_argument("--N", type=int, default=64)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--R", type=int, default=6)
    _common(p)
    p.set_defaults(fn=cmd_exp_law)

    args = ap.parse_args(argv)
    _apply_config(args)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
