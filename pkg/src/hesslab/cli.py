"""Command line entry point.

Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage or
configuration errors. Summaries go to standard output; machine-readable
artifacts go to ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cone import (ConeSpec, check_structural, combined_operator, horn_schur_check, quotient_operator,
                   sigma_m_operator)
from .errors import ConfigError, HesslabError
from .exponent import iterate_exponents, sigma_m_exponent_routes
from .manifold import (ChartPoint, FlatTorus, FubiniStudyP1, euclidean_sphere_area, exp_taylor_residual,
                       from_config, geodesic_sphere_area, normalized_chart)
from .rates import fit_rate

VERBS = ["cone-check", "manifold-check", "supconv", "rate-suite", "stability", "degiorgi", "exponent"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _eps_list(text):
    if text is None:
        return None
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --eps-list: {exc}", path="eps-list") from exc
    if len(vals) < 4 or min(vals) <= 0:
        raise ConfigError("need at least 4 positive values", path="eps-list")
    return vals


def _out(args):
    if args.out is None:
        return None
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(out, name, obj):
    if out is not None:
        (out / name).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# ---------------------------------------------------------------------------


def cmd_cone_check(args) -> int:
    if args.operator == "sigma":
        op = sigma_m_operator(args.n, args.m)
    elif args.operator == "quotient":
        op = quotient_operator(args.n, args.k, args.m)
    else:
        op = combined_operator(args.n, args.k, args.m, args.l, args.c)
    rep = check_structural(op, args.samples, args.seed)
    for r in rep.results:
        print(f"{r.condition_id:<22} {_status(r.passed)}  worst={r.worst_violation:.3e}")
    rng = np.random.default_rng(args.seed)
    fails = 0
    for _ in range(args.hermitian):
        d = int(rng.integers(1, 7))
        A = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        fails += not horn_schur_check(0.5 * (A + A.conj().T))
    print(f"{'horn_schur':<22} {_status(fails == 0)}  failures={fails}/{args.hermitian}")
    _write_json(_out(args), "cone_check.json", json.loads(rep.to_json()) | {"horn_schur_failures": fails})
    expect_fail = set(args.expect_fail or [])
    ok = all(r.passed or r.condition_id in expect_fail for r in rep.results) and fails == 0
    return 0 if ok else 1


def _manifold(args):
    if args.config:
        return from_config(args.config)
    if args.manifold == "p1":
        return FubiniStudyP1()
    return FlatTorus(args.n)


def cmd_manifold_check(args) -> int:
    M = _manifold(args)
    rng = np.random.default_rng(args.seed)
    n = M.n
    results = {}
    # exp/log round trip at random points and vectors
    z = 0.8 * (rng.uniform(-1, 1, (200, n)) + 1j * rng.uniform(-1, 1, (200, n)))
    xi = rng.standard_normal((200, n)) + 1j * rng.standard_normal((200, n))
    xi *= (0.9 * M.injectivity_bound * rng.uniform(0, 1, (200, 1))) / np.maximum(M.norm(z, xi), 1e-300)[:, None]
    w, cw = M.exp(z, xi)
    back = M.log(z, w, 0, cw)
    rt = float(np.abs(back - xi).max())
    results["round_trip"] = (rt, rt <= 1e-9)
    x0 = ChartPoint.of(np.full(n, 0.3 + 0.1j))
    val = normalized_chart(M, x0).validate()
    results["chart_curvature"] = (val.curvature_residual, val.curvature_residual <= 1e-4)
    # Taylor remainder slope along z = t xi
    u = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    u /= np.linalg.norm(u)
    ts = np.geomspace(0.02, 0.1, 5)
    res = [exp_taylor_residual(M, t * u, t * u, x0) for t in ts]
    fit = fit_rate(ts, res, zero_tol=1e-15)
    slope_ok = fit.degenerate or fit.slope >= 4 - 0.3
    results["taylor_slope"] = (float("nan") if fit.degenerate else fit.slope, slope_ok)
    r = 0.1
    dev = abs(geodesic_sphere_area(M, x0, r) - euclidean_sphere_area(n, r))
    results["sphere_area_dev"] = (dev, True)
    for k, (v, ok) in results.items():
        print(f"{k:<18} {_status(ok)}  {v:.3e}")
    _write_json(_out(args), "manifold_check.json", {k: {"value": v, "passed": ok} for k, (v, ok) in results.items()})
    return 0 if all(ok for _, ok in results.values()) else 1


def cmd_supconv(args) -> int:
    from .scenarios import make_scenario
    from .supconv import argmax_radius_check, semiconvexity_check, sup_convolve

    spec = json.loads(Path(args.config).read_text()) if args.config else args.scenario
    sc = make_scenario(spec, args.grid)
    phi = sc.build()
    eps = _eps_list(args.eps_list) if args.eps_list else [args.eps]
    out = _out(args)
    ok = True
    meta = []
    for e in eps:
        r = sup_convolve(phi, e)
        low = bool(np.all(r.phi_eps.values >= phi.values + e))
        rad = argmax_radius_check(r, phi)
        semi = semiconvexity_check(r)
        ok &= low and rad.passed
        print(f"eps={e:.6g} radius={r.search_radius:.4g} max|xi|={r.argmax_norm.max():.4g} "
              f"lower_bound={_status(low)} radius_check={_status(rad.passed)} semiconvexity={semi:.4g}")
        m = r.metadata() | {"lower_bound": low, "radius_check": rad.passed, "semiconvexity": semi}
        meta.append(m)
        if out is not None:
            r.phi_eps.save(str(out / f"{sc.id}_eps{e:g}"))
    _write_json(out, "supconv.json", {"scenario": sc.id, "h": phi.h, "results": meta})
    return 0 if ok else 1


def cmd_rate_suite(args) -> int:
    from .scenarios import run_rate_suite, validate_config

    cfg = validate_config(args.config) if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.grid is not None:
        cfg["grid"] = args.grid
    if args.eps_list:
        cfg["eps_list"] = _eps_list(args.eps_list)
    if args.out:
        cfg["out"] = args.out
    rep = run_rate_suite(cfg)
    for r in rep.runs:
        if r.skipped:
            print(f"{r.id:<16} SKIPPED  {r.note}")
            continue
        for c in r.checks:
            print(f"{r.id:<16} {c.name:<17} {_status(c.passed)}  {c.detail}")
    print(f"wall time {rep.wall_time:.1f} s")
    return 0 if rep.passed else 1


def cmd_stability(args) -> int:
    from .scenarios import make_scenario
    from .stability import level_profile, volume_decay_fit
    from .supconv import sup_convolve

    sc = make_scenario(args.scenario, args.grid)
    phi = sc.build()
    r = sup_convolve(phi, args.eps)
    shift = float(r.phi_eps.values.max()) + 0.01
    v = r.phi_eps.with_values(r.phi_eps.values - shift, None, name="v")
    base = phi.with_values(phi.values - shift, None, name="phi")
    F = sc.density_field(phi)
    prof = level_profile(v, base, F, args.delta)
    ck = prof.check_36
    mu = args.mu
    try:
        b0 = volume_decay_fit(prof, mu)
    except HesslabError:
        b0 = None
    print(f"scenario {sc.id} eps={args.eps:g} delta={args.delta:g}")
    print(f"L1 gap {prof.l1_gap:.4e}  |v|_inf {prof.v_inf_norm:.4f}  fitted B0 (mu={mu:g}) {b0}")
    print(f"volume bound: {_status(ck['holds_where_sufficient'])} on {int(ck['sufficient_levels'].sum())} "
          f"levels with s >= 2 delta |v|_inf; {len(ck['violations'])} levels over bound in total")
    out = _out(args)
    if out is not None:
        with open(out / "profile.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["s", "vol", "A"])
            for row in prof.to_rows():
                w.writerow([repr(x) for x in row])
        _write_json(out, "bounds.json", {"scenario": sc.id, "eps": args.eps, "delta": args.delta,
                                         "l1_gap": prof.l1_gap, "B0": b0, "mu": mu,
                                         "volume_bound_holds": ck["holds_where_sufficient"],
                                         "violations": ck["violations"]})
    return 0 if ck["holds_where_sufficient"] else 1


def cmd_degiorgi(args) -> int:
    from .stability import degiorgi_simulate, degiorgi_threshold, power_profile

    thr = degiorgi_threshold(args.b0, args.mu, args.s0, args.phi0)
    print(f"threshold {thr:.6f}")
    ok = True
    if args.profile:
        A, S, p = (float(x) for x in args.profile.split(","))
        f, b0 = power_profile(A, S, p)
        B0 = b0(args.mu)
        res = degiorgi_simulate(f, B0, args.mu, args.s0)
        ok = res.passed
        print(f"profile A={A:g} S={S:g} p={p:g}: B0={B0:.6g} vanish={res.vanish_point:.6f} "
              f"threshold={res.threshold:.6f} certified={res.certified} halving={res.halving_ok} "
              f"-> {_status(ok)}")
    _write_json(_out(args), "degiorgi.json", {"threshold": thr})
    return 0 if ok else 1


def cmd_exponent(args) -> int:
    out = _out(args)
    payload = {}
    if args.q0n is not None:
        seq = iterate_exponents(args.q0n, args.k_max, args.tol)
        print(f"q0n={args.q0n:g}")
        for k, m in enumerate(seq.mu_values[: args.show]):
            print(f"  mu_{k} = {m:.6f}")
        print(f"  limit {seq.mu_values[-1]:.6f} after {seq.iterations} steps (fixed point {seq.fixed_point:.6f})")
        payload["sequence"] = seq.to_dict()
        if out is not None:
            with open(out / "exponents.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["k", "mu"])
                for k, m in enumerate(seq.mu_values):
                    w.writerow([k, repr(m)])
    if args.p is not None:
        closed, fixed = sigma_m_exponent_routes(args.p, args.n, args.m)
        print(f"sigma_m exponent p={args.p:g} n={args.n} m={args.m}: {closed:.6f} (fixed-point route {fixed:.6f})")
        payload["sigma_m"] = {"closed_form": closed, "fixed_point": fixed}
    if not payload:
        print("nothing to do: give --q0n and/or --p/--n/--m", file=sys.stderr)
        return 2
    _write_json(out, "exponent.json", payload)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hesslab", description="Hessian-equation regularity laboratory")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="verb", parser_class=_Parser, metavar="VERB")

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory for artifacts")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--eps-list", help="comma-separated eps values")
        sp.add_argument("--grid", type=int, default=None)

    c = sub.add_parser("cone-check", help="structural conditions and Horn-Schur test")
    common(c)
    c.add_argument("--operator", choices=["sigma", "quotient", "combined"], default="sigma")
    c.add_argument("--n", type=int, default=3)
    c.add_argument("--m", type=int, default=2)
    c.add_argument("--k", type=int, default=3)
    c.add_argument("--l", type=int, default=1)
    c.add_argument("--c", type=float, default=1.0)
    c.add_argument("--samples", type=int, default=2000)
    c.add_argument("--hermitian", type=int, default=1000)
    c.add_argument("--expect-fail", action="append", help="condition id expected to fail")

    m = sub.add_parser("manifold-check", help="geometry oracles on a model manifold")
    common(m)
    m.add_argument("--manifold", choices=["torus", "p1"], default="p1")
    m.add_argument("--n", type=int, default=1)

    s = sub.add_parser("supconv", help="sup-convolve one scenario")
    common(s)
    s.add_argument("--scenario", default="torus_kink")
    s.add_argument("--eps", type=float, default=0.05)

    sub_rs = sub.add_parser("rate-suite", help="run the scenario matrix")
    common(sub_rs)

    st = sub.add_parser("stability", help="level-set profile and volume bound")
    common(st)
    st.add_argument("--scenario", default="torus_kink")
    st.add_argument("--eps", type=float, default=0.05)
    st.add_argument("--delta", type=float, default=0.0)
    st.add_argument("--mu", type=float, default=0.5)

    d = sub.add_parser("degiorgi", help="De Giorgi threshold and simulation")
    common(d)
    d.add_argument("--b0", type=float, required=True)
    d.add_argument("--mu", type=float, required=True)
    d.add_argument("--s0", type=float, default=0.0)
    d.add_argument("--phi0", type=float, required=True)
    d.add_argument("--profile", help="A,S,p for the profile A (1 - s/S)_+^p")

    e = sub.add_parser("exponent", help="exponent recursion and sigma_m exponents")
    common(e)
    e.add_argument("--q0n", type=float)
    e.add_argument("--k-max", type=int, default=200)
    e.add_argument("--tol", type=float, default=1e-10)
    e.add_argument("--show", type=int, default=5)
    e.add_argument("--p", type=float)
    e.add_argument("--n", type=int, default=2)
    e.add_argument("--m", type=int, default=1)
    return p


HANDLERS = {
    "cone-check": cmd_cone_check,
    "manifold-check": cmd_manifold_check,
    "supconv": cmd_supconv,
    "rate-suite": cmd_rate_suite,
    "stability": cmd_stability,
    "degiorgi": cmd_degiorgi,
    "exponent": cmd_exponent,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verb is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return HANDLERS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HesslabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
