"""Scenario library and the reproducible rate-suite driver.

A scenario couples a manifold, an analytic field recipe (a maximum of smooth
admissible pieces), a cone, a log-density ``F`` and the regularity it is
known to have. :func:`run_rate_suite` sup-convolves every scenario over an
``eps`` list once and feeds the results to every rate study.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .cone import ConeSpec
from .errors import ConfigError, DomainError
from .exponent import empirical_holder, optimal_gamma, q0_from_p0
from .field import FieldRecipe, LatticeField, admissibility
from .manifold import FlatTorus, FubiniStudyP1, from_config, p1_embedding
from .rates import RateFit, geometric_eps
from .stability import ExponentInputs, level_profile, sup_gap_rate_study
from .supconv import (argmax_radius_check, hessian_floor_study, l1_rate_study, semiconvexity_check,
                      sup_convolve)

DEFAULT_GRID = 64
DEFAULT_EPS = [float(e) for e in geometric_eps(0.2, 0.6, 6)]
DEFAULT_SCENARIOS = ["torus_constant", "torus_smooth", "torus_kink", "torus_holder", "p1_max"]
SIGMA_TOL = 1e-6
SLOPE_TOL = 0.05
HOLDER_TOL = 0.1

# statement ids used for traceability in reports
STATEMENT_IDS = {
    "lower_bound": "supconv.lower_bound",
    "argmax_radius": "supconv.argmax_radius",
    "semiconvex": "supconv.semiconvexity",
    "l1_rate": "supconv.l1_rate",
    "hessian_floor": "supconv.hessian_floor",
    "sup_gap": "stability.sup_gap",
    "volume_bound": "stability.volume_bound",
    "empirical_holder": "exponent.empirical_holder",
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer"},
        "grid": {"type": "integer", "minimum": 8},
        "eps_list": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 4},
        "scenarios": {
            "type": "array",
            "items": {
                "anyOf": [
                    {"type": "string"},
                    {"type": "object", "required": ["id", "kind"],
                     "properties": {"id": {"type": "string"}, "kind": {"type": "string"},
                                    "grid": {"type": "integer", "minimum": 8},
                                    "params": {"type": "object"}, "manifold": {}}},
                ]
            },
        },
        "out": {"type": "string"},
    },
    "additionalProperties": False,
}


def _re(z, a=0):
    return z[..., a].real


def _im(z, a=0):
    return z[..., a].imag


@dataclass
class Scenario:
    """One manufactured test case.

    Attributes
    ----------
    gamma : float or None
        Declared Holder exponent of the field (1 for Lipschitz).
    seminorm : float or None
        Declared Holder seminorm for that exponent.
    l1_bound : float
        Lower bound the fitted L1 decay slope must reach.
    r2_min : float
        Minimal r^2 of the L1 fit, or 0 to skip.
    """

    id: str
    kind: str
    manifold: object
    recipe: FieldRecipe
    cone: ConeSpec
    grid: int
    log_density: object = None
    gamma: Optional[float] = None
    seminorm: Optional[float] = None
    l1_bound: float = 0.25
    r2_min: float = 0.0
    p0: float = 4.0
    holder_radii: Optional[list] = None
    params: dict = field(default_factory=dict)

    def build(self) -> LatticeField:
        return LatticeField.sample(self.manifold, self.recipe, self.grid, name=self.id)

    def density_field(self, phi: LatticeField) -> LatticeField:
        z, c = phi.site_coords()
        vals = np.zeros(phi.values.shape) if self.log_density is None else self.log_density(z, c)
        return phi.with_values(vals, None, name="F")

    def check_admissible(self, phi: Optional[LatticeField] = None):
        """Pointwise check of every smooth piece; the maximum of admissible pieces is admissible.

        Torus pieces need only be smooth on the universal cover, so they are
        checked on a non-periodic patch covering a fundamental domain.
        """
        reports = []
        M = self.manifold
        for k, piece in enumerate(self.recipe.pieces):
            if isinstance(M, FlatTorus):
                P = float(M.periods[0])
                h = P / self.grid
                f = LatticeField.sample(M, piece, self.grid + 5, periodic=False, origin=-2 * h,
                                        span=(self.grid + 4) * h, name=f"{self.id}_piece{k}")
            else:
                f = LatticeField.sample(M, piece, self.grid, name=f"{self.id}_piece{k}")
            reports.append(admissibility(f, self.cone, 0.0, mode="pointwise"))
        return all(r.passed for r in reports), reports


def torus_constant(grid: int = DEFAULT_GRID, value: float = -0.1) -> Scenario:
    rec = FieldRecipe([lambda z, c: np.full(z.shape[:-1], value)], "constant", 1.0, 0.0)
    return Scenario("torus_constant", "constant", FlatTorus(1), rec, ConeSpec.gamma_n(1), grid,
                    gamma=None, l1_bound=1.0 - SLOPE_TOL, r2_min=0.999)


def torus_smooth(grid: int = DEFAULT_GRID, amp: float = 0.05) -> Scenario:
    rec = FieldRecipe([lambda z, c: amp * np.sin(2 * np.pi * _re(z))], "smooth", 1.0, 2 * np.pi * amp)
    return Scenario("torus_smooth", "smooth", FlatTorus(1), rec, ConeSpec.gamma_n(1), grid,
                    gamma=1.0, seminorm=2 * np.pi * amp, l1_bound=0.5, r2_min=0.0,
                    holder_radii=[float(r) for r in np.geomspace(4.001 / grid, 0.2, 6)])


def torus_kink(grid: int = DEFAULT_GRID, n: int = 1, amp: Optional[float] = None) -> Scenario:
    """``sum_a amp (|sin pi x_a| - 1/2)`` as the maximum of ``2^n`` smooth pieces."""
    c = (0.2 if n == 1 else 0.1) if amp is None else amp
    pieces = []
    for signs in np.ndindex(*([2] * n)):
        sg = [1.0 if s == 0 else -1.0 for s in signs]
        pieces.append(lambda z, ch, sg=sg: sum(g * c * np.sin(np.pi * _re(z, a)) for a, g in enumerate(sg))
                      - 0.5 * c * n)
    rec = FieldRecipe(pieces, "kink", 1.0, c * np.pi * math.sqrt(n))

    def log_density(z, ch):
        # e^{nF} = (s + kappa^2)^{-1/2} with s ~ |z|^2 near 0; in L^p for p < 2n
        s = sum(np.sin(np.pi * _re(z, a)) ** 2 + np.sin(np.pi * _im(z, a)) ** 2 for a in range(n)) / np.pi ** 2
        return -0.5 * np.log(s + 0.05 ** 2) / n

    sid = "torus_kink" if n == 1 else f"torus_kink_n{n}"
    return Scenario(sid, "kink", FlatTorus(n), rec, ConeSpec.gamma_n(n), grid, gamma=1.0,
                    seminorm=c * np.pi * math.sqrt(n), l1_bound=0.25, r2_min=0.98,
                    log_density=log_density, p0=1.5,
                    holder_radii=[float(r) for r in np.geomspace(4.001 / grid, 0.2, 6)], params={"n": n})


def torus_holder(grid: int = DEFAULT_GRID, beta: float = 0.25, amp: float = 0.008,
                 mollify: Optional[float] = None) -> Scenario:
    """Mollified power cusp ``amp ((sin^2 pi x + sin^2 pi y)/pi^2 + d^2)^beta`` minus its midrange.

    Exponent ``2 beta`` with seminorm ``amp``; ``d`` defaults to ``h/64`` so the
    mollification stays below lattice resolution. Lattice data next to an
    unresolved cusp reads as concave, with a defect proportional to ``amp``,
    so the default amplitude keeps the discrete eigenvalues above 0.2.
    """
    d = (1.0 / (64 * grid)) if mollify is None else mollify
    top = amp * (2 / np.pi ** 2 + d * d) ** beta
    bot = amp * (d * d) ** beta
    mid = 0.5 * (top + bot)

    def piece(z, c):
        s = (np.sin(np.pi * _re(z)) ** 2 + np.sin(np.pi * _im(z)) ** 2) / np.pi ** 2
        return amp * (s + d * d) ** beta - mid

    g = 2 * beta
    rec = FieldRecipe([piece], "holder", g, amp)
    return Scenario("torus_holder", "holder", FlatTorus(1), rec, ConeSpec.gamma_n(1), grid, gamma=g,
                    seminorm=amp, l1_bound=1.0 / (2 * (2 - g)), r2_min=0.0,
                    holder_radii=[float(r) for r in np.geomspace(4.001 / grid, 0.25, 6)],
                    params={"beta": beta, "mollify": d})


def p1_max(grid: int = 65, amp: float = 0.8) -> Scenario:
    """``max(amp <p, n1>/2, amp <p, n2>/2)`` for the unit embedding ``p``; the pieces have ``lambda >= 1 - amp``."""
    if grid % 2 == 0:
        grid += 1
    n1 = np.array([0.0, 0.0, 1.0])
    n2 = np.array([1.0, 0.0, 0.0])

    def mk(v):
        return lambda z, c: 0.5 * amp * (p1_embedding(z[..., 0], c) @ v)

    rec = FieldRecipe([mk(n1), mk(n2)], "p1_max", 1.0, amp)
    return Scenario("p1_max", "p1_max", FubiniStudyP1(), rec, ConeSpec.gamma_n(1), grid, gamma=None,
                    l1_bound=0.25, r2_min=0.0)


LIBRARY = {
    "torus_constant": torus_constant,
    "torus_smooth": torus_smooth,
    "torus_kink": torus_kink,
    "torus_kink_n2": lambda grid=16: torus_kink(grid, n=2),
    "torus_holder": torus_holder,
    "p1_max": p1_max,
}

KINDS = {"constant": torus_constant, "smooth": torus_smooth, "kink": torus_kink, "holder": torus_holder,
         "p1_max": p1_max}


def make_scenario(spec, grid: int = DEFAULT_GRID) -> Scenario:
    """Scenario from a library id or a ``{"id", "kind", "grid", "params"}`` mapping."""
    grid = grid or DEFAULT_GRID
    if isinstance(spec, str):
        if spec not in LIBRARY:
            raise ConfigError(f"unknown scenario {spec!r}", path="scenarios")
        if spec == "torus_kink_n2":
            return LIBRARY[spec]()
        if spec == "p1_max":
            return p1_max(grid + 1 if grid % 2 == 0 else grid)
        return LIBRARY[spec](grid)
    kind = spec["kind"]
    if kind not in KINDS:
        raise ConfigError(f"unknown scenario kind {kind!r}", path=f"scenarios/{spec['id']}/kind")
    try:
        sc = KINDS[kind](spec.get("grid", grid), **spec.get("params", {}))
    except TypeError as exc:
        raise ConfigError(str(exc), path=f"scenarios/{spec['id']}/params") from exc
    sc.id = spec["id"]
    if "manifold" in spec:
        sc.manifold = from_config(spec["manifold"])
    return sc


# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    statement: str
    passed: bool
    detail: str = ""

    def to_dict(self):
        return {"name": self.name, "statement": self.statement, "passed": bool(self.passed), "detail": self.detail}


@dataclass
class ScenarioRun:
    id: str
    h: float
    skipped: bool
    fits: dict
    checks: list
    rows: list
    note: str = ""
    volume_bounds: dict = field(default_factory=dict)

    def to_dict(self):
        return {"id": self.id, "h": self.h, "skipped": self.skipped, "note": self.note,
                "fits": {k: v.to_dict() for k, v in self.fits.items()},
                "checks": [c.to_dict() for c in self.checks],
                "volume_bounds": {str(k): v for k, v in self.volume_bounds.items()}}


@dataclass
class RunReport:
    """Everything produced by :func:`run_rate_suite`."""

    seed: int
    eps_list: list
    runs: list
    wall_time: float
    config: dict

    @property
    def passed(self) -> bool:
        return all(c.passed for r in self.runs for c in r.checks)

    def to_dict(self, include_time: bool = False) -> dict:
        d = {"seed": self.seed, "eps_list": self.eps_list, "passed": bool(self.passed),
             "scenarios": [r.to_dict() for r in self.runs]}
        if include_time:
            d["wall_time"] = self.wall_time
        return d

    def csv_text(self) -> str:
        """Per-(scenario, eps) measurements; contains no timing so reruns are byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "h", "eps", "l1_gap", "sup_gap", "sigma", "max_argmax", "radius_bound",
                    "semiconvexity"])
        for r in self.runs:
            for row in r.rows:
                w.writerow([r.id] + [repr(float(x)) for x in row])
        return buf.getvalue()

    def checks_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "check", "statement", "passed", "detail"])
        for r in self.runs:
            for c in r.checks:
                w.writerow([r.id, c.name, c.statement, int(c.passed), c.detail])
        return buf.getvalue()

    def write(self, out) -> list:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "rates.csv": self.csv_text(),
            "checks.csv": self.checks_csv_text(),
            "report.json": json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            "rates.gp": _gnuplot_script(self),
        }
        for name, text in files.items():
            (out / name).write_text(text)
        return [str(out / k) for k in files]


def _gnuplot_script(rep: RunReport) -> str:
    lines = ["set logscale xy", "set datafile separator ','", "set key left top",
             "set xlabel 'eps'", "set ylabel 'L1 gap'", "plot \\"]
    parts = [f"  'rates.csv' using ($1 eq '{r.id}' ? $3 : 1/0):4 with linespoints title '{r.id}'"
             for r in rep.runs if not r.skipped]
    return "\n".join(lines) + "\n" + ", \\\n".join(parts) + "\n"


def validate_config(cfg) -> dict:
    """Parse and validate a suite configuration (dict, JSON text or path)."""
    if cfg is None:
        cfg = {}
    if isinstance(cfg, (str, Path)):
        p = Path(cfg)
        try:
            text = p.read_text() if p.exists() else str(cfg)
            cfg = json.loads(text)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}", path="") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(exc.message, path=path) from exc
    return cfg


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HESSLAB_THREADS", "1")))
    except ValueError:
        return 1


def run_scenario(sc: Scenario, eps_list) -> ScenarioRun:
    """Sup-convolve one scenario over ``eps_list`` and run every check."""
    phi = sc.build()
    ok, reps = sc.check_admissible(phi)
    if not ok:
        worst = min(reps, key=lambda r: r.fraction)
        return ScenarioRun(sc.id, phi.h, True, {}, [], [], note=f"not admissible: {worst.note or worst.worst_site}")
    eps = sorted((float(e) for e in eps_list), reverse=True)
    try:
        results = [sup_convolve(phi, e) for e in eps]
    except DomainError as exc:
        return ScenarioRun(sc.id, phi.h, True, {}, [], [], note=str(exc))
    checks = []
    own = phi.owned_mask()
    bad = sum(int(np.sum(r.phi_eps.values < phi.values + r.epsilon)) for r in results)
    low = min(float((r.phi_eps.values - phi.values - r.epsilon).min()) for r in results)
    checks.append(Check("lower_bound", STATEMENT_IDS["lower_bound"], bad == 0,
                        f"{bad} sites below phi + eps; min(phi_eps - phi - eps) = {low:.3e}"))
    holder = (sc.gamma, sc.seminorm) if sc.gamma is not None and sc.seminorm else None
    rad = [argmax_radius_check(r, phi, holder) for r in results]
    checks.append(Check("argmax_radius", STATEMENT_IDS["argmax_radius"], all(x.passed for x in rad),
                        f"linf violations {sum(x.linf_violations for x in rad)}, "
                        f"holder violations {sum(x.holder_violations for x in rad)}"))
    semi = [semiconvexity_check(r) for r in results]
    semi_ok = all(s >= -2.0 / e - 1e-9 for s, e in zip(semi, eps))
    checks.append(Check("semiconvex", STATEMENT_IDS["semiconvex"], semi_ok,
                        "floor/(-2/eps) = " + ", ".join(f"{s * e / -2:.3f}" for s, e in zip(semi, eps))))
    l1 = l1_rate_study(phi, eps, results)
    l1_ok = (not l1.degenerate) and l1.slope >= sc.l1_bound - SLOPE_TOL and l1.r_squared >= sc.r2_min
    checks.append(Check("l1_rate", STATEMENT_IDS["l1_rate"], l1_ok,
                        f"slope {l1.slope:.4f} (bound {sc.l1_bound:.4f}), r2 {l1.r_squared:.4f}"))
    floor = hessian_floor_study(phi, eps, sc.cone, results, check_input=False)
    sig = list(floor.values)
    if isinstance(sc.manifold, FlatTorus):
        f_ok = max(sig) <= SIGMA_TOL
        fdet = f"max sigma {max(sig):.3e}"
    elif floor.degenerate:
        f_ok = max(sig) <= SIGMA_TOL
        fdet = f"sigma identically 0 (max {max(sig):.3e}); slope undefined"
    else:
        f_ok = floor.slope >= 0.5 - 0.1
        fdet = f"slope {floor.slope:.4f}"
    checks.append(Check("hessian_floor", STATEMENT_IDS["hessian_floor"], f_ok, fdet))
    g = sc.gamma if sc.gamma is not None else 1.0
    g1 = (1.0 + g) / (2.0 - g)
    g2 = 1.0 / (2.0 * (2.0 - g))
    gam, g1_used = optimal_gamma(g1, g2, q0_from_p0(sc.p0), phi.n)
    exps = ExponentInputs(sc.p0, phi.n, g1_used, g2)
    sup = sup_gap_rate_study(phi, eps, sc.cone, exps, results)
    checks.append(Check("sup_gap", STATEMENT_IDS["sup_gap"], bool(sup.extra.get("passed")),
                        f"slope {sup.slope:.4f} (bound {sup.extra['gamma_bound']:.4f} with p0={sc.p0})"))
    # volume bound on the upper approximation at the smallest eps, normalised to be negative
    r_last = results[-1]
    shift = float(r_last.phi_eps.values.max()) + 0.01
    v = r_last.phi_eps.with_values(r_last.phi_eps.values - shift, None, name="v")
    base = phi.with_values(phi.values - shift, phi.recipe, name="phi")
    F = sc.density_field(phi)
    vb_ok, vb_detail, vb = True, [], {}
    for delta in (0.0, 0.1, 0.25):
        if delta * float(np.abs(v.values).max()) > 0.5:
            continue
        prof = level_profile(v, base, F, delta)
        ck = prof.check_36
        vb_ok &= ck["holds_where_sufficient"]
        vb[delta] = {"stated_condition": bool(ck["stated_condition"]),
                     "holds_where_sufficient": bool(ck["holds_where_sufficient"]),
                     "sufficient_levels": int(ck["sufficient_levels"].sum()),
                     "violations": [float(x) for x in ck["violations"]]}
        vb_detail.append(f"delta={delta}: {len(prof.check_36['violations'])} levels over bound of "
                         f"{int(prof.check_36['sufficient_levels'].sum())} checked")
    checks.append(Check("volume_bound", STATEMENT_IDS["volume_bound"], bool(vb_ok), "; ".join(vb_detail)))
    fits = {"l1": l1, "hessian_floor": floor, "sup_gap": sup}
    note = ""
    hf = None
    if sc.holder_radii is not None and sc.gamma is not None:
        try:
            hf = empirical_holder(phi, sc.holder_radii)
        except DomainError as exc:
            note = f"empirical_holder not run: {exc}"
    if hf is not None:
        fits["holder"] = hf
        checks.append(Check("empirical_holder", STATEMENT_IDS["empirical_holder"],
                            (not hf.degenerate) and abs(hf.slope - sc.gamma) <= HOLDER_TOL,
                            f"slope {hf.slope:.4f} vs declared {sc.gamma}"))
    rows = []
    for r, s, sg in zip(results, semi, sig):
        gap = r.phi_eps.values - phi.values
        rows.append((phi.h, r.epsilon, phi.l1_norm(gap), float(gap[own].max()), sg,
                     float(r.argmax_norm.max()), r.search_radius, s))
    return ScenarioRun(sc.id, phi.h, False, fits, checks, rows, note, vb)


def run_rate_suite(config=None) -> RunReport:
    """Run the scenario matrix described by ``config``.

    Raises
    ------
    ConfigError
        On schema violations, with the offending path.
    """
    cfg = validate_config(config)
    seed = int(cfg.get("seed", 0))
    grid = int(cfg.get("grid", DEFAULT_GRID))
    eps = [float(e) for e in cfg.get("eps_list", DEFAULT_EPS)]
    specs = cfg.get("scenarios", DEFAULT_SCENARIOS)
    scenarios = [make_scenario(s, grid) for s in specs]
    t0 = time.perf_counter()
    workers = min(_threads(), len(scenarios)) or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            runs = list(ex.map(lambda s: run_scenario(s, eps), scenarios))
    else:
        runs = [run_scenario(s, eps) for s in scenarios]
    rep = RunReport(seed, eps, runs, time.perf_counter() - t0, cfg)
    if "out" in cfg:
        rep.write(cfg["out"])
    return rep
