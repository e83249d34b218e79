"""Level-set functionals, the De Giorgi iteration and the sup-gap estimates.

For fields ``v``, ``phi`` and a density ``e^{nF}`` on a common lattice,

* ``Omega_{delta,s} = {(1 - delta) v - phi - s > 0}``,
* ``A_{delta,s} = int ((1 - delta) v - phi - s)^+ e^{nF} dV``,

with ``dV`` the Riemannian volume form. Unknown constants are fitted on data
and reported; none are asserted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DomainError
from .exponent import gamma_bound, q0_from_p0
from .field import LatticeField
from .rates import RateFit, fit_rate

PROFILE_LEVELS = 64


@dataclass
class LevelSetProfile:
    """Level-set volumes and excess masses on an increasing ``s`` grid.

    ``check_36`` holds the volume bound ``vol(Omega_s) <= (2/s) |(v - phi)^+|_1``
    per level, with the hypotheses under which it is derived.
    """

    delta: float
    s_grid: np.ndarray
    vol_omega: np.ndarray
    a_values: np.ndarray
    density: LatticeField
    l1_gap: float
    v_inf_norm: float
    v_nonpositive: bool
    check_36: dict = field(default_factory=dict)

    def to_rows(self):
        return [(float(s), float(v), float(a)) for s, v, a in zip(self.s_grid, self.vol_omega, self.a_values)]


def _same(*fields):
    base = fields[0]
    for f in fields[1:]:
        if not base.same_grid(f):
            raise DomainError("fields must share one lattice")


def default_s_grid(top: float, levels: int = PROFILE_LEVELS) -> np.ndarray:
    """``0`` followed by ``levels - 1`` geometric levels up to ``top``."""
    if top <= 0:
        return np.linspace(0.0, 1.0, levels)
    return np.concatenate([[0.0], np.geomspace(top * 1e-3, top, levels - 1)])


def level_profile(v: LatticeField, phi: LatticeField, F: LatticeField, delta: float,
                  s_grid: Optional[Sequence[float]] = None) -> LevelSetProfile:
    """Quadrature of ``vol(Omega_{delta,s})`` and ``A_{delta,s}`` over ``s_grid``.

    Parameters
    ----------
    v, phi : LatticeField
    F : LatticeField
        Log-density; the weight is ``exp(n F)``.
    delta : float
        In ``[0, 1)``.
    s_grid : sequence, optional
        Increasing levels; default :func:`default_s_grid` up to ``max excess``.
    """
    _same(v, phi, F)
    if not (0.0 <= delta < 1.0):
        raise DomainError("delta must lie in [0, 1)")
    n = v.n
    w = v.weights()
    dens = np.exp(n * F.values)
    excess = (1.0 - delta) * v.values - phi.values
    s = default_s_grid(float(excess.max())) if s_grid is None else np.asarray(s_grid, float)
    if np.any(np.diff(s) <= 0):
        raise DomainError("s_grid must be increasing")
    ex = excess.ravel()
    wf = w.ravel()
    df = (w * dens).ravel()
    vol = np.array([wf[ex > si].sum() for si in s])
    a = np.array([(np.maximum(ex - si, 0.0) * df).sum() for si in s])
    l1 = v.l1_norm(np.maximum(v.values - phi.values, 0.0))
    vinf = float(np.abs(v.values).max())
    nonpos = bool(np.all(v.values <= 0))
    pos = s > 0
    bound = np.full_like(s, np.inf)
    bound[pos] = 2.0 * l1 / s[pos]
    holds = vol <= bound * (1 + 1e-12) + 1e-15
    sufficient = (s >= 2.0 * delta * vinf) & nonpos & pos
    check = {
        "bound": bound,
        "holds": holds,
        "stated_condition": bool(delta * vinf <= 0.5),
        "sufficient_levels": sufficient,
        "holds_where_sufficient": bool(np.all(holds[sufficient])),
        "violations": [float(x) for x in s[pos & ~holds]],
    }
    dfield = LatticeField(v.manifold, dens, v.h, v.periodic, v.origin, name="density", check_overlap=False)
    return LevelSetProfile(float(delta), s, vol, a, dfield, l1, vinf, nonpos, check)


# ---------------------------------------------------------------------------
# De Giorgi


def degiorgi_threshold(B0: float, mu: float, s0: float, phi_s0: float) -> float:
    """``s0 + 2 B0 phi(s0)^mu / (1 - 2^{-mu})``."""
    if mu <= 0:
        raise DomainError("mu must be positive")
    if B0 <= 0 or phi_s0 < 0:
        raise DomainError("need B0 > 0 and phi(s0) >= 0")
    return s0 + 2.0 * B0 * phi_s0 ** mu / (1.0 - 2.0 ** (-mu))


@dataclass
class DeGiorgiResult:
    vanish_point: float
    certified: bool
    threshold: float
    s_steps: list
    phi_steps: list
    halving_ok: bool
    within_threshold: bool
    witness: Optional[tuple] = None

    @property
    def passed(self) -> bool:
        return self.certified and self.halving_ok and self.within_threshold


def _table_fn(s, p):
    s = np.asarray(s, float)
    p = np.asarray(p, float)

    def f(x):
        # step evaluation from the left: an upper bound for a nonincreasing function
        i = np.searchsorted(s, x, side="right") - 1
        return float(p[max(i, 0)]) if x <= s[-1] else float(p[-1])

    return f


def degiorgi_simulate(phi: Union[Callable, tuple], B0: float, mu: float, s0: float,
                      table: Optional[Sequence[float]] = None, max_steps: int = 200) -> DeGiorgiResult:
    """Run the halving recursion ``s_{k+1} = s_k + 2 B0 phi(s_k)^mu``.

    Parameters
    ----------
    phi : callable or (s_values, phi_values)
        Nonincreasing, nonnegative function of ``s``.
    table : sequence, optional
        Abscissae used to scan the hypothesis ``r phi(s + r) <= B0 phi(s)^{1+mu}``;
        defaults to the table abscissae or 400 points on ``[s0, threshold]``.
    """
    if isinstance(phi, tuple):
        ts, ps = phi
        f = _table_fn(ts, ps)
        grid = np.asarray(ts, float) if table is None else np.asarray(table, float)
    else:
        f = phi
        grid = None if table is None else np.asarray(table, float)
    p0 = float(f(s0))
    thr = degiorgi_threshold(B0, mu, s0, p0)
    if grid is None:
        grid = np.linspace(s0, thr, 400)
    grid = np.sort(grid[grid >= s0])
    vals = np.array([f(x) for x in grid])
    if np.any(np.diff(vals) > 1e-15):
        return DeGiorgiResult(math.nan, False, thr, [], [], False, False, ("not nonincreasing", None))
    witness = None
    for i in range(len(grid)):
        r = grid[i + 1:] - grid[i]
        lhs = r * vals[i + 1:]
        rhs = B0 * vals[i] ** (1.0 + mu)
        bad = np.nonzero(lhs > rhs * (1 + 1e-12) + 1e-300)[0]
        if bad.size:
            witness = (float(grid[i]), float(r[bad[0]]))
            break
    certified = witness is None
    ss, ph = [s0], [p0]
    halving = True
    for k in range(max_steps):
        if ph[-1] <= 0:
            break
        nxt = ss[-1] + 2.0 * B0 * ph[-1] ** mu
        if nxt <= ss[-1]:
            # step below one ulp of s: the recursion has stalled in floating point
            break
        ss.append(nxt)
        ph.append(float(f(nxt)))
        if ph[-1] > 2.0 ** (-(k + 1)) * p0 * (1 + 1e-12):
            halving = False
    # observed vanish point: first grid point where phi is zero
    zero = np.nonzero(vals <= 0)[0]
    if not zero.size:
        grid = np.linspace(s0, max(thr, grid[-1]), 4001)
        vals = np.array([f(x) for x in grid])
        zero = np.nonzero(vals <= 0)[0]
    if not zero.size:
        vanish = math.inf
    elif zero[0] == 0:
        vanish = float(grid[0])
    else:
        lo, hi = float(grid[zero[0] - 1]), float(grid[zero[0]])
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if f(mid) > 0 else (lo, mid)
        vanish = hi
    return DeGiorgiResult(vanish, certified, thr, ss, ph, halving, vanish <= thr * (1 + 1e-12) + 1e-15, witness)


def power_profile(A: float, S: float, p: float):
    """``phi(s) = A (1 - s/S)_+^p`` and the smallest admissible ``B0`` for ``mu <= 1/p``.

    Returns ``(phi, B0_of_mu)`` where ``B0_of_mu(mu) = p^p S / ((p+1)^{p+1} A^mu)``.
    """
    if A <= 0 or S <= 0 or p <= 0:
        raise DomainError("A, S, p must be positive")

    def phi(s):
        return A * max(0.0, 1.0 - s / S) ** p

    def b0(mu):
        if mu * p > 1 + 1e-12:
            raise DomainError("need mu * p <= 1")
        return p ** p * S / ((p + 1) ** (p + 1) * A ** mu)

    return phi, b0


def volume_decay_fit(profile: LevelSetProfile, mu: float) -> float:
    """Smallest ``B0`` with ``r vol(s + r) <= B0 vol(s)^{1+mu}`` over all grid pairs."""
    s = profile.s_grid
    vol = profile.vol_omega
    pos = vol > 0
    if pos.sum() < 3:
        raise DomainError("need at least 3 levels with positive volume")
    best = 0.0
    for i in np.nonzero(pos)[0]:
        r = s[i + 1:] - s[i]
        if r.size:
            best = max(best, float(np.max(r * vol[i + 1:]) / vol[i] ** (1.0 + mu)))
    return best


# ---------------------------------------------------------------------------
# sup-gap estimates


def stability_gap_bound(s0: float, mu: float, C1: float, l1_norm: float) -> float:
    """``s0 + C1 s0^{-mu} L^mu``."""
    if s0 <= 0:
        raise DomainError("s0 must be positive")
    if min(mu, C1, l1_norm) < 0:
        raise DomainError("mu, C1 and l1_norm must be nonnegative")
    return s0 + C1 * s0 ** (-mu) * l1_norm ** mu


def optimal_s0(mu: float, C1: float, l1_norm: float) -> float:
    """Minimiser ``(mu C1 L^mu)^{1/(1+mu)}`` of :func:`stability_gap_bound` in ``s0``."""
    return (mu * C1 * l1_norm ** mu) ** (1.0 / (1.0 + mu))


def fit_c1(sup_gaps, s0s, l1_norms, mu: float) -> float:
    """Smallest ``C1`` making the gap bound hold on every ``(sup, s0, L)`` triple."""
    c = 0.0
    for g, s0, L in zip(sup_gaps, s0s, l1_norms):
        if g <= s0:
            continue
        if L <= 0:
            return math.inf
        c = max(c, (g - s0) * s0 ** mu / L ** mu)
    return c


def s_star_bound(delta: float, v_inf_norm: float, C2: float, q0: float, n: float, beta: float,
                 l1_norm: float):
    """``max(2 delta |v|_inf, C2 delta^{-q0 n / (1 - 1/beta)} L)`` and the binding branch."""
    if beta <= 1:
        raise DomainError("beta must exceed 1")
    if not (0.0 < delta < 1.0):
        raise DomainError("delta must lie in (0, 1)")
    a = 2.0 * delta * v_inf_norm
    b = C2 * delta ** (-(q0 * n) / (1.0 - 1.0 / beta)) * l1_norm
    return (a, "linf") if a >= b else (b, "l1")


@dataclass
class ExponentInputs:
    """Integrability and rate data feeding the sup-gap exponent.

    ``mu`` defaults to ``0.9 / (n q0)``.
    """

    p0: float
    n: int
    gamma1: float
    gamma2: float
    mu: Optional[float] = None

    def __post_init__(self):
        self.q0 = q0_from_p0(self.p0)
        bound = 1.0 / (self.n * self.q0)
        if self.mu is None:
            self.mu = 0.9 * bound
        if not (0.0 < self.mu < bound):
            raise DomainError(f"mu must lie in (0, 1/(n q0)) = (0, {bound:.6g})")

    @property
    def gamma(self) -> float:
        return gamma_bound(self.gamma1, self.gamma2, self.q0, self.n)


def sup_gap_rate_study(phi: LatticeField, eps_list, cone=None, exponents: Optional[ExponentInputs] = None,
                       results=None, tol: float = 0.05) -> RateFit:
    """Fit ``sup(phi_eps - phi)`` against ``eps`` and compare with the exponent bound."""
    from .supconv import sup_convolve

    eps = np.sort(np.asarray(eps_list, float))[::-1]
    res = results or [sup_convolve(phi, e) for e in eps]
    own = phi.owned_mask()
    gaps = [float((r.phi_eps.values - phi.values)[own].max()) for r in res]
    fit = fit_rate(eps, gaps, label="sup_gap")
    if exponents is not None:
        g = exponents.gamma
        fit.extra["gamma_bound"] = g
        fit.extra["passed"] = bool(not fit.degenerate and fit.slope >= g - tol)
    return fit


# ---------------------------------------------------------------------------
# exponential moments


def _moment_lhs(excess, w, A, beta, n):
    arg = beta * excess ** ((n + 1.0) / n) / A ** (1.0 / n)
    return float(np.sum(w * np.exp(arg)))


def calibrate_moment_constant(v, phi, F, delta, s, beta) -> float:
    """Smallest ``C >= 1`` with ``LHS(beta) <= C exp(C delta^{-(n+1)} A)`` on a reference scenario."""
    lhs, A = _moment_parts(v, phi, F, delta, s, [beta])
    n = v.n
    t = delta ** (-(n + 1)) * A
    target = lhs[0]

    def rhs(C):
        return C * math.exp(C * t)

    if rhs(1.0) >= target:
        return 1.0
    lo, hi = 1.0, 2.0
    while rhs(hi) < target:
        hi *= 2
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if rhs(mid) < target else (lo, mid)
    return hi


def _moment_parts(v, phi, F, delta, s, betas):
    _same(v, phi, F)
    if not 0 < delta < 1:
        raise DomainError("delta must lie in (0, 1) for the moment bound")
    n = v.n
    w = v.weights()
    excess = np.maximum((1.0 - delta) * v.values - phi.values - s, 0.0)
    A = float(np.sum(excess * np.exp(n * F.values) * w))
    if A <= 0:
        raise DomainError("A_{delta,s} = 0: the moment is undefined")
    return [_moment_lhs(excess, w, A, b, n) for b in betas], A


@dataclass
class MomentReport:
    A: float
    C: float
    rows: list
    largest_beta: Optional[float]


def exp_moment_report(v, phi, F, delta: float, s: float, beta_candidates, C: float = 1.0) -> MomentReport:
    """Evaluate the exponential moment for each ``beta`` against ``C exp(C delta^{-(n+1)} A)``."""
    betas = sorted(float(b) for b in beta_candidates)
    lhs, A = _moment_parts(v, phi, F, delta, s, betas)
    n = v.n
    rhs = C * math.exp(C * delta ** (-(n + 1)) * A)
    rows = [(b, l, rhs, l <= rhs) for b, l in zip(betas, lhs)]
    ok = [b for b, l, r, good in rows if good]
    return MomentReport(A, C, rows, max(ok) if ok else None)
