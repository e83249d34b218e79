"""Exponent algebra for the Holder bootstrap, plus empirical Holder estimates.

Open bounds of the form "for any gamma < b" are represented by ``b`` itself;
callers subtract whatever margin they need.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError
from .rates import RateFit, fit_rate


def gamma_bound(gamma1: float, gamma2: float, q0: float, n: float) -> float:
    """``min(gamma1, gamma2 - q0 n gamma1, gamma2 / (1 + q0 n))``; may be <= 0."""
    if min(gamma1, gamma2, q0, n) <= 0:
        raise DomainError("gamma_bound inputs must be positive")
    q0n = q0 * n
    return min(gamma1, gamma2 - q0n * gamma1, gamma2 / (1.0 + q0n))


def optimal_gamma(gamma1_max: float, gamma2: float, q0: float, n: float):
    """Maximise :func:`gamma_bound` over ``gamma1`` in ``(0, gamma1_max]``.

    The first two terms cross at ``gamma1 = gamma2 / (1 + q0 n)`` where all
    three coincide, so the optimum is that crossing when it is attainable and
    ``gamma1_max`` otherwise.

    Returns
    -------
    (gamma, argmax_gamma1) : tuple of float
    """
    if gamma1_max <= 0 or gamma2 <= 0:
        raise DomainError("gamma1_max and gamma2 must be positive")
    star = gamma2 / (1.0 + q0 * n)
    g1 = min(gamma1_max, star)
    return gamma_bound(g1, gamma2, q0, n), g1


def optimal_gamma_grid(gamma1_max: float, gamma2: float, q0: float, n: float, resolution: float = 1e-5):
    """Dense grid search counterpart of :func:`optimal_gamma`."""
    g1 = np.arange(resolution, gamma1_max + 0.5 * resolution, resolution)
    g1 = g1[g1 <= gamma1_max]
    q0n = q0 * n
    vals = np.minimum(np.minimum(g1, gamma2 - q0n * g1), gamma2 / (1.0 + q0n))
    i = int(np.argmax(vals))
    return float(vals[i]), float(g1[i])


def holder_from_gamma(gamma: float) -> float:
    """Holder exponent ``2 gamma / (1 + gamma)`` from a sup-gap rate ``gamma``."""
    if not (0.0 < gamma <= 1.0):
        raise DomainError(f"gamma must lie in (0, 1], got {gamma}")
    return 2.0 * gamma / (1.0 + gamma)


def mu0(q0n: float) -> float:
    return 2.0 / (4.0 * (1.0 + q0n) + 1.0)


def mu_step(mu: float, q0n: float) -> float:
    return 2.0 / (2.0 * (2.0 - mu) * (1.0 + q0n) + 1.0)


def mu_fixed_point(q0n: float) -> float:
    return 1.0 / (2.0 * (1.0 + q0n))


def bootstrap_step(mu: float, q0n: float) -> float:
    """One improvement step computed through the gamma calculus.

    A ``mu``-Holder solution gives a Hessian-floor exponent
    ``gamma1 = (1 + mu)/(2 - mu)`` and an L1 exponent ``gamma2 = 1/(2(2 - mu))``;
    the optimal sup-gap rate is converted back to a Holder exponent.
    """
    g1 = (1.0 + mu) / (2.0 - mu)
    g2 = 1.0 / (2.0 * (2.0 - mu))
    gamma, _ = optimal_gamma(g1, g2, q0n, 1.0)
    return holder_from_gamma(gamma)


@dataclass
class ExponentSequence:
    q0n: float
    mu_values: list
    fixed_point: float
    converged: bool
    iterations: int

    def to_dict(self):
        return {"q0n": self.q0n, "mu_values": list(self.mu_values), "fixed_point": self.fixed_point,
                "converged": self.converged, "iterations": self.iterations}


def iterate_exponents(q0n: float, k_max: int = 200, tol: float = 1e-10) -> ExponentSequence:
    """Run the Holder-exponent improvement recursion from ``mu_0``.

    Raises
    ------
    ConvergenceError
        If the sequence ever decreases (it is monotone for every ``q0n > 0``).
    """
    if q0n <= 0:
        raise DomainError("q0n must be positive")
    mus = [mu0(q0n)]
    converged = False
    for _ in range(k_max):
        nxt = mu_step(mus[-1], q0n)
        if nxt < mus[-1] - 1e-15:
            raise ConvergenceError(f"exponent sequence decreased at step {len(mus)}")
        mus.append(nxt)
        if abs(nxt - mus[-2]) < tol:
            converged = True
            break
    return ExponentSequence(q0n, mus, mu_fixed_point(q0n), converged, len(mus) - 1)


def q0_from_p0(p0: float) -> float:
    if p0 <= 1:
        raise DomainError("p0 must exceed 1")
    return p0 / (p0 - 1.0)


def sigma_m_parameters(p: float, n: int, m: int) -> dict:
    """Integrability data for the sigma_m equation with ``e^F in L^p``: ``p0 = m p / n``."""
    if p <= n / m:
        raise DomainError(f"need p > n/m = {n / m}, got p={p}")
    p0 = m * p / n
    q0 = q0_from_p0(p0)
    return {"p": p, "n": n, "m": m, "p0": p0, "q0": q0, "q0n": q0 * n}


def sigma_m_exponent(p: float, n: int, m: int, check: bool = True) -> float:
    """Closed-form sup exponent ``(mp - n) / (2 (mp - n + mpn))``.

    With ``check`` the fixed-point route ``1/(2(1 + q0 n))`` is also
    evaluated and a mismatch beyond ``1e-12`` raises.
    """
    prm = sigma_m_parameters(p, n, m)
    mp = m * p
    closed = (mp - n) / (2.0 * (mp - n + mp * n))
    if check:
        fp = mu_fixed_point(prm["q0n"])
        if abs(fp - closed) > 1e-12 * max(1.0, abs(closed)):
            raise ConvergenceError(f"routes disagree: {closed} vs {fp}")
    return closed


def sigma_m_exponent_routes(p: float, n: int, m: int):
    """Both routes ``(closed_form, fixed_point)`` for comparison."""
    prm = sigma_m_parameters(p, n, m)
    mp = m * p
    return (mp - n) / (2.0 * (mp - n + mp * n)), mu_fixed_point(prm["q0n"])


def general_exponent(p: float, n: int) -> float:
    """General-operator form ``(p - n)/(2(p - n + pn))`` with ``p0 = p/n``, ``p > n``."""
    if p <= n:
        raise DomainError(f"need p > n, got p={p}")
    return (p - n) / (2.0 * (p - n + p * n))


def general_parameters(p: float, n: int) -> dict:
    if p <= n:
        raise DomainError(f"need p > n, got p={p}")
    p0 = p / n
    q0 = q0_from_p0(p0)
    return {"p": p, "n": n, "p0": p0, "q0": q0, "q0n": q0 * n}


def empirical_holder(phi, radii, min_radius_factor: float = 4.0) -> RateFit:
    """Empirical Holder exponent of a lattice field from its osculation.

    For each radius ``r`` the largest increase ``phi(w) - phi(z)`` over lattice
    pairs at geodesic distance ``< r`` is recorded; the slope of its log-log
    fit is the exponent. Radii under ``min_radius_factor * h`` are dropped.
    """
    radii = np.sort(np.asarray(radii, float))
    err = [r for r in radii if r < min_radius_factor * phi.h]
    radii = np.array([r for r in radii if r >= min_radius_factor * phi.h])
    if radii.size < 4:
        raise DomainError("need at least 4 radii above the discretisation floor")
    osc = phi.oscillation(radii)
    fit = fit_rate(radii, osc, label="empirical_holder", zero_tol=1e-14)
    fit.extra["dropped_radii"] = err
    return fit
