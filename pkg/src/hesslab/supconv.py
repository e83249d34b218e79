"""Sup-convolution on model manifolds and the associated rate studies.

``phi_eps(z) = sup_xi phi(exp_z xi) + eps - |xi|_z^2 / eps``, with the search
restricted to ``|xi|_z <= (2 |phi|_inf eps)^{1/2}``. The maximisation runs over
a tangent lattice in an orthonormal frame. When the field carries an analytic
recipe that is a maximum of smooth pieces, the maximum is taken piece by piece
(sup of a max is the max of the sups) and each piece's lattice optimum is
polished by a safeguarded Newton iteration.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cone import ConeSpec
from .errors import ConvergenceError, DomainError, PreconditionError
from .field import LatticeField, admissibility, complex_from_real, minimal_slack, real_hessian
from .manifold import ChartPoint, FlatTorus, ManifoldModel, normalized_chart
from .rates import RateFit, fit_rate

CHUNK_POINTS = 2 ** 20
DEFAULT_BUDGET = {2: 4096, 4: 625}
NEWTON_ITERS = 10
NEWTON_STEP = 1e-4


@dataclass
class SupConvResult:
    """Output of :func:`sup_convolve`.

    ``argmax_xi`` holds chart-coordinate tangent vectors per site (shape of
    the field values plus ``(n,)``); ``argmax_norm`` their lengths ``|xi|_z``.
    ``achieved_max_flags`` is True where the optimum lies strictly inside the
    search ball.
    """

    epsilon: float
    phi_eps: LatticeField
    argmax_xi: np.ndarray
    argmax_norm: np.ndarray
    search_radius: float
    achieved_max_flags: np.ndarray
    spacing: float
    lattice_points: int
    refined: bool
    source_sup_norm: float

    def metadata(self) -> dict:
        return {"epsilon": self.epsilon, "search_radius": self.search_radius, "spacing": self.spacing,
                "lattice_points": self.lattice_points, "refined": self.refined,
                "max_argmax_norm": float(self.argmax_norm.max()),
                "interior_fraction": float(self.achieved_max_flags.mean())}


def _frames(M: ManifoldModel, z, c):
    """``A = conj(G)^{-1/2}`` per site so that ``|A eta|_z = |eta|``."""
    G = M.metric(z, c)
    if M.n == 1:
        return (1.0 / np.sqrt(G[..., 0, 0].real))[..., None, None].astype(complex)
    w, V = np.linalg.eigh(np.conj(G))
    return V @ (w[..., :, None] ** -0.5 * np.conj(np.swapaxes(V, -1, -2)))


def _apply(A, eta):
    """``A @ eta`` over the last axis; ``A`` is ``(S, n, n)`` or a per-site scalar ``(S,)``."""
    if A.ndim == 1:
        return A.reshape(A.shape + (1,) * (eta.ndim - 1)) * eta
    if eta.ndim == 2:
        return (A @ eta[..., None])[..., 0]
    return np.einsum("sab,skb->ska", A, eta)


def _scalar_frames(A):
    off = A - np.einsum("sab,ab->sab", A, np.eye(A.shape[-1]))
    d = np.diagonal(A, axis1=-2, axis2=-1)
    if np.all(off == 0) and np.all(d == d[:, :1]):
        return d[:, 0]
    return A


def tangent_lattice(n: int, radius: float, spacing: float, budget: Optional[int] = None):
    """Lattice points of the real ``2n``-ball, lexicographically ordered.

    The spacing is enlarged by factors of ``1.25`` until the count is within
    ``budget``. Returns ``(eta, spacing)`` with ``eta`` complex ``(K, n)``.
    """
    d = 2 * n
    budget = budget or DEFAULT_BUDGET.get(d, 256)
    if radius <= 0:
        return np.zeros((1, n), complex), spacing
    s = spacing
    while True:
        k = int(math.floor(radius / s + 1e-12))
        est = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * (k + 0.5) ** d
        if est <= 1.5 * budget or k <= 1:
            ax = s * np.arange(-k, k + 1)
            grid = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
            grid = grid[np.sum(grid ** 2, axis=1) <= radius ** 2 * (1 + 1e-12)]
            if len(grid) <= budget or k <= 1:
                eta = grid[:, 0::2] + 1j * grid[:, 1::2]
                return eta, s
        s *= 1.25


def _evaluate(phi: LatticeField, piece, z, c, xi):
    """Values of ``piece`` (or the interpolant when None) at ``exp_z(xi)``."""
    M = phi.manifold
    if isinstance(M, FlatTorus):
        w = z + xi
        cw = np.zeros(w.shape[:-1], int)
    else:
        w, cw = M.exp(np.broadcast_to(z, xi.shape), xi, np.broadcast_to(c, xi.shape[:-1]), check=False)
    if piece is None:
        return phi.interp(w, cw)
    return np.asarray(piece(w, cw), float)


def _shifted_interp(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolant of periodic samples ``v`` at every site plus offset ``x`` (in cells).

    All sites share the weights, so lattice translations commute with it exactly.
    """
    i0 = np.floor(x)
    t = x - i0
    out = np.zeros_like(v)
    for corner in itertools.product((0, 1), repeat=v.ndim):
        w = 1.0
        for a, b in enumerate(corner):
            w *= t[a] if b else 1.0 - t[a]
        if w == 0.0:
            continue
        shift = tuple(-int(i0[a]) - b for a, b in enumerate(corner))
        out += w * np.roll(v, shift, axis=tuple(range(v.ndim)))
    return out


def _torus_lattice_sup(phi: LatticeField, eta_lat, q, eps):
    """Lattice search of the interpolant on a periodic torus, one whole-array shift per point."""
    v = phi.values
    best = v + eps
    best_k = np.full(v.shape, -1)
    for k, eta in enumerate(eta_lat):
        x = np.empty(2 * phi.n)
        x[0::2], x[1::2] = eta.real / phi.h, eta.imag / phi.h
        val = _shifted_interp(v, x) + eps - q[k]
        up = val > best
        best = np.where(up, val, best)
        best_k = np.where(up, k, best_k)
    eta = np.where((best_k >= 0)[..., None], eta_lat[np.maximum(best_k, 0)], 0.0)
    return best.reshape(-1), eta.reshape(-1, phi.n)


def _newton(phi, piece, z, c, A, eta, eps, radius):
    """Safeguarded Newton ascent on ``F(eta) = piece(exp_z(A eta)) - |eta|^2/eps``."""
    n = phi.n
    d = 2 * n
    S = eta.shape[0]
    x = np.stack([eta.real, eta.imag], axis=-1).reshape(S, d)

    def F(xr):
        e = xr[:, 0::2] + 1j * xr[:, 1::2]
        xi = _apply(A, e)
        return _evaluate(phi, piece, z, c, xi) - np.sum(xr ** 2, axis=1) / eps

    h = NEWTON_STEP * max(radius, 1e-3)
    f0 = F(x)
    for _ in range(NEWTON_ITERS):
        g = np.empty((S, d))
        H = np.empty((S, d, d))
        fp, fm = [], []
        for a in range(d):
            e = np.zeros(d)
            e[a] = h
            fpa, fma = F(x + e), F(x - e)
            fp.append(fpa)
            fm.append(fma)
            g[:, a] = (fpa - fma) / (2 * h)
            H[:, a, a] = (fpa - 2 * f0 + fma) / h ** 2
        for a in range(d):
            for b in range(a + 1, d):
                e = np.zeros(d)
                e[a], e[b] = h, h
                f = np.zeros(d)
                f[a], f[b] = h, -h
                v = (F(x + e) - F(x + f) - F(x - f) + F(x - e)) / (4 * h * h)
                H[:, a, b] = H[:, b, a] = v
        # Newton where H is negative definite, gradient step otherwise
        try:
            ev = np.linalg.eigvalsh(H)
            negdef = ev.max(axis=1) < 0
        except np.linalg.LinAlgError:
            negdef = np.zeros(S, bool)
        step = np.where(negdef[:, None], 0.0, 0.5 * eps * g)
        if np.any(negdef):
            step[negdef] = -np.linalg.solve(H[negdef], g[negdef][..., None])[..., 0]
        t = np.ones(S)
        accepted = np.zeros(S, bool)
        best_x = x.copy()
        best_f = f0.copy()
        for _ in range(8):
            xn = x + t[:, None] * step
            nr = np.linalg.norm(xn, axis=1)
            over = nr > radius
            xn[over] *= (radius / nr[over])[:, None]
            fn = F(xn)
            better = (fn > best_f) & ~accepted
            best_x[better] = xn[better]
            best_f[better] = fn[better]
            accepted |= better
            if np.all(accepted):
                break
            t = np.where(accepted, t, 0.5 * t)
        moved = np.abs(best_x - x).max() if S else 0.0
        x, f0 = best_x, best_f
        if moved < 1e-13:
            break
    return x[:, 0::2] + 1j * x[:, 1::2], f0


def sup_convolve(phi: LatticeField, eps: float, budget: Optional[int] = None, refine: bool = True,
                 spacing: Optional[float] = None) -> SupConvResult:
    """Sup-convolution of a lattice field at scale ``eps``.

    Parameters
    ----------
    phi : LatticeField
    eps : float
        Regularisation scale, ``> 0``.
    budget : int, optional
        Maximum number of tangent lattice points per site.
    refine : bool
        Newton-polish each piece of the field's recipe (ignored when the field
        has no recipe; the interpolant is then searched on the lattice only).
    spacing : float, optional
        Tangent lattice spacing, default ``min(h, eps/4)``.

    Raises
    ------
    DomainError
        If the search radius exceeds the injectivity bound.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    M = phi.manifold
    norm = phi.sup_norm
    R = math.sqrt(2.0 * norm * eps)
    if R > M.injectivity_bound:
        emax = M.injectivity_bound ** 2 / (2.0 * norm)
        raise DomainError(f"search radius {R:.4g} exceeds injectivity bound {M.injectivity_bound:.4g}; "
                          f"use eps <= {emax:.4g}")
    s0 = min(phi.h, eps / 4.0) if spacing is None else spacing
    eta_lat, s = tangent_lattice(phi.n, R, s0, budget)
    K = len(eta_lat)
    q = np.sum(np.abs(eta_lat) ** 2, axis=1) / eps
    zero = np.nonzero(np.all(eta_lat == 0, axis=1))[0]

    z, c = phi.site_coords()
    shape = phi.values.shape
    n = phi.n
    zf = z.reshape(-1, n)
    cf = c.reshape(-1)
    A = _scalar_frames(_frames(M, zf, cf))
    base = phi.values.reshape(-1) + eps

    recipe = phi.recipe
    pieces = list(recipe.pieces) if recipe is not None else [None]
    use_newton = refine and recipe is not None
    best_val = base.copy()
    best_eta = np.zeros((zf.shape[0], n), complex)
    chunk = max(1, CHUNK_POINTS // max(K, 1))
    if recipe is None and phi.kind == "torus" and phi.periodic:
        best_val, best_eta = _torus_lattice_sup(phi, eta_lat, q, eps)
        pieces = []
    for piece in pieces:
        for lo in range(0, zf.shape[0], chunk):
            sl = slice(lo, lo + chunk)
            zs, cs, As = zf[sl], cf[sl], A[sl]
            xi = _apply(As, np.broadcast_to(eta_lat, (len(zs),) + eta_lat.shape))
            vals = _evaluate(phi, piece, zs[:, None, :], cs[:, None], xi) + eps - q[None, :]
            if piece is None:
                # exp_z(0) = z: use the site value rather than a re-interpolation through another chart
                vals[:, zero] = base[sl, None]
            k = np.argmax(vals, axis=1)
            v = vals[np.arange(len(k)), k]
            e = eta_lat[k]
            if use_newton:
                e2, f2 = _newton(phi, piece, zs, cs, As, e, eps, R)
                f2 = f2 + eps
                up = f2 > v
                v = np.where(up, f2, v)
                e = np.where(up[:, None], e2, e)
            better = v > best_val[sl]
            best_val[sl] = np.where(better, v, best_val[sl])
            best_eta[sl] = np.where(better[:, None], e, best_eta[sl])
    out = np.maximum(best_val, base)
    xi_best = _apply(A, best_eta)
    nrm = np.abs(best_eta)
    nrm = np.sqrt(np.sum(nrm ** 2, axis=1))
    interior = nrm < R - 0.5 * s if R > 0 else np.ones_like(nrm, bool)
    return SupConvResult(
        epsilon=float(eps),
        phi_eps=phi.with_values(out.reshape(shape), None, name=f"{phi.name}_eps{eps:g}"),
        argmax_xi=xi_best.reshape(shape + (n,)),
        argmax_norm=nrm.reshape(shape),
        search_radius=R,
        achieved_max_flags=interior.reshape(shape),
        spacing=s,
        lattice_points=K,
        refined=use_newton,
        source_sup_norm=norm,
    )


# ---------------------------------------------------------------------------


@dataclass
class RadiusCheck:
    passed: bool
    linf_violations: int
    holder_violations: int
    max_ratio_linf: float
    max_ratio_holder: Optional[float]
    bound_linf: float
    bound_holder: Optional[float]


def argmax_radius_check(result: SupConvResult, phi: LatticeField, holder=None, tol: float = 1e-12) -> RadiusCheck:
    """Verify ``|xi_0| <= (2|phi|_inf eps)^{1/2}`` and, with ``holder=(gamma, seminorm)``,
    ``|xi_0| <= (eps [phi]_gamma)^{1/(2-gamma)}`` at every site."""
    eps = result.epsilon
    b1 = math.sqrt(2.0 * phi.sup_norm * eps)
    nr = result.argmax_norm
    v1 = int(np.sum(nr > b1 * (1 + tol) + tol))
    r1 = float(nr.max() / b1) if b1 > 0 else (0.0 if nr.max() == 0 else math.inf)
    v2, r2, b2 = 0, None, None
    if holder is not None:
        gamma, semi = holder
        b2 = (eps * semi) ** (1.0 / (2.0 - gamma))
        v2 = int(np.sum(nr > b2 * (1 + tol) + tol))
        r2 = float(nr.max() / b2) if b2 > 0 else math.inf
    return RadiusCheck(v1 == 0 and v2 == 0, v1, v2, r1, r2, b1, b2)


def semiconvexity_check(result: SupConvResult) -> float:
    """Most negative second difference quotient of ``phi_eps`` along axes and diagonals."""
    f = result.phi_eps
    H, valid = real_hessian(f)
    d = H.shape[-1]
    vals = [H[..., a, a] for a in range(d)]
    for a in range(d):
        for b in range(a + 1, d):
            vals.append(0.5 * (H[..., a, a] + H[..., b, b]) + H[..., a, b])
            vals.append(0.5 * (H[..., a, a] + H[..., b, b]) - H[..., a, b])
    stack = np.stack(vals)
    m = valid & f.owned_mask()
    return float(min(0.0, stack[:, m].min()))


def _eps_list(eps_list):
    e = np.sort(np.asarray(eps_list, float))[::-1]
    if len(e) < 4:
        raise DomainError("rate studies need at least 4 epsilon values")
    return e


def l1_rate_study(phi: LatticeField, eps_list, results: Optional[Sequence[SupConvResult]] = None) -> RateFit:
    """Fit ``|phi_eps - phi|_{L1}`` against ``eps``."""
    eps = _eps_list(eps_list)
    res = results or [sup_convolve(phi, e) for e in eps]
    vals = [res_i.phi_eps.l1_norm(res_i.phi_eps.values - phi.values) for res_i in res]
    return fit_rate(eps, vals, label="l1_gap")


def hessian_floor_study(phi: LatticeField, eps_list, cone: ConeSpec,
                        results: Optional[Sequence[SupConvResult]] = None, check_input: bool = True) -> RateFit:
    """Minimal slack ``sigma(eps)`` making ``phi_eps`` pointwise admissible, with a power-law fit.

    Raises
    ------
    PreconditionError
        If ``phi`` fails the viscosity-probe admissibility test.
    """
    eps = _eps_list(eps_list)
    if check_input:
        rep = admissibility(phi, cone, 0.0, mode="viscosity")
        if not rep.passed:
            raise PreconditionError("input field is not admissible", witness=rep.worst_site)
    res = results or [sup_convolve(phi, e) for e in eps]
    sig = [minimal_slack(r.phi_eps, cone) for r in res]
    fit = fit_rate(eps, sig, label="hessian_floor", zero_tol=1e-12)
    fit.extra["max_sigma"] = float(max(sig))
    return fit


# ---------------------------------------------------------------------------
# Hessian of |xi(z)|^2


def _exp_normalized(ch, z, xi):
    M = ch.M
    zc = ch.forward(z)
    w, cw = M.exp(zc, np.einsum("...ai,...i->...a", ch.jacobian(z), xi), ch.chart, check=False)
    return M.to_normalized(np.broadcast_to(ch.z0, w.shape), ch.chart, w, cw)


def solve_xi(ch, z, target, xi0, tol: float = 1e-14, max_iter: int = 100) -> np.ndarray:
    """Solve ``exp_z(xi) = target`` in normalised coordinates by damped Newton from ``xi0``.

    Raises
    ------
    ConvergenceError
        If the residual stays above ``tol`` after ``max_iter`` steps.
    """
    n = ch.M.n
    xi = np.array(xi0, complex)
    h = 1e-7
    for it in range(max_iter):
        r = target - _exp_normalized(ch, z, xi)
        if np.linalg.norm(r) <= tol:
            return xi
        # real Jacobian of the complex map, by central differences
        J = np.empty((2 * n, 2 * n))
        for a in range(2 * n):
            e = np.zeros(n, complex)
            e[a // 2] = h if a % 2 == 0 else 1j * h
            dv = (_exp_normalized(ch, z, xi + e) - _exp_normalized(ch, z, xi - e)) / (2 * h)
            J[0::2, a] = dv.real
            J[1::2, a] = dv.imag
        rr = np.empty(2 * n)
        rr[0::2], rr[1::2] = r.real, r.imag
        dx = np.linalg.solve(J, rr)
        xi = xi + (dx[0::2] + 1j * dx[1::2])
    r = target - _exp_normalized(ch, z, xi)
    if np.linalg.norm(r) <= tol * 10:
        return xi
    raise ConvergenceError(f"implicit solve for xi(z) stalled at residual {np.linalg.norm(r):.3g}")


def xi_field_hessian_bound(M: ManifoldModel, x0, xi0, step: Optional[float] = None) -> float:
    """``| d dbar |xi(z)|^2 (x0) + c(xi0, conj xi0) |`` for the field ``exp_z xi(z) = exp_x0 xi0 + N z``.

    Works in normalised coordinates at ``x0``; ``N`` is the Hermitian square
    root of ``g(w0)^{-1}`` so that the affine family is isometric at first
    order. The complex Hessian at 0 is taken by central differences.
    """
    if not isinstance(x0, ChartPoint):
        x0 = ChartPoint.of(x0)
    n = M.n
    xi0 = np.atleast_1d(np.asarray(xi0, complex))
    if np.all(xi0 == 0):
        return 0.0
    ch = normalized_chart(M, x0)
    zero = np.zeros(n, complex)
    w0 = _exp_normalized(ch, zero, xi0)
    Gw = M.normalized_metric(w0)
    ev, V = np.linalg.eigh(Gw)
    Nm = V @ np.diag(ev ** -0.5) @ np.conj(V.T)
    h = step or 1e-3

    def q(zz):
        target = w0 + Nm @ zz
        xi = solve_xi(ch, zz, target, xi0)
        G = M.normalized_metric(zz)
        return float(np.real(xi @ G @ np.conj(xi)))

    d = 2 * n
    f0 = q(zero)
    H = np.empty((d, d))

    def pt(offs):
        zz = zero.copy()
        for a, o in offs:
            zz[a // 2] += o if a % 2 == 0 else 1j * o
        return zz

    for a in range(d):
        H[a, a] = (q(pt([(a, h)])) - 2 * f0 + q(pt([(a, -h)]))) / h ** 2
        for b in range(a + 1, d):
            H[a, b] = H[b, a] = (q(pt([(a, h), (b, h)])) - q(pt([(a, h), (b, -h)]))
                                 - q(pt([(a, -h), (b, h)])) + q(pt([(a, -h), (b, -h)]))) / (4 * h * h)
    cplx = complex_from_real(H)
    c = M.curvature()
    corr = np.einsum("abij,a,b->ij", c, xi0, np.conj(xi0))
    return float(np.abs(cplx + corr).max())
