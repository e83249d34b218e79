"""Model Kahler manifolds: flat tori, the Fubini-Study line and its products.

Points are given by complex chart coordinates ``z`` (last axis of length
``n``) together with an integer chart id. The flat torus has a single chart.
The projective line uses chart 0 (``z = P/Q``) and chart 1 (``w = Q/P``) of
homogeneous coordinates ``[P:Q]``; products encode the chart of factor ``j``
in bit ``j`` of the id.

Metric convention: ``G[a, b] = g_{a bbar}`` and ``|xi|_z^2 = xi^T G conj(xi)``.
The Fubini-Study metric is ``(1 + |z|^2)^-2`` in either chart, a round
sphere of radius 1/2 (Gaussian curvature 4) with normalised curvature
coefficient ``c = 2``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, DomainError

INJ_FRACTION = 0.45
P1_CHART_HALF_WIDTH = 2.0


@dataclass(frozen=True)
class ChartPoint:
    """A point in chart ``chart`` with coordinates ``z`` (complex, length n)."""

    chart: int
    z: tuple

    @classmethod
    def of(cls, z, chart: int = 0) -> "ChartPoint":
        return cls(int(chart), tuple(complex(v) for v in np.atleast_1d(z)))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.z, dtype=complex)


# ---------------------------------------------------------------------------
# projective line primitives (vectorised over leading axes, scalar complex)


def _p1_hom(x, c):
    """Homogeneous pair of chart coordinate ``x`` in chart ``c``."""
    one = np.ones_like(x)
    c = np.asarray(c)
    P = np.where(c == 0, x, one)
    Q = np.where(c == 0, one, x)
    return P, Q


def _p1_local(P, Q, c):
    c = np.asarray(c)
    return np.where(c == 0, P, Q), np.where(c == 0, Q, P)


def _p1_canon(P, Q):
    c = (np.abs(P) > np.abs(Q)).astype(int)
    x = np.where(c == 0, P / np.where(c == 0, Q, 1.0), Q / np.where(c == 1, P, 1.0))
    return x, c


def _p1_to_normalized(x0, c0, P, Q):
    p, q = _p1_local(P, Q, c0)
    with np.errstate(divide="ignore", invalid="ignore"):
        # the antipode of x0 maps to infinity
        return (p - x0 * q) / (q + np.conj(x0) * p)


def _p1_from_normalized(x0, c0, zeta):
    p = zeta + x0
    q = 1.0 - np.conj(x0) * zeta
    P, Q = _p1_local(p, q, c0)  # the swap is an involution
    return _p1_canon(P, Q)


def _radial_factor(r, f, series):
    # f(r) / r, with a Taylor series near 0 to avoid dividing by tiny r
    small = r < 1e-6
    safe = np.where(small, 1.0, r)
    return np.where(small, 1.0 + series * r * r, f(safe) / safe)


def _tan_map(eta):
    return _radial_factor(np.abs(eta), np.tan, 1.0 / 3.0) * eta


def _arctan_map(zeta):
    with np.errstate(invalid="ignore"):
        return _radial_factor(np.abs(zeta), np.arctan, -1.0 / 3.0) * zeta


def p1_embedding(x, c) -> np.ndarray:
    """Unit-sphere image ``(2 Re P conj Q, 2 Im P conj Q, |P|^2 - |Q|^2) / (|P|^2 + |Q|^2)``."""
    P, Q = _p1_hom(np.asarray(x, complex), c)
    pq = P * np.conj(Q)
    nrm = np.abs(P) ** 2 + np.abs(Q) ** 2
    return np.stack([2 * pq.real / nrm, 2 * pq.imag / nrm, (np.abs(P) ** 2 - np.abs(Q) ** 2) / nrm], axis=-1)


def p1_from_embedding(p) -> tuple:
    """Inverse of :func:`p1_embedding`, returning the canonical chart."""
    p = np.asarray(p, float)
    # [P:Q] with P conj Q = (p1 + i p2)/2 and |P|^2 - |Q|^2 = p3 on |P|^2+|Q|^2 = 1
    ap2 = 0.5 * (1.0 + p[..., 2])
    aq2 = 0.5 * (1.0 - p[..., 2])
    pq = 0.5 * (p[..., 0] + 1j * p[..., 1])
    use_q = aq2 >= ap2
    # choose the larger modulus real and positive
    Q = np.where(use_q, np.sqrt(np.maximum(aq2, 0.0)), 0.0).astype(complex)
    P = np.where(use_q, pq / np.where(use_q, Q, 1.0), np.sqrt(np.maximum(ap2, 0.0)))
    Q = np.where(use_q, Q, np.conj(pq) / np.where(use_q, 1.0, P))
    return _p1_canon(P, Q)


# ---------------------------------------------------------------------------


class ManifoldModel:
    """Common interface; subclasses supply the closed-form geometry."""

    kind = "abstract"
    n = 1
    injectivity_radius = math.inf

    @property
    def injectivity_bound(self) -> float:
        return INJ_FRACTION * self.injectivity_radius

    @property
    def charts(self) -> list:
        return [0]

    # subclasses implement the following on arrays
    def _check(self, z, chart):
        return np.asarray(z, complex), np.asarray(chart, int)

    def metric(self, z, chart=0) -> np.ndarray:
        raise NotImplementedError

    def curvature(self) -> np.ndarray:
        raise NotImplementedError

    def to_normalized(self, z0, c0, w, cw):
        raise NotImplementedError

    def from_normalized(self, z0, c0, zeta):
        raise NotImplementedError

    def chart_jacobian(self, z0, c0, zeta) -> np.ndarray:
        """``J[..., a, i] = d z_a / d zeta_i`` of the normalised chart at ``(z0, c0)``."""
        raise NotImplementedError

    def chart_forward(self, z0, c0, zeta):
        """Normalised coordinate to coordinate in chart ``c0`` (no re-charting)."""
        raise NotImplementedError

    def normalized_metric(self, zeta) -> np.ndarray:
        """Metric in normalised coordinates; the same at every base point here."""
        raise NotImplementedError

    def exp_zeta(self, eta):
        """Exponential map at the origin of a normalised chart, in that chart."""
        raise NotImplementedError

    def log_zeta(self, zeta):
        raise NotImplementedError

    # generic layer ------------------------------------------------------

    def norm(self, z, xi, chart=0) -> np.ndarray:
        """Length ``|xi|_z`` of tangent vectors at ``z``."""
        G = self.metric(z, chart)
        xi = np.asarray(xi, complex)
        q = np.einsum("...a,...ab,...b->...", xi, G, np.conj(xi))
        return np.sqrt(np.maximum(q.real, 0.0))

    def _lin(self, z0, c0):
        return self.chart_jacobian(z0, c0, np.zeros_like(np.asarray(z0, complex)))

    def exp(self, z, xi, chart=0, check: bool = True):
        """Geodesic endpoint ``exp_z(xi)`` as ``(w, chart_w)`` arrays."""
        z, chart = self._check(z, chart)
        xi = np.asarray(xi, complex)
        if check:
            nr = self.norm(z, xi, chart)
            if np.any(nr > self.injectivity_bound * (1 + 1e-12)):
                raise DomainError(f"|xi| = {float(np.max(nr)):.4g} exceeds injectivity bound "
                                  f"{self.injectivity_bound:.4g}; use a smaller step or eps")
        J0 = self._lin(z, chart)
        eta = np.linalg.solve(J0, xi[..., None])[..., 0]
        return self.from_normalized(z, chart, self.exp_zeta(eta))

    def log(self, z, w, chart=0, chart_w=0, check: bool = True):
        """Tangent vector at ``z`` pointing to ``w`` with ``|xi|_z = d(z, w)``."""
        z, chart = self._check(z, chart)
        w, chart_w = self._check(w, chart_w)
        zeta = self.to_normalized(z, chart, w, chart_w)
        eta = self.log_zeta(zeta)
        if check:
            d = np.sqrt(np.sum(np.abs(eta) ** 2, axis=-1))
            if np.any(d > self.injectivity_bound * (1 + 1e-12)):
                raise DomainError(f"d(z, w) = {float(np.max(d)):.4g} beyond injectivity bound "
                                  f"{self.injectivity_bound:.4g}")
        J0 = self._lin(z, chart)
        return np.einsum("...ai,...i->...a", J0, eta)

    def distance(self, z, w, chart=0, chart_w=0) -> np.ndarray:
        zeta = self.to_normalized(np.asarray(z, complex), np.asarray(chart, int),
                                  np.asarray(w, complex), np.asarray(chart_w, int))
        eta = self.log_zeta(zeta)
        return np.sqrt(np.sum(np.abs(eta) ** 2, axis=-1))

    def bisectional(self, eta, xi) -> np.ndarray:
        """``c_{ijkl} eta_i conj(eta_j) xi_k conj(xi_l)`` in normalised coordinates."""
        c = self.curvature()
        eta = np.asarray(eta, complex)
        xi = np.asarray(xi, complex)
        v = np.einsum("ijkl,...i,...j,...k,...l->...", c, eta, np.conj(eta), xi, np.conj(xi))
        return v.real

    def to_config(self) -> dict:
        raise NotImplementedError


class FlatTorus(ManifoldModel):
    """``C^n`` modulo ``period_j (Z + iZ)`` in each coordinate, flat metric."""

    kind = "flat_torus"

    def __init__(self, n: int = 1, periods=None):
        if n < 1:
            raise DomainError("torus dimension must be >= 1")
        self.n = int(n)
        p = [1.0] * n if periods is None else [float(v) for v in periods]
        if len(p) != n or min(p) <= 0:
            raise DomainError("need n positive periods")
        self.periods = np.array(p)
        self.injectivity_radius = 0.5 * float(self.periods.min())

    def __repr__(self):
        return f"FlatTorus(n={self.n}, periods={self.periods.tolist()})"

    def wrap(self, z):
        """Reduce to the fundamental domain ``[0, period)`` on every real axis."""
        z = np.asarray(z, complex)
        p = self.periods
        return np.mod(z.real, p) + 1j * np.mod(z.imag, p)

    def shortest(self, d):
        d = np.asarray(d, complex)
        p = self.periods
        re = d.real - p * np.round(d.real / p)
        im = d.imag - p * np.round(d.imag / p)
        return re + 1j * im

    def metric(self, z, chart=0):
        z = np.asarray(z, complex)
        return np.broadcast_to(np.eye(self.n, dtype=complex), z.shape[:-1] + (self.n, self.n)).copy()

    def curvature(self):
        return np.zeros((self.n,) * 4, dtype=complex)

    def to_normalized(self, z0, c0, w, cw):
        return self.shortest(np.asarray(w, complex) - np.asarray(z0, complex))

    def from_normalized(self, z0, c0, zeta):
        w = self.wrap(np.asarray(z0, complex) + zeta)
        return w, np.zeros(w.shape[:-1], dtype=int)

    def chart_jacobian(self, z0, c0, zeta):
        zeta = np.asarray(zeta, complex)
        return np.broadcast_to(np.eye(self.n, dtype=complex), zeta.shape[:-1] + (self.n, self.n)).copy()

    def chart_forward(self, z0, c0, zeta):
        return np.asarray(z0, complex) + zeta

    def chart_inverse(self, z0, c0, z):
        return np.asarray(z, complex) - np.asarray(z0, complex)

    def normalized_metric(self, zeta):
        return self.metric(zeta)

    def exp_zeta(self, eta):
        return np.asarray(eta, complex)

    def log_zeta(self, zeta):
        return np.asarray(zeta, complex)

    def exp_unwrapped(self, z, xi):
        """``z + xi`` on the universal cover (no reduction modulo the lattice)."""
        return np.asarray(z, complex) + np.asarray(xi, complex)

    def to_config(self):
        return {"kind": self.kind, "n": self.n, "periods": self.periods.tolist()}


class FubiniStudyP1(ManifoldModel):
    """The projective line with ``g = (1 + |z|^2)^-2`` in both affine charts."""

    kind = "fubini_study_p1"
    n = 1
    injectivity_radius = math.pi / 2

    def __init__(self, chart_half_width: float = P1_CHART_HALF_WIDTH):
        self.chart_half_width = float(chart_half_width)

    def __repr__(self):
        return "FubiniStudyP1()"

    @property
    def charts(self):
        return [0, 1]

    def _check(self, z, chart):
        z = np.asarray(z, complex)
        chart = np.asarray(chart, int)
        if z.shape[-1:] != (1,):
            raise DomainError("FubiniStudyP1 points have one complex coordinate")
        L = self.chart_half_width
        if np.any(np.abs(z.real) > L + 1e-12) or np.any(np.abs(z.imag) > L + 1e-12):
            raise DomainError(f"point outside chart square [-{L}, {L}]^2")
        if np.any((chart != 0) & (chart != 1)):
            raise DomainError("FubiniStudyP1 chart id must be 0 or 1")
        return z, chart

    def metric(self, z, chart=0):
        z, _ = self._check(z, chart)
        return ((1.0 + np.abs(z) ** 2) ** -2)[..., None].astype(complex)

    def curvature(self):
        return np.full((1, 1, 1, 1), 2.0 + 0j)

    def to_normalized(self, z0, c0, w, cw):
        P, Q = _p1_hom(np.asarray(w, complex)[..., 0], cw)
        return _p1_to_normalized(np.asarray(z0, complex)[..., 0], c0, P, Q)[..., None]

    def from_normalized(self, z0, c0, zeta):
        x, c = _p1_from_normalized(np.asarray(z0, complex)[..., 0], c0, np.asarray(zeta, complex)[..., 0])
        return x[..., None], c

    def chart_jacobian(self, z0, c0, zeta):
        x0 = np.asarray(z0, complex)[..., 0]
        ze = np.asarray(zeta, complex)[..., 0]
        return ((1.0 + np.abs(x0) ** 2) / (1.0 - np.conj(x0) * ze) ** 2)[..., None, None]

    def chart_forward(self, z0, c0, zeta):
        x0 = np.asarray(z0, complex)[..., 0]
        ze = np.asarray(zeta, complex)[..., 0]
        return ((ze + x0) / (1.0 - np.conj(x0) * ze))[..., None]

    def chart_inverse(self, z0, c0, z):
        x0 = np.asarray(z0, complex)[..., 0]
        x = np.asarray(z, complex)[..., 0]
        return ((x - x0) / (1.0 + np.conj(x0) * x))[..., None]

    def normalized_metric(self, zeta):
        zeta = np.asarray(zeta, complex)
        return ((1.0 + np.abs(zeta[..., 0]) ** 2) ** -2)[..., None, None].astype(complex)

    def exp_zeta(self, eta):
        return _tan_map(np.asarray(eta, complex))

    def log_zeta(self, zeta):
        return _arctan_map(np.asarray(zeta, complex))

    def embed(self, z, chart=0):
        return p1_embedding(np.asarray(z, complex)[..., 0], chart)

    def to_config(self):
        return {"kind": self.kind}


class ProductOfP1(ManifoldModel):
    """``(P^1)^k`` with the product Fubini-Study metric; chart bit j is factor j."""

    kind = "product_p1"
    injectivity_radius = math.pi / 2

    def __init__(self, factors: int = 2, chart_half_width: float = P1_CHART_HALF_WIDTH):
        if factors < 1:
            raise DomainError("need at least one factor")
        self.n = int(factors)
        self.factors = self.n
        self.chart_half_width = float(chart_half_width)

    def __repr__(self):
        return f"ProductOfP1(factors={self.n})"

    @property
    def charts(self):
        return list(range(2 ** self.n))

    def bits(self, chart):
        chart = np.asarray(chart, int)
        return (chart[..., None] >> np.arange(self.n)) & 1

    def _check(self, z, chart):
        z = np.asarray(z, complex)
        chart = np.asarray(chart, int)
        if z.shape[-1:] != (self.n,):
            raise DomainError(f"ProductOfP1 points have {self.n} coordinates")
        L = self.chart_half_width
        if np.any(np.abs(z.real) > L + 1e-12) or np.any(np.abs(z.imag) > L + 1e-12):
            raise DomainError(f"point outside chart square [-{L}, {L}]^2 in some factor")
        if np.any((chart < 0) | (chart >= 2 ** self.n)):
            raise DomainError("chart id out of range")
        return z, chart

    def metric(self, z, chart=0):
        z, _ = self._check(z, chart)
        d = (1.0 + np.abs(z) ** 2) ** -2
        return np.einsum("...i,ij->...ij", d, np.eye(self.n)).astype(complex)

    def curvature(self):
        c = np.zeros((self.n,) * 4, dtype=complex)
        for j in range(self.n):
            c[j, j, j, j] = 2.0
        return c

    def to_normalized(self, z0, c0, w, cw):
        b0, bw = self.bits(c0), self.bits(cw)
        P, Q = _p1_hom(np.asarray(w, complex), bw)
        return _p1_to_normalized(np.asarray(z0, complex), b0, P, Q)

    def from_normalized(self, z0, c0, zeta):
        x, c = _p1_from_normalized(np.asarray(z0, complex), self.bits(c0), np.asarray(zeta, complex))
        return x, np.sum(c << np.arange(self.n), axis=-1)

    def chart_jacobian(self, z0, c0, zeta):
        x0 = np.asarray(z0, complex)
        ze = np.asarray(zeta, complex)
        d = (1.0 + np.abs(x0) ** 2) / (1.0 - np.conj(x0) * ze) ** 2
        return np.einsum("...i,ij->...ij", d, np.eye(self.n))

    def chart_forward(self, z0, c0, zeta):
        x0 = np.asarray(z0, complex)
        return (zeta + x0) / (1.0 - np.conj(x0) * zeta)

    def chart_inverse(self, z0, c0, z):
        x0 = np.asarray(z0, complex)
        return (z - x0) / (1.0 + np.conj(x0) * z)

    def normalized_metric(self, zeta):
        zeta = np.asarray(zeta, complex)
        d = (1.0 + np.abs(zeta) ** 2) ** -2
        return np.einsum("...i,ij->...ij", d, np.eye(self.n)).astype(complex)

    def exp_zeta(self, eta):
        return _tan_map(np.asarray(eta, complex))

    def log_zeta(self, zeta):
        return _arctan_map(np.asarray(zeta, complex))

    def to_config(self):
        return {"kind": self.kind, "factors": self.n}


# ---------------------------------------------------------------------------


def from_config(cfg) -> ManifoldModel:
    """Build a model from a dict, a JSON string or a path to a JSON file.

    Accepted shapes::

        {"kind": "flat_torus", "n": 2, "periods": [1.0, 1.0]}
        {"kind": "fubini_study_p1"}
        {"kind": "product_p1", "factors": 2}
    """
    if isinstance(cfg, str):
        s = cfg.strip()
        if s.startswith("{"):
            cfg = json.loads(s)
        else:
            with open(cfg) as fh:
                cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("manifold config must be an object", "$")
    kind = cfg.get("kind")
    try:
        if kind == "flat_torus":
            n = cfg.get("n", 1)
            if not isinstance(n, int) or n < 1:
                raise ConfigError("n must be a positive integer", "$.n")
            periods = cfg.get("periods")
            if periods is not None and (not isinstance(periods, list) or len(periods) != n):
                raise ConfigError(f"periods must be a list of {n} numbers", "$.periods")
            return FlatTorus(n, periods)
        if kind == "fubini_study_p1":
            return FubiniStudyP1()
        if kind == "product_p1":
            k = cfg.get("factors", cfg.get("n", 2))
            if not isinstance(k, int) or k < 1:
                raise ConfigError("factors must be a positive integer", "$.factors")
            return ProductOfP1(k)
    except DomainError as exc:
        raise ConfigError(str(exc), "$") from exc
    raise ConfigError(f"unknown manifold kind {kind!r}", "$.kind")


def _pt(p):
    if isinstance(p, ChartPoint):
        return p.array, p.chart
    return np.atleast_1d(np.asarray(p, complex)), 0


def metric_at(M: ManifoldModel, z) -> np.ndarray:
    """Hermitian metric matrix ``g_{i jbar}`` at a chart point."""
    arr, c = _pt(z)
    return M.metric(arr, c)


def curvature_at(M: ManifoldModel, z) -> np.ndarray:
    """Curvature coefficients ``c_{i k alpha beta}`` in normalised coordinates at ``z``.

    All catalogued models are homogeneous, so the tensor does not depend on
    the point; ``z`` is still validated against its chart.
    """
    arr, c = _pt(z)
    M.metric(arr, c)
    return M.curvature()


def exp_map(M: ManifoldModel, z, xi, strict: bool = True) -> ChartPoint:
    """Geodesic endpoint; ``strict=False`` allows steps up to the true injectivity radius."""
    arr, c = _pt(z)
    xi = np.atleast_1d(np.asarray(xi, complex))
    if not strict and np.any(M.norm(arr, xi, c) >= M.injectivity_radius):
        raise DomainError("step reaches the injectivity radius")
    w, cw = M.exp(arr, xi, c, check=strict)
    return ChartPoint.of(w, int(cw))


def log_map(M: ManifoldModel, z, w) -> np.ndarray:
    a, ca = _pt(z)
    b, cb = _pt(w)
    return M.log(a, b, ca, cb)


@dataclass
class ChartValidation:
    g0_residual: float
    linear_residual: float
    holomorphic_quadratic_residual: float
    fitted_curvature: np.ndarray
    curvature_residual: float


class ChartMap:
    """Normalised holomorphic chart centred at a base point.

    ``forward`` sends normalised coordinates to the base chart, ``jacobian``
    is ``dz/dzeta`` and ``metric`` is the pulled-back metric ``J^T G conj(J)``.
    """

    def __init__(self, M: ManifoldModel, z0, chart: int = 0):
        self.M = M
        self.z0 = np.atleast_1d(np.asarray(z0, complex))
        self.chart = int(chart)

    def forward(self, zeta):
        return self.M.chart_forward(self.z0, self.chart, np.asarray(zeta, complex))

    def inverse(self, z):
        return self.M.chart_inverse(self.z0, self.chart, np.asarray(z, complex))

    def jacobian(self, zeta):
        zeta = np.asarray(zeta, complex)
        z0 = np.broadcast_to(self.z0, zeta.shape)
        return self.M.chart_jacobian(z0, self.chart, zeta)

    def metric(self, zeta):
        J = self.jacobian(zeta)
        G = self.M.metric(self.forward(zeta), self.chart)
        return np.einsum("...ai,...ab,...bj->...ij", J, G, np.conj(J))

    def validate(self, radius: float = 0.01, points: int = 400, seed: int = 0) -> ChartValidation:
        """Fit a degree-4 polynomial to the pulled-back metric on a random stencil.

        Reports ``|g(0) - I|``, the size of the linear terms, the size of the
        holomorphic quadratic terms and the mixed quadratic coefficient, which
        must equal minus the curvature tensor.
        """
        n = self.M.n
        rng = np.random.default_rng(seed)
        d = 2 * n
        pts = rng.standard_normal((points, d))
        pts *= (radius * rng.uniform(0, 1, (points, 1)) ** (1 / d)) / np.linalg.norm(pts, axis=1, keepdims=True)
        zeta = pts[:, 0::2] + 1j * pts[:, 1::2]
        Gt = self.metric(zeta).reshape(points, n * n)
        exps = _monomials(d, 4)
        X = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2) / np.array(
            [radius ** e.sum() for e in exps])[None, :]
        coef, *_ = np.linalg.lstsq(X, Gt, rcond=None)
        scale = np.array([radius ** e.sum() for e in exps])[:, None]
        coef = coef / scale
        deg = exps.sum(axis=1)
        const = coef[deg == 0].reshape(n, n)
        lin = coef[deg == 1]
        # real Hessian of the quadratic part per metric entry
        H = np.zeros((d, d, n * n), dtype=complex)
        for e, cf in zip(exps[deg == 2], coef[deg == 2]):
            idx = np.nonzero(e)[0]
            if len(idx) == 1:
                H[idx[0], idx[0]] += 2 * cf
            else:
                H[idx[0], idx[1]] += cf
                H[idx[1], idx[0]] += cf
        xs, ys = slice(0, d, 2), slice(1, d, 2)
        Hxx, Hyy, Hxy, Hyx = H[xs, xs], H[ys, ys], H[xs, ys], H[ys, xs]
        mixed = 0.25 * (Hxx + Hyy + 1j * (Hxy - Hyx))
        holo = 0.25 * (Hxx - Hyy - 1j * (Hxy + Hyx))
        fitted_c = -np.transpose(mixed.reshape(n, n, n, n), (2, 3, 0, 1))
        c = self.M.curvature()
        return ChartValidation(
            g0_residual=float(np.abs(const - np.eye(n)).max()),
            linear_residual=float(np.abs(lin).max()),
            holomorphic_quadratic_residual=float(np.abs(holo).max()),
            fitted_curvature=fitted_c,
            curvature_residual=float(np.abs(fitted_c - c).max()),
        )


def _monomials(d: int, degree: int) -> np.ndarray:
    out = []

    def rec(prefix, left, pos):
        if pos == d:
            out.append(prefix)
            return
        for k in range(left + 1):
            rec(prefix + [k], left - k, pos + 1)

    rec([], degree, 0)
    out.sort(key=lambda e: (sum(e), [-v for v in e]))
    return np.array(out, dtype=int)


def normalized_chart(M: ManifoldModel, x0) -> ChartMap:
    """Holomorphic chart centred at ``x0`` with ``g = I - c zeta zetabar + O(|zeta|^3)``.

    The flat torus uses a translation; the projective line uses the Mobius
    isometry taking 0 to ``x0``, which is normalised to every order.
    """
    arr, c = _pt(x0)
    M.metric(arr, c)
    return ChartMap(M, arr, c)


def exp_taylor_model(c: np.ndarray, z, xi) -> np.ndarray:
    """Third-order model ``z_m + xi_m + c_{jklm} (zbar_k/2 + xibar_k/6) xi_j xi_l``."""
    z = np.asarray(z, complex)
    xi = np.asarray(xi, complex)
    w = 0.5 * np.conj(z) + np.conj(xi) / 6.0
    return z + xi + np.einsum("jklm,...k,...j,...l->...m", c, w, xi, xi)


def exp_taylor_residual(M: ManifoldModel, z, xi, x0=None) -> float:
    """Distance between ``exp_z(xi)`` and its third-order model.

    ``z`` and ``xi`` are normalised coordinates at the base point ``x0``
    (default: the origin of chart 0).
    """
    z = np.atleast_1d(np.asarray(z, complex))
    xi = np.atleast_1d(np.asarray(xi, complex))
    base = ChartPoint.of(np.zeros(M.n)) if x0 is None else x0
    ch = normalized_chart(M, base)
    zc = ch.forward(z)
    xic = ch.jacobian(z) @ xi
    w, cw = M.exp(zc, xic, ch.chart)
    wz = M.to_normalized(ch.z0, ch.chart, w, cw)
    return float(np.linalg.norm(wz - exp_taylor_model(M.curvature(), z, xi)))


def alpha(d: int) -> float:
    """Volume of the unit ball in ``R^d``."""
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def euclidean_sphere_area(n: int, r: float) -> float:
    """``2n alpha(2n) r^(2n-1)``, the flat area of a sphere in ``C^n``."""
    return 2 * n * alpha(2 * n) * r ** (2 * n - 1)


def _sphere_grid(d: int, samples: int):
    """Midpoint grid of hyperspherical angles on ``S^(d-1)``: (angles, cell area)."""
    axes = []
    widths = []
    for k in range(d - 1):
        if k == d - 2:
            m = samples
            axes.append((np.arange(m) + 0.5) * 2 * math.pi / m)
            widths.append(2 * math.pi / m)
        else:
            m = max(samples // 2, 4)
            axes.append((np.arange(m) + 0.5) * math.pi / m)
            widths.append(math.pi / m)
    ang = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d - 1)
    return ang, float(np.prod(widths))


def _sphere_point(ang: np.ndarray) -> np.ndarray:
    d = ang.shape[-1] + 1
    x = np.ones(ang.shape[:-1] + (d,))
    s = np.ones(ang.shape[:-1])
    for k in range(d - 1):
        x[..., k] = s * np.cos(ang[..., k])
        s = s * np.sin(ang[..., k])
    x[..., d - 1] = s
    return x


def sphere_quadrature(M: ManifoldModel, x, r: float, angular_samples: Optional[int] = None):
    """Quadrature nodes and weights on the geodesic sphere of radius ``r``.

    The tangent sphere is parametrised by hyperspherical angles and pushed
    through ``exp``; the area element is the Gram determinant of the image
    tangents in normalised coordinates. Midpoint rule with
    ``angular_samples`` cells on the periodic angle (default 256 for n = 1,
    32 otherwise) and half as many on each polar angle.

    Returns
    -------
    (w, chart_w, weights)
        Chart coordinates of the nodes, their chart ids and the weights.
    """
    if not (0 < r <= M.injectivity_bound * (1 + 1e-12)):
        raise DomainError(f"radius {r} not in (0, {M.injectivity_bound:.4g}]")
    arr, c = _pt(x)
    M.metric(arr, c)
    n = M.n
    d = 2 * n
    samples = angular_samples or (256 if n == 1 else 32)
    ang, cell = _sphere_grid(d, samples)
    h = 1e-5

    def image(a):
        u = _sphere_point(a)
        eta = r * (u[..., 0::2] + 1j * u[..., 1::2])
        return M.exp_zeta(eta)

    base = image(ang)
    G = M.normalized_metric(base)
    tangents = []
    for k in range(d - 1):
        e = np.zeros(d - 1)
        e[k] = h
        tangents.append((image(ang + e) - image(ang - e)) / (2 * h))
    T = np.stack(tangents, axis=-2)  # (..., d-1, n)
    gram = np.einsum("...ia,...ab,...jb->...ij", T, G, np.conj(T)).real
    dens = np.sqrt(np.maximum(np.linalg.det(gram), 0.0))
    w, cw = M.from_normalized(np.broadcast_to(arr, base.shape), c, base)
    return w, cw, dens * cell


def ball_quadrature(M: ManifoldModel, x, r: float, angular_samples: Optional[int] = None,
                    radial_nodes: int = 16):
    """Nodes and weights on the geodesic ball: Gauss-Legendre in the radius times spheres."""
    if not (0 < r <= M.injectivity_bound * (1 + 1e-12)):
        raise DomainError(f"radius {r} not in (0, {M.injectivity_bound:.4g}]")
    t, wt = np.polynomial.legendre.leggauss(radial_nodes)
    rho = 0.5 * r * (t + 1)
    ws, cs, ks = [], [], []
    for ri, wi in zip(rho, wt):
        w, cw, k = sphere_quadrature(M, x, ri, angular_samples)
        ws.append(w)
        cs.append(np.broadcast_to(cw, k.shape))
        ks.append(0.5 * r * wi * k)
    return np.concatenate(ws), np.concatenate(cs), np.concatenate(ks)


def geodesic_sphere_area(M: ManifoldModel, x, r: float, angular_samples: Optional[int] = None) -> float:
    """Riemannian measure of the geodesic sphere of radius ``r`` about ``x``."""
    return float(np.sum(sphere_quadrature(M, x, r, angular_samples)[2]))


def geodesic_ball_volume(M: ManifoldModel, x, r: float, angular_samples: Optional[int] = None,
                         radial_nodes: int = 16) -> float:
    """Riemannian volume of the geodesic ball about ``x``."""
    return float(np.sum(ball_quadrature(M, x, r, angular_samples, radial_nodes)[2]))


def sample_bisectional(M: ManifoldModel, count: int, seed: int = 0) -> np.ndarray:
    """Bisectional curvature on ``count`` random pairs of unit vectors."""
    rng = np.random.default_rng(seed)
    n = M.n

    def unit():
        v = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    return M.bisectional(unit(), unit())
