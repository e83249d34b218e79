"""Lattice scalar fields on the model manifolds and their complex Hessians.

Flat torus fields live on a uniform grid of ``N`` nodes per real axis, axes
ordered ``(x_1, y_1, x_2, y_2, ...)`` with ``z_j = x_j + i y_j``. A torus
field is periodic by default; ``periodic=False`` gives a flat patch whose
outer ring has no second differences.

Fields on the projective line are stored as two chart grids on the square
``[-L, L]^2`` (shape ``(2, N, N)``, ``N`` odd so that 0 is a node). The charts
are glued by the smooth partition of unity ``rho(t) = 1 / (1 + t^8)``, with
``t = |z|^2``, which satisfies ``rho(t) + rho(1/t) = 1``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .cone import ConeSpec, in_cone, minimal_shift
from .errors import DomainError, PreconditionError
from .manifold import (ChartPoint, FlatTorus, FubiniStudyP1, ManifoldModel, _pt, ball_quadrature,
                       from_config, sphere_quadrature)

TOL_HERM = 1e-10
OVERLAP_TOL = 1e-8
PARTITION_POWER = 8


@dataclass
class FieldRecipe:
    """Analytic description of a field as the maximum of smooth pieces.

    Each piece maps ``(z, chart)`` (complex array ``(..., n)``, int array) to
    real values. Torus pieces must be periodic; they are evaluated on the
    universal cover.
    """

    pieces: list
    label: str = ""
    gamma: Optional[float] = None
    seminorm: Optional[float] = None

    def __call__(self, z, chart=0):
        vals = [np.asarray(p(z, chart), float) for p in self.pieces]
        return np.max(np.stack(vals), axis=0) if len(vals) > 1 else vals[0]

    def shifted(self, c: float) -> "FieldRecipe":
        return FieldRecipe([(lambda z, ch, p=p: p(z, ch) + c) for p in self.pieces],
                           self.label, self.gamma, self.seminorm)


def partition_weight(z) -> np.ndarray:
    """``rho(|z|^2)`` for chart coordinates ``z`` (complex array)."""
    t = np.abs(np.asarray(z)) ** 2
    return 1.0 / (1.0 + t ** PARTITION_POWER)


class LatticeField:
    """Real samples on a manifold lattice with spacing ``h``.

    Parameters
    ----------
    manifold : FlatTorus or FubiniStudyP1
    values : ndarray
        Torus: shape ``(N,) * 2n``. Projective line: shape ``(2, N, N)``.
    h : float
        Lattice spacing in chart coordinates.
    periodic : bool
        Torus only. ``False`` treats the grid as a flat patch.
    origin : float
        Torus patch only: coordinate of index 0 on every axis.
    recipe : FieldRecipe, optional
        Exact evaluator used off the lattice when available.
    """

    def __init__(self, manifold: ManifoldModel, values, h: float, periodic: bool = True,
                 origin: float = 0.0, recipe: Optional[FieldRecipe] = None, name: str = "",
                 check_overlap: bool = True):
        self.manifold = manifold
        self.values = np.asarray(values, dtype=float)
        self.h = float(h)
        self.recipe = recipe
        self.name = name
        if self.h <= 0:
            raise DomainError("lattice spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("field values must be finite")
        if isinstance(manifold, FlatTorus):
            self.kind = "torus"
            n = manifold.n
            if self.values.ndim != 2 * n or len(set(self.values.shape)) != 1:
                raise DomainError(f"torus field needs shape (N,)*{2 * n}")
            self.N = self.values.shape[0]
            self.periodic = bool(periodic)
            self.origin = 0.0 if self.periodic else float(origin)
            if self.periodic:
                if np.ptp(manifold.periods) > 0:
                    raise DomainError("lattice fields need equal periods on every axis")
                if abs(self.N * self.h - manifold.periods[0]) > 1e-9 * manifold.periods[0]:
                    raise DomainError("N * h must equal the torus period")
        elif isinstance(manifold, FubiniStudyP1):
            self.kind = "p1"
            if self.values.ndim != 3 or self.values.shape[0] != 2 or self.values.shape[1] != self.values.shape[2]:
                raise DomainError("projective-line field needs shape (2, N, N)")
            self.N = self.values.shape[1]
            if self.N % 2 == 0:
                raise DomainError("chart grids need an odd node count")
            self.periodic = False
            self.origin = -manifold.chart_half_width
            if abs((self.N - 1) * self.h - 2 * manifold.chart_half_width) > 1e-9:
                raise DomainError("(N - 1) * h must equal the chart width")
        else:
            raise DomainError(f"lattice fields are not available on {manifold!r}")
        if self.N < 8:
            raise DomainError("need at least 8 samples per axis")
        if self.kind == "p1" and check_overlap:
            mism, tol = self.overlap_mismatch()
            if mism > tol:
                raise DomainError(f"chart overlap mismatch {mism:.3g} exceeds {tol:.3g}")

    # construction ------------------------------------------------------

    @classmethod
    def sample(cls, manifold: ManifoldModel, func, N: int, periodic: bool = True, origin: float = 0.0,
               span: Optional[float] = None, name: str = "") -> "LatticeField":
        """Sample ``func(z, chart)`` on a lattice; a FieldRecipe is kept for exact evaluation."""
        recipe = func if isinstance(func, FieldRecipe) else None
        if isinstance(manifold, FlatTorus):
            if periodic:
                h = float(manifold.periods[0]) / N
            else:
                h = float(span) / (N - 1) if span is not None else float(manifold.periods[0]) / N
            z = _torus_coords(manifold.n, N, h, 0.0 if periodic else origin)
            vals = func(z, np.zeros(z.shape[:-1], int))
            return cls(manifold, vals, h, periodic, origin, recipe, name)
        if isinstance(manifold, FubiniStudyP1):
            L = manifold.chart_half_width
            h = 2 * L / (N - 1)
            z, c = _p1_coords(N, L)
            vals = func(z, c)
            return cls(manifold, vals, h, recipe=recipe, name=name)
        raise DomainError(f"lattice fields are not available on {manifold!r}")

    def with_values(self, values, recipe: Optional[FieldRecipe] = None, name: str = "") -> "LatticeField":
        return LatticeField(self.manifold, values, self.h, self.periodic, self.origin, recipe,
                            name or self.name, check_overlap=False)

    def __add__(self, c: float) -> "LatticeField":
        rec = self.recipe.shifted(c) if self.recipe is not None else None
        return self.with_values(self.values + c, rec)

    def same_grid(self, other: "LatticeField") -> bool:
        return (self.kind == other.kind and self.values.shape == other.values.shape
                and abs(self.h - other.h) <= 1e-14 * self.h and self.periodic == other.periodic
                and abs(self.origin - other.origin) <= 1e-14
                and self.manifold.to_config() == other.manifold.to_config())

    # geometry of the lattice ----------------------------------------------

    @property
    def n(self) -> int:
        return self.manifold.n

    def site_coords(self):
        """Chart coordinates ``(..., n)`` and chart ids of every site."""
        if self.kind == "torus":
            z = _torus_coords(self.n, self.N, self.h, self.origin)
            return z, np.zeros(z.shape[:-1], int)
        return _p1_coords(self.N, self.manifold.chart_half_width)

    def owned_mask(self) -> np.ndarray:
        """Sites at which per-site reports are evaluated.

        Torus: all sites (patch: interior sites). Projective line: sites with
        ``|z| <= 1`` in their chart, which cover the sphere once up to the
        equator.
        """
        if self.kind == "torus":
            if self.periodic:
                return np.ones(self.values.shape, bool)
            m = np.zeros(self.values.shape, bool)
            m[(slice(1, -1),) * m.ndim] = True
            return m
        z, _ = self.site_coords()
        return np.abs(z[..., 0]) <= 1.0 + 1e-12

    def weights(self) -> np.ndarray:
        """Quadrature weights for the Riemannian volume."""
        if self.kind == "torus":
            w = np.full(self.values.shape, self.h ** (2 * self.n))
            if not self.periodic:
                for ax in range(w.ndim):
                    idx = [slice(None)] * w.ndim
                    idx[ax] = [0, -1]
                    w[tuple(idx)] *= 0.5
            return w
        z, _ = self.site_coords()
        g = (1.0 + np.abs(z[..., 0]) ** 2) ** -2
        return g * partition_weight(z[..., 0]) * self.h ** 2

    def integrate(self, values=None) -> float:
        v = self.values if values is None else np.asarray(values, float)
        return float(np.sum(v * self.weights()))

    def volume(self) -> float:
        return float(np.sum(self.weights()))

    def l1_norm(self, values=None) -> float:
        v = self.values if values is None else np.asarray(values, float)
        return self.integrate(np.abs(v))

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    # evaluation -----------------------------------------------------------

    def interp(self, z, chart=0) -> np.ndarray:
        """Multilinear interpolation of the samples at chart points ``z``."""
        z = np.asarray(z, complex)
        if self.kind == "torus":
            if not self.periodic:
                # lattice representative nearest the patch centre
                p = self.manifold.periods
                mid = self.origin + 0.5 * (self.N - 1) * self.h
                z = (z.real - p * np.round((z.real - mid) / p)) + 1j * (z.imag - p * np.round((z.imag - mid) / p))
            coords = []
            for j in range(self.n):
                coords.append((z[..., j].real - self.origin) / self.h)
                coords.append((z[..., j].imag - self.origin) / self.h)
            mode = "grid-wrap" if self.periodic else "nearest"
            return ndimage.map_coordinates(self.values, [c.ravel() for c in coords], order=1,
                                           mode=mode).reshape(z.shape[:-1])
        chart = np.broadcast_to(np.asarray(chart, int), z.shape[:-1])
        L = self.manifold.chart_half_width
        ix = (z[..., 0].real + L) / self.h
        iy = (z[..., 0].imag + L) / self.h
        out = np.empty(z.shape[:-1])
        for c in (0, 1):
            m = chart == c
            if np.any(m):
                out[m] = ndimage.map_coordinates(self.values[c], [ix[m], iy[m]], order=1, mode="nearest")
        return out

    def value_at(self, z, chart=0) -> np.ndarray:
        """Recipe value when available, otherwise the interpolant."""
        if self.recipe is not None:
            return np.asarray(self.recipe(np.asarray(z, complex), chart), float)
        return self.interp(z, chart)

    def overlap_mismatch(self):
        """Largest disagreement of chart 1 samples with the chart 0 interpolant.

        Returns ``(mismatch, tolerance)`` where the tolerance is ``1e-8`` plus
        the multilinear interpolation bound ``h^2/4 * max|second difference|/h^2``.
        """
        L = self.manifold.chart_half_width
        z, _ = _p1_coords(self.N, L)
        w = z[1, ..., 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = 1.0 / w
        inside = (np.abs(w) > 0) & (np.abs(x.real) < L - self.h) & (np.abs(x.imag) < L - self.h)
        if not np.any(inside):
            return 0.0, OVERLAP_TOL
        xin = x[inside][:, None]
        pred = self.interp(xin, np.zeros(xin.shape[0], int))
        mism = float(np.abs(pred - self.values[1][inside]).max())
        v0 = self.values[0]
        d2 = max(np.abs(np.diff(v0, 2, axis=0)).max(), np.abs(np.diff(v0, 2, axis=1)).max())
        return mism, OVERLAP_TOL + 0.5 * d2

    # oscillation for Holder estimates --------------------------------------

    def oscillation(self, radii) -> np.ndarray:
        """``sup_z sup_{d(w, z) < r} (phi(w) - phi(z))`` over lattice pairs, per radius."""
        radii = np.asarray(radii, float)
        rmax = float(radii.max())
        M = self.manifold
        if self.kind == "torus":
            k = int(math.ceil(rmax / self.h))
            d = 2 * self.n
            if (2 * k + 1) ** d > 2e5:
                raise DomainError("oscillation search too large; use fewer dimensions or radii")
            out = np.zeros(radii.shape)
            owned = self.owned_mask()
            for off in itertools.product(range(-k, k + 1), repeat=d):
                dist = self.h * math.sqrt(sum(o * o for o in off))
                if dist == 0 or dist >= rmax:
                    continue
                shifted, valid = _shift(self.values, off, self.periodic)
                diff = np.where(valid & owned, shifted - self.values, -np.inf).max()
                out = np.where(dist < radii, np.maximum(out, diff), out)
            return out
        # projective line: exact geodesic distance between chart nodes
        L = M.chart_half_width
        zs, cs = _p1_coords(self.N, L)
        owned = self.owned_mask()
        # geodesic length is |dz| / (1 + |z|^2) and owned pairs stay in |z| <= tan(pi/4 + r)
        k = min(int(math.ceil(rmax * (1.0 + math.tan(math.pi / 4 + rmax) ** 2) / self.h)), self.N)
        out = np.zeros(radii.shape)
        for ox in range(-k, k + 1):
            for oy in range(-k, k + 1):
                if ox == 0 and oy == 0:
                    continue
                off = (0, ox, oy)
                shifted, valid = _shift(self.values, off, False)
                zsh, _ = _shift(zs[..., 0], off, False)
                m = valid & owned
                if not np.any(m):
                    continue
                dist = M.distance(zs[m], zsh[m][:, None], cs[m], cs[m])
                diff = shifted[m] - self.values[m]
                for i, r in enumerate(radii):
                    sel = dist < r
                    if np.any(sel):
                        out[i] = max(out[i], float(diff[sel].max()))
        return out

    # I/O ------------------------------------------------------------------

    def header(self) -> dict:
        return {"manifold": self.manifold.to_config(), "kind": self.kind, "shape": list(self.values.shape),
                "h": self.h, "periodic": self.periodic, "origin": self.origin, "name": self.name}

    def save(self, stem: str, fmt: str = "bin") -> None:
        """Write ``stem.json`` plus ``stem.bin`` (little-endian float64) or ``stem.csv``."""
        hdr = self.header()
        hdr["format"] = fmt
        with open(stem + ".json", "w") as fh:
            json.dump(hdr, fh, indent=2, sort_keys=True)
        if fmt == "bin":
            self.values.astype("<f8").tofile(stem + ".bin")
        elif fmt == "csv":
            np.savetxt(stem + ".csv", self.values.reshape(-1), fmt="%.17g", header="value", comments="")
        else:
            raise DomainError(f"unknown field format {fmt!r}")

    @classmethod
    def load(cls, stem: str) -> "LatticeField":
        with open(stem + ".json") as fh:
            hdr = json.load(fh)
        shape = tuple(hdr["shape"])
        if hdr.get("format", "bin") == "bin":
            vals = np.fromfile(stem + ".bin", dtype="<f8").reshape(shape)
        else:
            vals = np.loadtxt(stem + ".csv", skiprows=1).reshape(shape)
        M = from_config(hdr["manifold"])
        return cls(M, vals, hdr["h"], hdr["periodic"], hdr["origin"], name=hdr.get("name", ""))


def _torus_coords(n: int, N: int, h: float, origin: float) -> np.ndarray:
    ax = origin + h * np.arange(N)
    grids = np.meshgrid(*([ax] * (2 * n)), indexing="ij")
    return np.stack([grids[2 * j] + 1j * grids[2 * j + 1] for j in range(n)], axis=-1)


def _p1_coords(N: int, L: float):
    ax = np.linspace(-L, L, N)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    z = np.stack([X + 1j * Y, X + 1j * Y])[..., None]
    c = np.zeros((2, N, N), int)
    c[1] = 1
    return z, c


def _shift(a: np.ndarray, off, periodic: bool):
    """``out[i] = a[i + off]`` with validity mask (wrapping when periodic)."""
    if periodic:
        return np.roll(a, tuple(-o for o in off), axis=tuple(range(len(off)))), np.ones(a.shape, bool)
    out = np.zeros_like(a)
    valid = np.zeros(a.shape, bool)
    src, dst = [], []
    for o, size in zip(off, a.shape):
        if o >= 0:
            src.append(slice(o, size))
            dst.append(slice(0, size - o))
        else:
            src.append(slice(0, size + o))
            dst.append(slice(-o, size))
    rest = tuple(slice(None) for _ in range(a.ndim - len(off)))
    out[tuple(dst) + rest] = a[tuple(src) + rest]
    valid[tuple(dst) + rest] = True
    return out, valid


# ---------------------------------------------------------------------------
# complex Hessian


@dataclass
class HermitianField:
    """Per-site complex Hessian ``phi_{j kbar}`` and metric ``g_{j kbar}``.

    ``valid`` is False on sites without a full stencil (chart boundary ring).
    """

    hess: np.ndarray
    metric: np.ndarray
    valid: np.ndarray

    def h_matrix(self) -> np.ndarray:
        """``g^{-1} (g + phi_{j kbar})`` per site."""
        return np.linalg.solve(self.metric, self.metric + self.hess)


def _axis_layout(phi: LatticeField):
    """Stencil axes of the real coordinates and the periodic flag."""
    if phi.kind == "torus":
        return list(range(2 * phi.n)), phi.values, phi.periodic
    return [1, 2], phi.values, False


def real_hessian(phi: LatticeField, values=None):
    """Second-order central-difference real Hessian, shape ``(..., 2n, 2n)``.

    Returns ``(H, valid)`` where ``valid`` marks sites with a full stencil.
    """
    axes, v, periodic = _axis_layout(phi)
    v = phi.values if values is None else np.asarray(values, float)
    d = len(axes)
    h2 = phi.h ** 2
    H = np.empty(v.shape + (d, d))
    valid = np.ones(v.shape, bool)

    def sh(offs):
        off = [0] * v.ndim
        for ax, o in offs:
            off[ax] = o
        out, ok = _shift(v, off, periodic)
        return out, ok

    for a in range(d):
        p, okp = sh([(axes[a], 1)])
        m, okm = sh([(axes[a], -1)])
        H[..., a, a] = (p - 2 * v + m) / h2
        valid &= okp & okm
        for b in range(a + 1, d):
            pp, o1 = sh([(axes[a], 1), (axes[b], 1)])
            pm, o2 = sh([(axes[a], 1), (axes[b], -1)])
            mp, o3 = sh([(axes[a], -1), (axes[b], 1)])
            mm, o4 = sh([(axes[a], -1), (axes[b], -1)])
            H[..., a, b] = H[..., b, a] = (pp - pm - mp + mm) / (4 * h2)
            valid &= o1 & o2 & o3 & o4
    return H, valid


def complex_from_real(Q: np.ndarray) -> np.ndarray:
    """``1/4 [Q_xx + Q_yy + i (Q_xy - Q_yx)]`` blockwise: the ``d d-bar`` part of a real Hessian."""
    xs, ys = slice(0, None, 2), slice(1, None, 2)
    return 0.25 * (Q[..., xs, xs] + Q[..., ys, ys] + 1j * (Q[..., xs, ys] - Q[..., ys, xs]))


def complex_hessian(phi: LatticeField, values=None) -> HermitianField:
    """Discrete complex Hessian ``phi_{j kbar}`` by central differences.

    Exact (to rounding) on fields quadratic in ``(z, zbar)``. Sites without a
    full stencil get NaN entries and ``valid=False``.
    """
    H, valid = real_hessian(phi, values)
    C = complex_from_real(H)
    C[~valid] = np.nan
    z, c = phi.site_coords()
    G = phi.manifold.metric(z, c)
    return HermitianField(C, G, valid)


def eigenvalues_of(hess: np.ndarray, metric: np.ndarray):
    """Ascending eigenvalues of ``g^{-1}(g + hess)`` and a per-site failure flag."""
    shape = hess.shape[:-2]
    n = hess.shape[-1]
    if n == 1:
        lam = (1.0 + (hess[..., 0, 0] / metric[..., 0, 0]).real)[..., None]
        return lam, ~np.isfinite(lam[..., 0])
    Lc = np.linalg.cholesky(metric)
    Li = np.linalg.inv(Lc)
    A = np.eye(n) + Li @ hess @ np.conj(np.swapaxes(Li, -1, -2))
    A = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    flat = A.reshape(-1, n, n)
    ok = np.all(np.isfinite(flat), axis=(1, 2))
    lam = np.full((flat.shape[0], n), np.nan)
    try:
        lam[ok] = np.linalg.eigvalsh(flat[ok])
    except np.linalg.LinAlgError:
        for i in np.nonzero(ok)[0]:
            try:
                lam[i] = np.linalg.eigvalsh(flat[i])
            except np.linalg.LinAlgError:
                ok[i] = False
    return lam.reshape(shape + (n,)), ~ok.reshape(shape)


def eigen_field(phi: LatticeField, values=None):
    """Per-site eigenvalues of ``h_phi``, ascending, and a flag of failed sites."""
    hf = complex_hessian(phi, values)
    return eigenvalues_of(hf.hess, hf.metric)


def laplacian(phi: LatticeField, values=None) -> np.ndarray:
    """Discrete ``Delta_g u = 4 g^{j kbar} u_{j kbar}``; NaN off the stencil."""
    hf = complex_hessian(phi, values)
    Gi = np.linalg.inv(hf.metric)
    return 4.0 * np.einsum("...kj,...jk->...", Gi, hf.hess).real


# ---------------------------------------------------------------------------
# admissibility


@dataclass
class AdmissibilityReport:
    fraction: float
    worst_site: Optional[tuple]
    worst_lambda: Optional[list]
    mode: str
    slack: float
    required_slack: float
    n_sites: int
    flagged_sites: int = 0
    under_approximation: bool = False
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.fraction >= 1.0

    def to_dict(self):
        return {"fraction": self.fraction, "worst_site": self.worst_site, "worst_lambda": self.worst_lambda,
                "mode": self.mode, "slack": self.slack, "required_slack": self.required_slack,
                "n_sites": self.n_sites, "flagged_sites": self.flagged_sites,
                "under_approximation": self.under_approximation, "note": self.note}


PROBE_LEVELS = 8


def _offsets(d: int, radius: float):
    k = int(math.floor(radius))
    out = []
    for off in itertools.product(range(-k, k + 1), repeat=d):
        if off == (0,) * d or sum(o * o for o in off) > radius * radius + 1e-9:
            continue
        # one representative per symmetric pair
        if next(o for o in off if o != 0) > 0:
            out.append(off)
    return np.array(out, dtype=int)


def _probe_directions(d: int):
    dirs = [np.eye(d)[a] for a in range(d)]
    for a in range(d):
        for b in range(a + 1, d):
            for s in (1.0, -1.0):
                v = np.zeros(d)
                v[a], v[b] = 1.0, s
                dirs.append(v / math.sqrt(2))
    return dirs


def admissibility(phi: LatticeField, cone: ConeSpec, slack: float = 0.0, mode: str = "pointwise",
                  rho_probe: Optional[float] = None, tol: float = 1e-12,
                  probe_levels: int = PROBE_LEVELS) -> AdmissibilityReport:
    """Check ``lambda(h_phi + slack I)`` in ``cone`` at every owned site.

    ``mode="pointwise"`` uses the discrete complex Hessian. ``mode="viscosity"``
    tests quadratic upper contact polynomials instead: at each site a real
    Hessian ``Q`` is a contact candidate if every symmetric second difference
    within ``rho_probe`` (default ``3h``) satisfies
    ``phi(x+d) + phi(x-d) - 2 phi(x) <= d^T Q d``. Candidates are the discrete
    Hessian ``Q0`` and ``Q0 + t v v^T``, ``Q0 + t I`` for axis and diagonal
    directions ``v`` and ``t = +-2^k``, ``|k| <= probe_levels``. This finite family
    under-approximates all contact polynomials and is flagged as such.
    """
    if slack < 0:
        raise DomainError("slack must be nonnegative")
    if cone.n != phi.n:
        raise DomainError("cone dimension differs from the manifold")
    owned = phi.owned_mask()
    if mode == "pointwise":
        lam, failed = eigen_field(phi)
        use = owned & ~failed & np.all(np.isfinite(lam), axis=-1)
        return _report(lam + slack, use, cone, "pointwise", slack, int((owned & failed).sum()))
    if mode != "viscosity":
        raise DomainError(f"unknown admissibility mode {mode!r}")
    rho = 3.0 if rho_probe is None else rho_probe / phi.h
    H, valid = real_hessian(phi)
    axes, v, periodic = _axis_layout(phi)
    d = len(axes)
    offs = _offsets(d, rho)
    # symmetric second differences for every offset
    D2 = np.empty((len(offs),) + v.shape)
    okall = valid.copy()
    for i, o in enumerate(offs):
        full = [0] * v.ndim
        for a, oa in zip(axes, o):
            full[a] = oa
        p, okp = _shift(v, full, periodic)
        m, okm = _shift(v, [-x for x in full], periodic)
        D2[i] = p + m - 2 * v
        okall &= okp & okm
    dd = (phi.h * offs).astype(float)
    z, c = phi.site_coords()
    G = phi.manifold.metric(z, c)
    scale = tol * (1.0 + phi.sup_norm)
    use = owned & okall
    base_fail = np.zeros(v.shape, bool)
    worst_need = np.zeros(v.shape)
    worst_lam = np.full(v.shape + (phi.n,), np.nan)
    candidates = [np.zeros((d, d))]
    for t in (2.0 ** k for k in range(-probe_levels, probe_levels + 1)):
        for s in (1.0, -1.0):
            candidates.append(s * t * np.eye(d))
            for u in _probe_directions(d):
                candidates.append(s * t * np.outer(u, u))
    for dQ in candidates:
        Q = H + dQ
        quad = np.einsum("ka,...ab,kb->k...", dd, Q, dd)
        feasible = np.all(D2 <= quad + scale, axis=0) & use
        if not np.any(feasible):
            continue
        Cq = complex_from_real(Q[feasible])
        lam, fl = eigenvalues_of(Cq, G[feasible])
        inside = np.asarray(in_cone(lam + slack, cone)) & ~fl
        idx = np.nonzero(feasible)
        bad = ~inside
        if np.any(bad):
            shift = minimal_shift(lam[bad] + slack, cone)
            sel = tuple(ix[bad] for ix in idx)
            upd = shift > worst_need[sel]
            base_fail[sel] = True
            ws = worst_need[sel]
            worst_need[sel] = np.where(upd, shift, ws)
            wl = worst_lam[sel]
            worst_lam[sel] = np.where(upd[:, None], lam[bad], wl)
    nsite = int(use.sum())
    ok = use & ~base_fail
    frac = float(ok.sum() / nsite) if nsite else 1.0
    if np.any(base_fail & use):
        flat = np.where(use, worst_need, -1.0)
        i = np.unravel_index(int(np.argmax(flat)), flat.shape)
        worst = (tuple(int(k) for k in i), worst_lam[i].tolist(), float(flat[i]))
    else:
        worst = (None, None, 0.0)
    return AdmissibilityReport(frac, worst[0], worst[1], "viscosity", slack, worst[2], nsite,
                               under_approximation=True,
                               note="finite paraboloid probe family; an under-approximation of all contact tests")


def _report(lam, use, cone, mode, slack, flagged) -> AdmissibilityReport:
    nsite = int(use.sum())
    if nsite == 0:
        return AdmissibilityReport(1.0, None, None, mode, slack, 0.0, 0, flagged)
    lam_u = lam[use]
    need = minimal_shift(lam_u, cone)
    inside = need <= 0.0
    idx = np.argwhere(use)
    i = int(np.argmax(need))
    worst_site = tuple(int(k) for k in idx[i]) if need[i] > 0 else None
    worst_lam = lam_u[i].tolist() if need[i] > 0 else None
    return AdmissibilityReport(float(inside.mean()), worst_site, worst_lam, mode, slack, float(need.max()),
                               nsite, flagged)


def minimal_slack(phi: LatticeField, cone: ConeSpec, values=None) -> float:
    """Smallest ``sigma >= 0`` such that pointwise admissibility passes with slack ``sigma``.

    The per-site shift is found by bisection; the global slack is their maximum.
    """
    lam, failed = eigen_field(phi, values)
    use = phi.owned_mask() & ~failed & np.all(np.isfinite(lam), axis=-1)
    if not np.any(use):
        return 0.0
    return float(minimal_shift(lam[use], cone).max())


# ---------------------------------------------------------------------------
# mean-value tools


def _check_subharmonic(u: LatticeField, x, rmax: float, tol: float):
    lap = laplacian(u)
    z, c = u.site_coords()
    arr, cx = _pt(x)
    d = u.manifold.distance(np.broadcast_to(arr, z.shape), z, cx, c)
    region = (d <= rmax + 2 * u.h) & np.isfinite(lap) & u.owned_mask()
    bad = region & (lap < -tol)
    if np.any(bad):
        i = np.unravel_index(int(np.argmin(np.where(bad, lap, np.inf))), lap.shape)
        raise PreconditionError(f"field is not subharmonic near x: Laplacian {lap[i]:.3g} < {-tol:.3g}",
                                witness={"site": tuple(int(k) for k in i), "laplacian": float(lap[i])})


def ball_mean(u: LatticeField, x, r: float, angular_samples: Optional[int] = None) -> float:
    """Average of ``u`` over the geodesic ball ``B_r(x)`` against the Riemannian volume."""
    w, cw, k = ball_quadrature(u.manifold, x, r, angular_samples)
    return float(np.sum(u.interp(w, cw) * k) / np.sum(k))


def mean_value_check(u: LatticeField, x, radii: Sequence[float], angular_samples: Optional[int] = None) -> float:
    """Smallest ``C >= 0`` with ``u(x) <= mean_{B_r(x)} u + C r`` for the given radii.

    Raises
    ------
    PreconditionError
        If the discrete Laplacian drops below ``-10 h^2`` near ``x``.
    """
    radii = [float(r) for r in radii]
    if not radii:
        raise DomainError("need at least one radius")
    _check_subharmonic(u, x, max(radii), 10 * u.h ** 2)
    arr, cx = _pt(x)
    ux = float(u.interp(arr[None, :], np.array([cx]))[0])
    C = 0.0
    for r in radii:
        C = max(C, (ux - ball_mean(u, x, r, angular_samples)) / r)
    return C


def sphere_integral(u: LatticeField, x, r: float, angular_samples: Optional[int] = None) -> float:
    w, cw, k = sphere_quadrature(u.manifold, x, r, angular_samples)
    return float(np.sum(u.interp(w, cw) * k))


def sphere_mean_monotonicity(u: LatticeField, x, s: float, r: float,
                             angular_samples: Optional[int] = None) -> float:
    """``r^(1-2n) int_{dB_r} u - s^(1-2n) int_{dB_s} u`` for ``0 < s < r``.

    Raises
    ------
    PreconditionError
        If ``u`` is not negative on the two spheres or not harmonic within
        the ``10 h^2`` discretisation floor on the annulus.
    """
    if not (0 < s < r):
        raise DomainError("need 0 < s < r")
    n = u.manifold.n
    vals = []
    for rad in (s, r):
        w, cw, k = sphere_quadrature(u.manifold, x, rad, angular_samples)
        uv = u.interp(w, cw)
        if np.any(uv >= 0):
            raise PreconditionError("u must be negative on the annulus", witness={"radius": rad})
        vals.append(float(np.sum(uv * k)) * rad ** (1 - 2 * n))
    lap = laplacian(u)
    z, c = u.site_coords()
    arr, cx = _pt(x)
    dist = u.manifold.distance(np.broadcast_to(arr, z.shape), z, cx, c)
    ann = (dist >= s - u.h) & (dist <= r + u.h) & np.isfinite(lap) & u.owned_mask()
    if np.any(ann & (np.abs(lap) > 10 * u.h ** 2 * (1.0 + u.sup_norm))):
        raise PreconditionError("u is not harmonic on the annulus", witness={"max_laplacian": float(
            np.abs(np.where(ann, lap, 0.0)).max())})
    return vals[1] - vals[0]
