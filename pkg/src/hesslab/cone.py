"""Elementary symmetric functions, Garding cones and symmetric concave operators.

Eigenvalue vectors are plain ``numpy`` arrays whose last axis has length ``n``;
most functions broadcast over any leading axes so that whole lattices of
eigenvalues can be processed at once.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, IllConditionedError

TOL_CONE = 1e-12
TOL_HERM = 1e-10
TOL_MAJ = 1e-10
FD_STEP = 1e-5


def _as_lambda(lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0 or lam.shape[-1] < 1:
        raise DomainError("eigenvalue vector must have length n >= 1")
    if not np.all(np.isfinite(lam)):
        raise DomainError("eigenvalue vector has non-finite entries")
    return lam


def elementary_all(lam) -> np.ndarray:
    """All elementary symmetric polynomials ``sigma_0 .. sigma_n``.

    Parameters
    ----------
    lam : array_like, shape (..., n)

    Returns
    -------
    ndarray, shape (..., n + 1)
        ``out[..., k]`` is ``sigma_k(lam)``.
    """
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    e = np.zeros(lam.shape[:-1] + (n + 1,))
    e[..., 0] = 1.0
    # multiply out prod_i (1 + lam_i t), highest degree first
    for i in range(n):
        li = lam[..., i]
        for k in range(i + 1, 0, -1):
            e[..., k] = e[..., k] + li * e[..., k - 1]
    return e


def sigma_k(lam, k: int):
    """k-th elementary symmetric polynomial of ``lam`` (``sigma_0 = 1``).

    Raises
    ------
    DomainError
        If ``k`` is not in ``0..n``.
    """
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    if not (0 <= int(k) <= n) or int(k) != k:
        raise DomainError(f"k={k} out of range 0..{n}")
    out = elementary_all(lam)[..., int(k)]
    return float(out) if out.ndim == 0 else out


def sigma_k_without(lam, k: int) -> np.ndarray:
    """``sigma_k`` of ``lam`` with entry ``i`` removed, for every ``i``.

    Returns an array of shape ``(..., n)``. This is ``d sigma_{k+1} / d lam_i``.
    """
    lam = _as_lambda(lam)
    n = lam.shape[-1]
    out = np.empty(lam.shape)
    for i in range(n):
        rest = np.delete(lam, i, axis=-1)
        if k == 0:
            out[..., i] = 1.0
        elif rest.shape[-1] == 0 or k > rest.shape[-1]:
            out[..., i] = 0.0
        else:
            out[..., i] = elementary_all(rest)[..., k]
    return out


@dataclass(frozen=True)
class ConeSpec:
    """A symmetric convex cone in eigenvalue space.

    ``kind`` is one of ``"gamma_m"``, ``"gamma_n"``, ``"gamma_plus"`` or
    ``"custom"``. Custom cones carry a vectorised membership predicate.
    """

    kind: str
    n: int
    m: Optional[int] = None
    predicate: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    description: str = ""

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("cone dimension must be >= 1")
        if self.kind == "gamma_m":
            if self.m is None or not (1 <= self.m <= self.n):
                raise DomainError(f"GammaM needs 1 <= m <= n, got m={self.m}")
        elif self.kind == "custom":
            if self.predicate is None:
                raise DomainError("custom cone needs a membership predicate")
        elif self.kind not in ("gamma_n", "gamma_plus"):
            raise DomainError(f"unknown cone kind {self.kind!r}")

    @classmethod
    def gamma_m(cls, n: int, m: int) -> "ConeSpec":
        return cls("gamma_m", n, m)

    @classmethod
    def gamma_n(cls, n: int) -> "ConeSpec":
        return cls("gamma_n", n)

    @classmethod
    def gamma_plus(cls, n: int) -> "ConeSpec":
        return cls("gamma_plus", n)

    @classmethod
    def custom(cls, n: int, predicate, description: str = "") -> "ConeSpec":
        return cls("custom", n, None, predicate, description)

    @property
    def order(self) -> int:
        """Number of ``sigma_i`` constraints defining the cone."""
        if self.kind == "gamma_m":
            return int(self.m)
        if self.kind == "gamma_n":
            return self.n
        return 1

    @property
    def label(self) -> str:
        if self.kind == "gamma_m":
            return f"Gamma_{self.m}"
        if self.kind == "gamma_n":
            return "Gamma_n"
        if self.kind == "gamma_plus":
            return "Gamma_+"
        return f"custom({self.description})"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.n}
        if self.m is not None:
            d["m"] = self.m
        if self.description:
            d["description"] = self.description
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConeSpec":
        kind = d.get("kind")
        n = int(d["n"])
        if kind == "gamma_m":
            return cls.gamma_m(n, int(d["m"]))
        if kind == "custom":
            raise DomainError("custom cones cannot be built from a dictionary")
        return cls(kind, n)


def _scale(lam: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(lam, axis=-1)
    return np.where(n > 0, n, 1.0)


def cone_margins(lam, cone: ConeSpec) -> np.ndarray:
    """Scaled constraint values; ``lam`` is in the cone iff all are > tol.

    For sigma-type cones entry ``i - 1`` is ``sigma_i(lam) / |lam|^i``.
    Returns shape ``(..., order)``.
    """
    lam = _as_lambda(lam)
    if lam.shape[-1] != cone.n:
        raise DomainError(f"dimension mismatch: lambda has {lam.shape[-1]}, cone has {cone.n}")
    s = _scale(lam)[..., None]
    if cone.kind == "gamma_n":
        return lam / s
    if cone.kind == "gamma_plus":
        return lam.sum(axis=-1, keepdims=True) / s
    if cone.kind == "gamma_m":
        # homogeneity: sigma_k(lam / s) = sigma_k(lam) / s^k without underflow
        return elementary_all(lam / s)[..., 1 : cone.m + 1]
    inside = np.asarray(cone.predicate(lam), dtype=bool)
    return np.where(inside, 1.0, -1.0)[..., None]


def in_cone(lam, cone: ConeSpec, tol: float = TOL_CONE):
    """Strict membership test with a relative margin ``tol``.

    Returns a bool for a single vector, a bool array for stacked vectors.
    """
    ok = np.all(cone_margins(lam, cone) > tol, axis=-1)
    return bool(ok) if np.ndim(ok) == 0 else ok


def first_violation(lam, cone: ConeSpec, tol: float = TOL_CONE) -> Optional[int]:
    """Index ``i`` (1-based) of the first failed ``sigma_i`` constraint, or None."""
    margins = np.atleast_1d(cone_margins(lam, cone))
    bad = np.nonzero(margins <= tol)[0]
    return None if bad.size == 0 else int(bad[0]) + 1


def minimal_shift(lam, cone: ConeSpec, tol: float = TOL_CONE, iters: int = 80) -> np.ndarray:
    """Smallest ``t >= 0`` with ``lam + t * 1`` in the cone, per vector.

    Membership is monotone in ``t`` for every cone containing the positive
    orthant, so a vectorised bisection is exact up to ``2**-iters`` of the
    initial bracket.
    """
    lam = _as_lambda(lam)
    ones = np.ones(cone.n)
    lo = np.zeros(lam.shape[:-1])
    inside0 = in_cone(lam, cone, tol)
    hi = np.maximum(-lam.min(axis=-1), 0.0) + 1e-9 * (1.0 + np.abs(lam).max(axis=-1))
    hi = np.where(inside0, 0.0, hi)
    # grow bracket where needed (Gamma_n shift always suffices, but tol may bite)
    for _ in range(60):
        need = ~np.asarray(in_cone(lam + hi[..., None] * ones, cone, tol)) & ~np.asarray(inside0)
        if not np.any(need):
            break
        hi = np.where(need, 2.0 * hi + 1e-12, hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok = np.asarray(in_cone(lam + mid[..., None] * ones, cone, tol))
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
    return np.where(inside0, 0.0, hi)


@dataclass(frozen=True)
class OperatorSpec:
    """A symmetric concave operator ``f`` on a cone with structural constants.

    ``f`` maps an array of shape ``(..., n)`` to shape ``(...)``. ``grad`` is
    optional; without it derivatives are taken by central differences.
    """

    f: Callable[[np.ndarray], np.ndarray]
    cone: ConeSpec
    c0: float
    C0: float
    name: str = "custom"
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if not (self.c0 > 0 and self.C0 > 0):
            raise DomainError("structural constants c0 and C0 must be positive")


def sigma_m_operator(n: int, m: int) -> OperatorSpec:
    """``f = sigma_m^{1/m}`` on ``Gamma_m`` with its analytic gradient.

    ``c0`` is the determinant floor at the identity, where the product of
    partial derivatives is smallest on the positive orthant.
    """
    cone = ConeSpec.gamma_m(n, m)

    def f(lam):
        return elementary_all(lam)[..., m] ** (1.0 / m)

    def grad(lam):
        sm = elementary_all(lam)[..., m]
        dsm = sigma_k_without(lam, m - 1)
        return (1.0 / m) * (sm ** (1.0 / m - 1.0))[..., None] * dsm

    ident = np.ones(n)
    c0 = float(np.prod(grad(ident)))
    return OperatorSpec(f, cone, c0=c0 * (1.0 - 1e-9), C0=1.0, name=f"sigma_{m}^(1/{m})", grad=grad)


def quotient_operator(n: int, k: int, m: int) -> OperatorSpec:
    """``f = (sigma_k / sigma_m)^{1/(k-m)}`` on ``Gamma_k``, ``0 <= m < k <= n``.

    The nominal ``c0`` is the identity value; the determinant of this
    operator degenerates near the boundary of the orthant so the floor fails.
    """
    if not (0 <= m < k <= n):
        raise DomainError(f"quotient needs 0 <= m < k <= n, got k={k}, m={m}")
    cone = ConeSpec.gamma_m(n, k)
    p = 1.0 / (k - m)

    def f(lam):
        e = elementary_all(lam)
        return (e[..., k] / e[..., m]) ** p

    def grad(lam):
        e = elementary_all(lam)
        q = e[..., k] / e[..., m]
        dk = sigma_k_without(lam, k - 1)
        dm = sigma_k_without(lam, m - 1) if m >= 1 else np.zeros_like(np.asarray(lam, float))
        dq = (dk * e[..., m][..., None] - e[..., k][..., None] * dm) / (e[..., m] ** 2)[..., None]
        return p * (q ** (p - 1.0))[..., None] * dq

    c0 = float(np.prod(grad(np.ones(n))))
    return OperatorSpec(f, cone, c0=c0 * (1.0 - 1e-9), C0=1.0,
                        name=f"(sigma_{k}/sigma_{m})^(1/{k - m})", grad=grad)


def combined_operator(n: int, k: int, m: int, l: int, c: float) -> OperatorSpec:
    """``(sigma_k/sigma_m)^{1/(k-m)} + c * sigma_l^{1/l}`` on ``Gamma_k``, ``l <= k``.

    Every partial derivative is at least ``c`` times that of
    ``sigma_l^{1/l}``, which gives the floor ``c0 = c^n * c0(sigma_l)``.
    """
    if c <= 0:
        raise DomainError("coupling c must be positive")
    if not (1 <= l <= k):
        raise DomainError("need 1 <= l <= k so that the cone is Gamma_k")
    qop = quotient_operator(n, k, m)
    sop = sigma_m_operator(n, l)

    def f(lam):
        return qop.f(lam) + c * sop.f(lam)

    def grad(lam):
        return qop.grad(lam) + c * sop.grad(lam)

    c0 = (c ** n) * sop.c0
    return OperatorSpec(f, qop.cone, c0=c0, C0=1.0,
                        name=f"{qop.name}+{c:g}*{sop.name}", grad=grad)


def _check_inside(op: OperatorSpec, lam: np.ndarray, tol: float, exc):
    lam2 = lam.reshape(-1, lam.shape[-1])
    for row in lam2:
        i = first_violation(row, op.cone, tol)
        if i is not None:
            what = {"gamma_m": f"sigma_{i}", "gamma_n": f"lambda_{i} > 0"}.get(op.cone.kind, op.cone.label)
            raise exc(f"lambda={row.tolist()} outside {op.cone.label}: {what} constraint fails")


def f_value(op: OperatorSpec, lam):
    """Evaluate ``op.f`` after checking cone membership.

    Raises
    ------
    DomainError
        Naming the first violated ``sigma_i`` when ``lam`` is outside the cone.
    """
    lam = _as_lambda(lam)
    _check_inside(op, lam, TOL_CONE, DomainError)
    out = np.asarray(op.f(lam), dtype=float)
    return float(out) if out.ndim == 0 else out


def fd_gradient(f, lam: np.ndarray, step: Optional[float] = None) -> np.ndarray:
    """Central-difference gradient with step ``1e-5 * (1 + |lam|)``."""
    lam = np.asarray(lam, dtype=float)
    hs = FD_STEP * (1.0 + np.linalg.norm(lam, axis=-1)) if step is None else np.full(lam.shape[:-1], step)
    g = np.empty(lam.shape)
    for i in range(lam.shape[-1]):
        e = np.zeros(lam.shape[-1])
        e[i] = 1.0
        d = hs[..., None] * e
        g[..., i] = (np.asarray(f(lam + d)) - np.asarray(f(lam - d))) / (2.0 * hs)
    return g


def grad_f(op: OperatorSpec, lam) -> np.ndarray:
    """Gradient of ``f``; analytic when available, else central differences.

    Raises
    ------
    IllConditionedError
        If ``lam`` is on or outside the boundary of the cone.
    """
    lam = _as_lambda(lam)
    _check_inside(op, lam, TOL_CONE, IllConditionedError)
    if op.grad is not None:
        return np.asarray(op.grad(lam), dtype=float)
    return fd_gradient(op.f, lam)


def _grad_any(op: OperatorSpec, lam):
    return op.grad(lam) if op.grad is not None else fd_gradient(op.f, lam)


@dataclass
class ConditionResult:
    condition_id: str
    worst_violation: float
    witness: Optional[list]
    passed: bool
    detail: str = ""

    def to_dict(self):
        return {"condition_id": self.condition_id, "worst_violation": self.worst_violation,
                "witness": self.witness, "passed": self.passed, "detail": self.detail}


@dataclass
class ConditionReport:
    operator: str
    cone: str
    sample_count: int
    seed: int
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def violations(self) -> list:
        return [r.condition_id for r in self.results if not r.passed]

    def get(self, condition_id: str) -> ConditionResult:
        for r in self.results:
            if r.condition_id == condition_id:
                return r
        raise KeyError(condition_id)

    def to_json(self, **kw) -> str:
        return json.dumps({"operator": self.operator, "cone": self.cone,
                           "sample_count": self.sample_count, "seed": self.seed,
                           "passed": self.passed,
                           "results": [r.to_dict() for r in self.results]}, **kw)


def sample_cone(cone: ConeSpec, count: int, rng: np.random.Generator, spread: float = 3.0) -> np.ndarray:
    """Draw ``count`` points strictly inside ``cone`` by rejection sampling.

    Proposals are a positive multiple of the identity plus Gaussian noise with
    log-uniform scale so that points near the boundary are also hit.
    """
    n = cone.n
    out = []
    got = 0
    while got < count:
        batch = max(4 * (count - got), 64)
        base = rng.uniform(0.05, 2.0, size=(batch, 1))
        scale = np.exp(rng.uniform(-spread, spread, size=(batch, 1)))
        lam = base + scale * rng.standard_normal((batch, n))
        ok = np.asarray(in_cone(lam, cone, 1e-6))
        out.append(lam[ok])
        got += int(ok.sum())
    return np.concatenate(out)[:count]


def sample_orthant(n: int, count: int, rng: np.random.Generator, spread: float = 6.0) -> np.ndarray:
    """Log-uniform samples of the positive orthant spanning ``e^-spread .. e^spread``."""
    return np.exp(rng.uniform(-spread, spread, size=(count, n)))


def check_structural(op: OperatorSpec, sample_count: int, seed: int, tol: float = 1e-9) -> ConditionReport:
    """Monte-Carlo audit of the five structural conditions on ``op``.

    Violations are reported, never raised. Each result records the worst
    violation found and the eigenvalue vector that produced it.
    """
    if sample_count < 1:
        raise DomainError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = op.cone.n
    res = []

    lam = sample_cone(op.cone, sample_count, rng)
    fl = np.asarray(op.f(lam), float)
    scale = np.maximum(np.abs(fl), 1.0)

    # (1) symmetry
    perms = np.array([rng.permutation(n) for _ in range(sample_count)])
    lp = np.take_along_axis(lam, perms, axis=1)
    sym = np.abs(np.asarray(op.f(lp)) - fl) / scale
    i = int(np.argmax(sym))
    res.append(ConditionResult("1_symmetry", float(sym[i]), lam[i].tolist(), bool(sym[i] <= tol)))

    # (2) Gamma_n inside Gamma inside Gamma_+
    orth = sample_orthant(n, sample_count, rng)
    not_in = ~np.asarray(in_cone(orth, op.cone, 0.0))
    inplus = np.asarray(in_cone(lam, ConeSpec.gamma_plus(n), 0.0))
    bad2 = int(not_in.sum() + (~inplus).sum())
    wit = orth[np.argmax(not_in)].tolist() if not_in.any() else (
        lam[np.argmax(~inplus)].tolist() if (~inplus).any() else None)
    res.append(ConditionResult("2_cone_nesting", float(bad2), wit, bad2 == 0,
                               "count of samples breaking Gamma_n <= Gamma <= Gamma_+"))

    # (3a) positive partial derivatives
    g = _grad_any(op, lam)
    gmin = g.min(axis=1)
    i = int(np.argmin(gmin))
    res.append(ConditionResult("3_positive_gradient", float(-gmin[i]), lam[i].tolist(), bool(gmin[i] > 0),
                               "reported value is -min df/dlambda_i"))

    # (3b) concavity by midpoints of in-cone segments
    other = sample_cone(op.cone, sample_count, rng)
    mid = 0.5 * (lam + other)
    gap = 0.5 * (fl + np.asarray(op.f(other))) - np.asarray(op.f(mid))
    gap = gap / np.maximum(scale, np.abs(np.asarray(op.f(other))))
    i = int(np.argmax(gap))
    res.append(ConditionResult("3_concavity", float(max(gap[i], 0.0)), [lam[i].tolist(), other[i].tolist()],
                               bool(gap[i] <= tol)))

    # (4) determinant floor on diagonal positive h
    go = _grad_any(op, orth)
    det = np.prod(go, axis=1)
    i = int(np.argmin(det))
    res.append(ConditionResult("4_det_floor", float(max(op.c0 - det[i], 0.0)), orth[i].tolist(),
                               bool(det[i] >= op.c0 * (1.0 - tol)),
                               f"min det = {det[i]:.6g}, c0 = {op.c0:.6g}"))

    # (5) Euler-type bound on Gamma_n
    fo = np.asarray(op.f(orth), float)
    eul = (np.sum(orth * go, axis=1) - op.C0 * fo) / np.maximum(np.abs(fo), 1.0)
    i = int(np.argmax(eul))
    res.append(ConditionResult("5_euler_bound", float(max(eul[i], 0.0)), orth[i].tolist(),
                               bool(eul[i] <= 1e-7)))
    return ConditionReport(op.name, op.cone.label, sample_count, seed, res)


def horn_schur_check(H, tol_maj: float = TOL_MAJ, tol_herm: float = TOL_HERM) -> bool:
    """Is the diagonal of Hermitian ``H`` majorized by its eigenvalues?

    Raises
    ------
    DomainError
        If ``H`` is not square or not Hermitian within ``tol_herm``.
    """
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DomainError("H must be a square matrix")
    scale = max(1.0, float(np.abs(H).max(initial=0.0)))
    if np.abs(H - H.conj().T).max(initial=0.0) > tol_herm * scale:
        raise DomainError("H is not Hermitian")
    Hs = 0.5 * (H + H.conj().T)
    eig = np.sort(np.linalg.eigvalsh(Hs))[::-1]
    diag = np.sort(np.real(np.diag(Hs)))[::-1]
    pe, pd = np.cumsum(eig), np.cumsum(diag)
    tol = tol_maj * scale * H.shape[0]
    if abs(pe[-1] - pd[-1]) > tol:
        return False
    return bool(np.all(pd[:-1] <= pe[:-1] + tol))


