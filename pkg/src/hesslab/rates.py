"""Log-log power-law fits used by every rate study."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats


@dataclass
class RateFit:
    """Least-squares fit of ``log(values) = slope * log(epsilons) + intercept``.

    Attributes
    ----------
    degenerate : bool
        True when fewer than two positive values exist or the values do not
        vary, so no slope can be formed. ``slope`` is then NaN and ``reason``
        says why.
    """

    epsilons: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    degenerate: bool = False
    reason: str = ""
    label: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "epsilons": [float(e) for e in self.epsilons],
            "values": [float(v) for v in self.values],
            "slope": None if np.isnan(self.slope) else float(self.slope),
            "intercept": None if np.isnan(self.intercept) else float(self.intercept),
            "r_squared": None if np.isnan(self.r_squared) else float(self.r_squared),
            "degenerate": bool(self.degenerate),
            "reason": self.reason,
        }

    def predict(self, eps):
        return np.exp(self.intercept) * np.asarray(eps, float) ** self.slope


def fit_rate(epsilons, values, label: str = "", min_points: int = 2, zero_tol: float = 0.0) -> RateFit:
    """Fit a power law through the positive entries of ``values``.

    Values ``<= zero_tol`` are treated as zero and excluded. If all values are
    zero the fit is flagged degenerate with reason ``"identically zero"``.
    """
    x = np.asarray(epsilons, float)
    y = np.asarray(values, float)
    if x.shape != y.shape:
        raise ValueError("epsilons and values must have equal length")
    pos = (y > zero_tol) & (x > 0) & np.isfinite(y)
    nan = float("nan")
    if not np.any(pos):
        return RateFit(x, y, nan, nan, nan, True, "identically zero", label)
    if pos.sum() < max(min_points, 2):
        return RateFit(x, y, nan, nan, nan, True, "too few positive values", label)
    lx, ly = np.log(x[pos]), np.log(y[pos])
    if np.ptp(ly) == 0.0 and np.ptp(lx) > 0:
        return RateFit(x, y, 0.0, float(ly[0]), 1.0, False, "constant values", label)
    if np.ptp(lx) == 0.0:
        return RateFit(x, y, nan, nan, nan, True, "abscissae identical", label)
    res = stats.linregress(lx, ly)
    return RateFit(x, y, float(res.slope), float(res.intercept), float(res.rvalue ** 2), False, "", label)


def geometric_eps(start: float = 0.2, factor: float = 0.6, count: int = 6) -> np.ndarray:
    """Geometric sequence ``start * factor**k`` for ``k < count``."""
    return start * factor ** np.arange(count)
