"""Small statistical helpers shared by the estimators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


def mean_se(values: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and its standard error along ``axis``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    mean = values.mean(axis=axis)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=axis, ddof=1) / np.sqrt(n)


def jackknife(stat: Callable[[np.ndarray], np.ndarray], n: int) -> tuple[np.ndarray, np.ndarray]:
    """Leave-one-out jackknife of ``stat(keep_mask)`` over ``n`` units.

    Returns the full-sample value and the jackknife standard error.
    """
    full = np.asarray(stat(np.ones(n, dtype=bool)), dtype=float)
    if n < 2:
        return full, np.full_like(full, np.nan)
    reps = []
    for i in range(n):
        keep = np.ones(n, dtype=bool)
        keep[i] = False
        reps.append(np.asarray(stat(keep), dtype=float))
    reps = np.array(reps)
    centred = reps - reps.mean(axis=0)
    se = np.sqrt((n - 1) / n * (centred ** 2).sum(axis=0))
    return full, se


def variance_se(values: np.ndarray) -> tuple[float, float]:
    """Unbiased sample variance with a fourth-moment standard error."""
    v = np.asarray(values, dtype=float)
    n = v.size
    s2 = float(v.var(ddof=1))
    m4 = float(((v - v.mean()) ** 4).mean())
    var_s2 = (m4 - s2 ** 2 * (n - 3) / (n - 1)) / n
    return s2, float(np.sqrt(max(var_s2, 0.0)))


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a line")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(min(max(r2, 0.0), 1.0))


@dataclass
class ScalingFit:
    """Straight-line fit of ``log_y`` against ``log_x``."""

    log_x: np.ndarray
    log_y: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    dropped: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.log_x) < 3:
            raise ValueError("a scaling fit needs at least three grid points")

    @classmethod
    def fit(cls, x, y, dropped=None) -> "ScalingFit":
        lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
        slope, intercept, r2 = linear_fit(lx, ly)
        return cls(lx, ly, slope, intercept, r2, list(dropped or []))


@dataclass
class DecayFit:
    """Exponential fit ``y ~ amplitude * exp(-rate * x)`` on log-values."""

    rate: float
    amplitude: float
    r_squared: float
    fit_range: tuple[float, float]
    x: np.ndarray
    y: np.ndarray
    standard_errors: Optional[np.ndarray]
    used: np.ndarray

    def predict(self, x) -> np.ndarray:
        return self.amplitude * np.exp(-self.rate * np.asarray(x, dtype=float))


class InsufficientDataError(ValueError):
    """Too few informative points to fit."""


def fit_exponential(x, y, se=None, drop_sigma: float = 2.0, min_points: int = 3) -> DecayFit:
    """Fit ``log y`` linearly in ``x``, dropping points within ``drop_sigma`` SE of zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    se_arr = None if se is None else np.asarray(se, dtype=float)
    used = y > 0
    if se_arr is not None:
        used &= y > drop_sigma * se_arr
    if used.sum() < min_points:
        raise InsufficientDataError(
            f"only {int(used.sum())} usable points (need {min_points}) for an exponential fit")
    slope, intercept, r2 = linear_fit(x[used], np.log(y[used]))
    return DecayFit(rate=-slope, amplitude=float(np.exp(intercept)), r_squared=r2,
                    fit_range=(float(x[used].min()), float(x[used].max())), x=x, y=y,
                    standard_errors=se_arr, used=used)
