"""Baselines and scores for U-value estimates and flux predictions."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass
class ScoreReport:
    chi2_internal: float
    chi2_external: float
    ais_internal: float
    ais_external: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def average_method(q_internal, t_internal, t_external) -> np.ndarray:
    """Running ISO 9869 average-method U-value, one entry per prefix.

    Prefixes whose temperature-difference sum is zero are returned as NaN.
    """
    q = np.asarray(q_internal, dtype=float)
    dT = np.asarray(t_internal, dtype=float) - np.asarray(t_external, dtype=float)
    if q.shape != dT.shape:
        raise InvalidArgumentError("series must be aligned")
    num = np.cumsum(q)
    den = np.cumsum(dT)
    out = np.full(q.shape, np.nan)
    ok = den != 0
    out[ok] = num[ok] / den[ok]
    return out


def no_thermal_mass_flux(t_internal, t_external, u_av: float) -> np.ndarray:
    return (np.asarray(t_internal, dtype=float) - np.asarray(t_external, dtype=float)) * u_av


def chi_squared(pred_mean, observed, sigma) -> float:
    """Mean squared residual normalised by the measurement variance."""
    pred_mean = np.asarray(pred_mean, dtype=float)
    observed = np.asarray(observed, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if not (pred_mean.shape == observed.shape == np.broadcast(observed, sigma).shape):
        raise InvalidArgumentError("series must be aligned")
    if np.any(sigma <= 0):
        raise InvalidArgumentError("sigma must be positive")
    return float(np.mean(((observed - pred_mean) / sigma) ** 2))


def interval_score(lo, hi, observed, alpha: float):
    """Interval score of central ``(1 - alpha)`` prediction intervals.

    Works elementwise on arrays; use :func:`average_interval_score` for the
    series mean.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    nu = np.asarray(observed, dtype=float)
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    if np.any(lo > hi):
        raise InvalidArgumentError("interval lower bound exceeds upper bound")
    score = (hi - lo) + (2.0 / alpha) * (lo - nu) * (nu < lo) + (2.0 / alpha) * (nu - hi) * (nu > hi)
    return float(score) if score.ndim == 0 else score


def average_interval_score(lo, hi, observed, alpha: float) -> float:
    return float(np.mean(interval_score(lo, hi, observed, alpha)))


def coefficient_of_variation(samples) -> float:
    """Sample standard deviation (``ddof=1``) over the mean; NaN for zero mean."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InvalidArgumentError("need at least two samples")
    mean = x.mean()
    if mean == 0:
        return float("nan")
    return float(x.std(ddof=1) / mean)


def coverage(lo, hi, observed) -> float:
    nu = np.asarray(observed, dtype=float)
    return float(np.mean((nu >= np.asarray(lo)) & (nu <= np.asarray(hi))))
