"""Small statistical helpers: Wilson intervals and log-log power-law fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


def wilson_interval(k: int, n: int, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion ``k / n``."""
    if n <= 0:
        return (float("nan"), float("nan"))
    phat = k / n
    denom = 1 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass
class LineFit:
    slope: float
    intercept: float
    slope_stderr: float
    npoints: int


def weighted_line_fit(x, y, sigma=None) -> LineFit:
    """Least squares ``y = intercept + slope * x``.

    With ``sigma`` the fit is weighted by ``1/sigma**2`` and the slope error is
    the formal one; without it the error comes from the residual scatter.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if sigma is not None and np.all(np.asarray(sigma) > 0):
        w = 1.0 / np.asarray(sigma, dtype=float) ** 2
        sw, swx, swy = w.sum(), (w * x).sum(), (w * y).sum()
        swxx, swxy = (w * x * x).sum(), (w * x * y).sum()
        det = sw * swxx - swx**2
        slope = (sw * swxy - swx * swy) / det
        intercept = (swxx * swy - swx * swxy) / det
        return LineFit(float(slope), float(intercept), float(np.sqrt(sw / det)), len(x))
    res = stats.linregress(x, y)
    return LineFit(float(res.slope), float(res.intercept), float(res.stderr), len(x))
