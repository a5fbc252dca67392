"""Log-log power-law fits."""

from __future__ import annotations

import numpy as np


def fit_slope(points) -> tuple[float, float]:
    """Least-squares slope of log y against log x, with its standard error.

    ``points`` is an iterable of (x, y) pairs, at least three, all positive.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("fit_slope needs at least 3 (x, y) pairs")
    if np.any(pts <= 0) or not np.all(np.isfinite(pts)):
        raise ValueError("fit_slope needs strictly positive finite values")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    n = len(lx)
    resid = ly - A @ coef
    if n > 2:
        s2 = float(resid @ resid) / (n - 2)
        sxx = float(np.sum((lx - lx.mean()) ** 2))
        stderr = float(np.sqrt(s2 / sxx)) if sxx > 0 else float("inf")
    else:
        stderr = float("nan")
    return float(coef[0]), stderr
