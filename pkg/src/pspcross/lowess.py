"""Robust locally weighted linear regression (Cleveland's LOWESS)."""

from math import floor

import numpy as np


def lowess(xs, ys, span=2.0 / 3.0, iterations=3):
    """Smooth ``ys`` against strictly increasing ``xs``.

    Each fitted value comes from a weighted linear fit over the
    ``floor(span * n)`` nearest neighbours (at least 2) with tricube weights,
    the neighbourhood size used by R's ``lowess``.  The fit is
    then repeated ``iterations`` times with bisquare robustness weights
    computed from the residuals (``iterations=0`` gives the plain local fit).
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("lowess needs at least two points")
    if y.shape != x.shape:
        raise ValueError("xs and ys must have the same length")
    if not 0 < span <= 1:
        raise ValueError("span must lie in (0, 1]")
    if np.any(np.diff(x) <= 0):
        raise ValueError("xs must be strictly increasing")
    r = min(n, max(2, floor(span * n + 1e-7)))
    dist = np.abs(x[:, None] - x[None, :])
    h = np.sort(dist, axis=1)[:, r - 1]
    u = np.clip(dist / np.maximum(h, 1e-300)[:, None], 0.0, 1.0)
    w_local = (1 - u**3) ** 3
    robust = np.ones(n)
    fitted = np.empty(n)
    for it in range(iterations + 1):
        for i in range(n):
            w = w_local[i] * robust
            sw = w.sum()
            if sw <= 0:
                fitted[i] = y[i]
                continue
            xm = (w @ x) / sw
            ym = (w @ y) / sw
            sxx = w @ (x - xm) ** 2
            if sxx <= 1e-12 * max(1.0, (x[-1] - x[0]) ** 2) * sw:
                fitted[i] = ym
            else:
                slope = (w @ ((x - xm) * (y - ym))) / sxx
                fitted[i] = ym + slope * (x[i] - xm)
        if it == iterations:
            break
        resid = y - fitted
        scale = np.median(np.abs(resid))
        if scale <= 1e-12 * max(1.0, np.mean(np.abs(y))):
            break  # already an exact fit
        b = np.clip(resid / (6.0 * scale), -1.0, 1.0)
        robust = (1 - b**2) ** 2
    return fitted
