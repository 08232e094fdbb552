"""Empirical semivariograms and linear (nugget + slope) fits.

For an intrinsic random walk observed with white measurement error the
semivariogram of one core is exactly linear in lag:

    gamma(h) = sigma2 + 0.5 * v2 * h,   h > 0

so the nugget estimates the measurement variance and twice the slope
estimates the increment variance v2.  Fits use Cressie's iterated weighted
least squares with weights n_j / gamma_fit(h_j)^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, FitError
from .ingest import CoreSeries


@dataclass(frozen=True, eq=False)
class EmpiricalVariogram:
    """Binned method-of-moments semivariogram estimates for one core."""

    core_id: str
    lags: np.ndarray       # mean lag per occupied bin (kyr)
    gammas: np.ndarray     # 0.5 * mean squared difference
    counts: np.ndarray     # pairs per bin
    max_lag: float

    @property
    def n_bins(self) -> int:
        return self.lags.size


def empirical_semivariogram(series: CoreSeries, max_lag: float | None = None,
                            n_bins: int = 30) -> EmpiricalVariogram:
    """Bin squared differences of all pairs with lag <= max_lag.

    max_lag defaults to a third of the record span.  Bins are equal width on
    (0, max_lag]; empty bins are dropped.  Bin lag is the mean pair lag, not
    the bin midpoint, which matters for very uneven sampling.
    """
    t, y = series.times, series.values
    span = t[-1] - t[0]
    if max_lag is None:
        max_lag = span / 3.0
    if not 0 < max_lag <= span:
        raise DataError(f"max_lag must be in (0, {span:.6g}]")
    if n_bins < 1:
        raise DataError("n_bins must be >= 1")
    dt = t[None, :] - t[:, None]
    dy = y[None, :] - y[:, None]
    iu = np.triu_indices(t.size, k=1)
    h = dt[iu]
    sq = dy[iu] ** 2
    keep = h <= max_lag
    h, sq = h[keep], sq[keep]
    if h.size == 0:
        raise DataError("no pairs within max_lag")
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    which = np.clip(np.searchsorted(edges, h, side="left") - 1, 0, n_bins - 1)
    counts = np.bincount(which, minlength=n_bins)
    occupied = counts > 0
    sum_h = np.bincount(which, weights=h, minlength=n_bins)
    sum_sq = np.bincount(which, weights=sq, minlength=n_bins)
    lags = sum_h[occupied] / counts[occupied]
    gammas = 0.5 * sum_sq[occupied] / counts[occupied]
    return EmpiricalVariogram(series.core_id, lags, gammas, counts[occupied].astype(np.intp),
                              float(max_lag))


@dataclass(frozen=True)
class LinearVariogramFit:
    """gamma(h) = sigma2 + slope * h with v2 = 2 * slope."""

    core_id: str
    sigma2: float
    slope: float
    n_iterations: int
    converged: bool
    weighted_rss: float

    @property
    def v2(self) -> float:
        return 2.0 * self.slope

    def predict(self, h):
        return self.sigma2 + self.slope * np.asarray(h, dtype=float)


def _weighted_line(h, g, w):
    """Weighted LS for g ~ b0 + b1 h; falls back through clamping to keep both >= 0."""
    sw = w.sum()
    mh = (w * h).sum() / sw
    mg = (w * g).sum() / sw
    sxx = (w * (h - mh) ** 2).sum()
    if sxx <= 0:
        raise FitError("all lags identical; slope is unidentifiable")
    b1 = (w * (h - mh) * (g - mg)).sum() / sxx
    b0 = mg - b1 * mh
    if b0 < 0:
        # refit through the origin
        b0 = 0.0
        b1 = max(0.0, (w * h * g).sum() / (w * h * h).sum())
    elif b1 < 0:
        b1 = 0.0
        b0 = max(0.0, mg)
    return b0, b1


def fit_linear_variogram(vg: EmpiricalVariogram, max_iterations: int = 100,
                         rel_tol: float = 1e-8) -> LinearVariogramFit:
    """Cressie's iterated WLS: weights n_j / fit(h_j)^2, refreshed until stable.

    The first pass is unweighted.  Negative intercept or slope is clamped to
    zero inside each pass (the other coefficient is refit).  Convergence is
    relative change below rel_tol in both coefficients.
    """
    h, g, n = vg.lags, vg.gammas, vg.counts.astype(float)
    if h.size < 2:
        raise FitError(f"core {vg.core_id}: need >= 2 occupied bins, got {h.size}")
    b0, b1 = _weighted_line(h, g, np.ones_like(h))
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        pred = np.maximum(b0 + b1 * h, 1e-12)
        w = n / pred ** 2
        nb0, nb1 = _weighted_line(h, g, w)
        scale = max(abs(b0), abs(b1), 1e-300)
        if max(abs(nb0 - b0), abs(nb1 - b1)) <= rel_tol * scale:
            b0, b1 = nb0, nb1
            converged = True
            break
        b0, b1 = nb0, nb1
    pred = np.maximum(b0 + b1 * h, 1e-12)
    rss = float((n / pred ** 2 * (g - pred) ** 2).sum())
    return LinearVariogramFit(vg.core_id, float(b0), float(b1), it, converged, rss)


def standardized_increments(series: CoreSeries, fit: LinearVariogramFit) -> np.ndarray:
    """Successive differences scaled to unit variance under the fitted model.

    Var(y_{i+1} - y_i) = 2 sigma2 + v2 * dt, so the scaled increments should
    look standard normal when the model fits.
    """
    dy = np.diff(series.values)
    dt = np.diff(series.times)
    var = 2.0 * fit.sigma2 + fit.v2 * dt
    if np.any(var <= 0):
        raise FitError("fitted increment variance is not positive")
    return dy / np.sqrt(var)


def qq_points(sample: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(theoretical, ordered sample) normal Q-Q pairs at (i - 0.5)/n."""
    from scipy.special import ndtri

    x = np.sort(np.asarray(sample, dtype=float))
    if x.size < 2:
        raise DataError("need at least two points")
    p = (np.arange(1, x.size + 1) - 0.5) / x.size
    return ndtri(p), x


# ---------------------------------------------------------------------------
# change of support: semivariograms of window-averaged series
# ---------------------------------------------------------------------------

def averaged_nugget_semivariogram(h, sigma2: float, width: float):
    """Semivariogram of white noise averaged over windows of the given width.

    For h >= width the windows are disjoint and the value saturates at
    sigma2 / width (each average has variance sigma2 / width).  Inside the
    window the overlapping section is shared and cancels, leaving the ramp
    sigma2 * h / width^2.  Continuous at h = width.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("lag must be non-negative")
    if not (sigma2 >= 0 and width > 0):
        raise ValueError("need sigma2 >= 0 and width > 0")
    full = sigma2 / width
    small = sigma2 * h / width ** 2
    out = np.where(h >= width, full, small)
    return out if out.ndim else float(out)


def averaged_increments_semivariogram(h, v2: float, width: float):
    """Semivariogram of the window-averaged intrinsic random walk.

    0.5 * v2 * h - v2 * width / 6 for h >= width, and the cubic
    v2 h^2 / (2 width) - v2 h^3 / (6 width^2) inside the window; the two
    branches agree at h = width.
    """
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("lag must be non-negative")
    if not (v2 >= 0 and width > 0):
        raise ValueError("need v2 >= 0 and width > 0")
    full = 0.5 * v2 * h - v2 * width / 6.0
    small = v2 * h ** 2 / (2.0 * width) - v2 * h ** 3 / (6.0 * width ** 2)
    out = np.where(h >= width, full, small)
    return out if out.ndim else float(out)


def support_ratio(width_ref: float, width_other: float) -> float:
    """Relative nugget factor k: a window 1/k times wider averages k times harder."""
    if not (width_ref > 0 and width_other > 0):
        raise ValueError("widths must be positive")
    return width_ref / width_other
