"""Statistical primitives used across the fitting pipeline.

Deliberately small: least squares, histogram modes, autocorrelation, a
one-sample Kolmogorov-Smirnov test, a method-of-moments fit for the power
of a Nakagami-m fading amplitude, and Gaussian QQ data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri


@dataclass(frozen=True)
class Histogram:
    bin_width: float
    origin: float
    counts: np.ndarray

    def centers(self) -> np.ndarray:
        return self.origin + (np.arange(self.counts.size) + 0.5) * self.bin_width


def build_histogram(values, bin_width: float, origin: float | None = None) -> Histogram:
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot histogram an empty sequence")
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    if origin is None:
        # Anchor so the first bin is centered on the smallest value.
        origin = float(x.min()) - bin_width / 2.0
    idx = np.floor((x - origin) / bin_width).astype(np.int64)
    if idx.min() < 0:
        raise ValueError("values fall below the histogram origin")
    counts = np.bincount(idx)
    return Histogram(bin_width=float(bin_width), origin=float(origin), counts=counts)


def _count_local_maxima(values: np.ndarray, rel_prominence: float = 0.1) -> int:
    # Plateau-aware strict local maxima, pruned by persistence: a maximum
    # only counts if the valley separating it from a taller maximum drops at
    # least rel_prominence * global peak below it. Sampling noise on a clean
    # unimodal histogram creates shallow wiggles, not persistent peaks.
    runs: list[float] = []
    for v in values:
        if not runs or v != runs[-1]:
            runs.append(float(v))
    maxima: list[tuple[int, float]] = []
    for i, v in enumerate(runs):
        left = runs[i - 1] if i > 0 else -1.0
        right = runs[i + 1] if i + 1 < len(runs) else -1.0
        if v > left and v > right:
            maxima.append((i, v))
    if len(maxima) <= 1:
        return len(maxima)
    peak = max(v for _, v in maxima)
    floor = rel_prominence * peak
    count = 0
    for idx, height in maxima:
        # Shallowest valley on the way to any taller maximum.
        barriers = []
        for other_idx, other_height in maxima:
            if other_height > height or (other_height == height and other_idx < idx):
                lo, hi = sorted((idx, other_idx))
                barriers.append(min(runs[lo : hi + 1]))
        if not barriers:  # the global maximum
            count += 1
            continue
        persistence = height - max(barriers)
        if persistence >= floor:
            count += 1
    return count


@dataclass(frozen=True)
class ModeResult:
    mode: float
    unimodal: bool


def histogram_mode(values, bin_width: float, origin: float | None = None) -> ModeResult:
    """Histogram mode (center of the fullest bin; ties pick the lowest bin).

    ``unimodal`` is True when the counts, smoothed with a 3-bin moving
    average, have a single local maximum. The smoothing keeps one-bin
    sampling jitter from flagging a clean peak as multimodal.
    """
    hist = build_histogram(values, bin_width, origin)
    counts = hist.counts
    mode_idx = int(np.argmax(counts))
    mode = hist.origin + (mode_idx + 0.5) * hist.bin_width
    kernel = np.ones(3) / 3.0
    smoothed = np.convolve(counts.astype(np.float64), kernel, mode="same")
    return ModeResult(mode=float(mode), unimodal=_count_local_maxima(smoothed) == 1)


@dataclass(frozen=True)
class LsqFit:
    coeffs: np.ndarray
    rms: float


def lsq_fit(design, targets) -> LsqFit:
    """Ordinary least squares; rms residual reported in target units."""
    a = np.asarray(design, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.shape[0] < a.shape[1]:
        raise ValueError(f"need at least {a.shape[1]} rows, got {a.shape[0]}")
    coeffs, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    if rank < a.shape[1]:
        raise ValueError("design matrix is rank deficient")
    resid = y - a @ coeffs
    rms = math.sqrt(float(np.mean(resid**2)))
    return LsqFit(coeffs=coeffs, rms=rms)


def autocorr(seq, max_lag: int) -> np.ndarray:
    """Biased-estimator ACF for lags 0..max_lag (normalized by N and variance)."""
    x = np.asarray(seq, dtype=np.float64)
    n = x.size
    if n <= max_lag:
        raise ValueError(f"sequence length {n} must exceed max_lag {max_lag}")
    xc = x - x.mean()
    var = float(np.mean(xc**2))
    if var == 0.0:
        raise ValueError("zero-variance input has no autocorrelation")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = float(np.dot(xc[:-k], xc[k:])) / (n * var)
    return out


def kolmogorov_sf(t: float) -> float:
    """Asymptotic Kolmogorov survival function Q(t) = 2 sum (-1)^{j-1} e^{-2 j^2 t^2}."""
    if t <= 0.0:
        return 1.0
    total = 0.0
    sign = 1.0
    for j in range(1, 101):
        term = math.exp(-2.0 * j * j * t * t)
        total += sign * term
        if term < 1e-16:
            break
        sign = -sign
    return min(1.0, max(0.0, 2.0 * total))


@dataclass(frozen=True)
class KsResult:
    d: float
    p: float


def ks_test(samples, cdf) -> KsResult:
    """One-sample KS statistic against a model CDF, asymptotic p-value."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n < 8:
        raise ValueError(f"need at least 8 samples for a KS test, got {n}")
    f = np.clip(np.asarray(cdf(x), dtype=np.float64), 0.0, 1.0)
    i = np.arange(1, n + 1)
    d_plus = float(np.max(i / n - f))
    d_minus = float(np.max(f - (i - 1) / n))
    d = max(d_plus, d_minus)
    return KsResult(d=d, p=kolmogorov_sf(math.sqrt(n) * d))


def fit_nakagami_power(samples) -> float:
    """Method-of-moments m for unit-mean power samples: m = mean^2 / variance.

    The power of a Nakagami-m amplitude with unit mean power is
    Gamma(m, 1/m), whose squared-mean-to-variance ratio is exactly m.
    """
    x = np.asarray(samples, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("power samples must be positive")
    mean = float(x.mean())
    if not 0.9 <= mean <= 1.1:
        raise ValueError(f"samples must be normalized to unit mean, got mean={mean:.4f}")
    var = float(np.var(x))
    if var == 0.0:
        raise ValueError("zero-variance samples: m is unbounded")
    return mean * mean / var


def qq_gaussian(samples) -> np.ndarray:
    """(theoretical, empirical) quantile pairs against a fitted Gaussian.

    Plotting positions (i - 0.5)/n; theoretical quantiles use the sample
    mean and standard deviation. A Gaussian sample lands on the identity
    line; heavy tails bend away from it.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 samples for QQ data")
    probs = (np.arange(1, n + 1) - 0.5) / n
    mu = float(x.mean())
    sd = float(x.std(ddof=1))
    theo = mu + sd * ndtri(probs)
    return np.column_stack((theo, x))


@dataclass(frozen=True)
class DistributionFit:
    family: str  # "nakagami_power" | "gaussian"
    params: dict[str, float]
    ks_statistic: float
    ks_p: float
