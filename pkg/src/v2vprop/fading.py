"""Fast-fading extraction from clean RSSI runs.

The multipath distribution is estimated from "signatures": long per-link
blocks of consecutive packets with few or no losses. Each signature is
de-logged to linear power, split into non-overlapping P-sample windows and
divided by the window mean, which strips the distance trend and the slow
shadow component and leaves the unit-local-mean fast fading. The window
width is accepted once the normalized block looks uncorrelated (small ACF at
lags 1..20), after which a Nakagami-power (Gamma) or Gaussian model is
selected by Kolmogorov-Smirnov distance.

The dB standard deviation of the normalized samples is the multipath part
sigma_mp of the total scatter; the shadowing part follows from the
quadrature split sigma_total^2 = sigma_sh^2 + sigma_mp^2.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, ndtr

from ._kernels import signature_spans
from .stats import DistributionFit, autocorr, fit_nakagami_power, ks_test
from .trace import TraceDataset, to_pathloss

ACF_LAGS = 20
GAUSSIAN_POWER_FLOOR = 1e-6  # linear; keeps the dB transform finite


@dataclass(frozen=True)
class FadeSignature:
    link: tuple[str, str]
    samples: np.ndarray  # pl values in dB, one per seq_no slot (gaps interpolated)
    timestamps: np.ndarray
    loss_fraction: float


@dataclass(frozen=True)
class NormalizedBlock:
    samples: np.ndarray  # linear power, unit mean per window
    window_p: int


@dataclass(frozen=True)
class FadingModel:
    fit: DistributionFit
    sigma_mp: float  # dB std of the normalized fading process
    acf_max_abs: float  # max |ACF| over lags 1..ACF_LAGS of the accepted block
    window_p: int | None = None


@dataclass(frozen=True)
class WindowSelection:
    window_p: int
    acf_by_candidate: dict[int, float]
    converged: bool


def extract_signatures(
    dataset: TraceDataset,
    min_len: int = 500,
    max_loss_fraction: float = 0.02,
) -> list[FadeSignature]:
    """Maximal per-link clean runs, with interior gaps interpolated in dB.

    A run qualifies when it spans at least ``min_len`` seq_no slots and at
    most ``max_loss_fraction`` of those slots are missing. Runs are found
    greedily left to right per link and never overlap.
    """
    samples = to_pathloss(dataset)  # index-aligned with dataset.records
    by_link: dict[tuple[str, str], list[int]] = {}
    for i, s in enumerate(samples):
        by_link.setdefault(s.link, []).append(i)

    signatures: list[FadeSignature] = []
    for link, idx in by_link.items():
        seq = np.asarray([dataset.records[i].seq_no for i in idx], dtype=np.int64)
        pl = np.asarray([samples[i].pl for i in idx], dtype=np.float64)
        ts = np.asarray([samples[i].timestamp for i in idx], dtype=np.float64)
        for start, end in signature_spans(seq, min_len, max_loss_fraction):
            slot_seq = np.arange(seq[start], seq[end] + 1, dtype=np.int64)
            got = seq[start : end + 1]
            pl_slots = np.interp(slot_seq, got, pl[start : end + 1])
            ts_slots = np.interp(slot_seq, got, ts[start : end + 1])
            missing = slot_seq.size - got.size
            signatures.append(
                FadeSignature(
                    link=link,
                    samples=pl_slots,
                    timestamps=ts_slots,
                    loss_fraction=missing / slot_seq.size,
                )
            )
    return signatures


def normalize_block(sig, window_p: int) -> NormalizedBlock:
    """De-log a signature and normalize each non-overlapping P-window to unit mean.

    The trailing partial window is dropped. Accepts a FadeSignature or a raw
    dB array.
    """
    db = sig.samples if isinstance(sig, FadeSignature) else np.asarray(sig, dtype=np.float64)
    n = db.size
    if window_p < 10:
        raise ValueError(f"window_p must be >= 10, got {window_p}")
    if window_p > n // 5:
        raise ValueError(f"window_p {window_p} too large for signature of length {n}")
    power = 10.0 ** (db / 10.0)
    n_windows = n // window_p
    windows = power[: n_windows * window_p].reshape(n_windows, window_p)
    normalized = windows / windows.mean(axis=1, keepdims=True)
    return NormalizedBlock(samples=normalized.reshape(-1), window_p=int(window_p))


def select_window(
    sig,
    candidates=(25, 50, 100, 200),
    acf_threshold: float = 0.2,
    max_lag: int = ACF_LAGS,
) -> WindowSelection:
    """Smallest window width whose normalized block passes the ACF gate.

    When no candidate passes, the one with the smallest max-|ACF| is
    returned with ``converged=False`` (the block still carries residual
    structure; the fit should be treated with suspicion).
    """
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ValueError("need at least one window candidate")
    report: dict[int, float] = {}
    for p in cands:
        try:
            block = normalize_block(sig, p)
        except ValueError:
            continue
        acf = autocorr(block.samples, min(max_lag, block.samples.size - 1))
        report[p] = float(np.max(np.abs(acf[1:])))
        if report[p] < acf_threshold:
            return WindowSelection(window_p=p, acf_by_candidate=report, converged=True)
    if not report:
        raise ValueError("no window candidate is feasible for this signature length")
    best = min(report, key=lambda p: (report[p], p))
    return WindowSelection(window_p=best, acf_by_candidate=report, converged=False)


def _gamma_power_cdf(m: float):
    return lambda x: gammainc(m, m * np.asarray(x, dtype=np.float64))


def _gaussian_cdf(mu: float, sigma: float):
    return lambda x: ndtr((np.asarray(x, dtype=np.float64) - mu) / sigma)


def fit_fading(block: NormalizedBlock) -> FadingModel:
    """Fit Nakagami-power and Gaussian models; keep the smaller KS distance."""
    x = np.asarray(block.samples, dtype=np.float64)
    if x.size < 100:
        raise ValueError(f"need at least 100 normalized samples, got {x.size}")
    if np.any(x <= 0):
        raise ValueError("normalized power samples must be positive")

    m = fit_nakagami_power(x)
    ks_nak = ks_test(x, _gamma_power_cdf(m))
    mu = float(x.mean())
    sd = float(x.std())
    if sd == 0.0:
        raise ValueError("zero-variance block: no fading to fit")
    ks_gauss = ks_test(x, _gaussian_cdf(mu, sd))

    if ks_nak.d <= ks_gauss.d:
        fit = DistributionFit(
            family="nakagami_power", params={"m": m}, ks_statistic=ks_nak.d, ks_p=ks_nak.p
        )
    else:
        fit = DistributionFit(
            family="gaussian",
            params={"mu": mu, "sigma_lin": sd},
            ks_statistic=ks_gauss.d,
            ks_p=ks_gauss.p,
        )

    db = 10.0 * np.log10(x)
    sigma_mp = float(db.std())
    acf = autocorr(x, min(ACF_LAGS, x.size - 1))
    return FadingModel(
        fit=fit,
        sigma_mp=sigma_mp,
        acf_max_abs=float(np.max(np.abs(acf[1:]))),
        window_p=block.window_p,
    )


def split_sigma(sigma_total: float, sigma_mp: float) -> float:
    """Shadowing std from the quadrature split of total scatter and multipath."""
    if sigma_total < 0 or sigma_mp < 0:
        raise ValueError("sigma values must be non-negative")
    if sigma_mp > sigma_total:
        warnings.warn(
            f"sigma_mp ({sigma_mp:.2f} dB) exceeds sigma_total ({sigma_total:.2f} dB); "
            "returning sigma_sh = 0",
            stacklevel=2,
        )
        return 0.0
    return float(np.sqrt(sigma_total**2 - sigma_mp**2))


def fading_to_dict(model: FadingModel) -> dict:
    out = {
        "family": model.fit.family,
        "m": model.fit.params.get("m"),
        "sigma_mp_db": model.sigma_mp,
        "window_p": model.window_p,
        "ks_d": model.fit.ks_statistic,
        "ks_p": model.fit.ks_p,
        "acf_max_abs": model.acf_max_abs,
    }
    if model.fit.family == "gaussian":
        out["mu"] = model.fit.params["mu"]
        out["sigma_lin"] = model.fit.params["sigma_lin"]
    return out


def fading_from_dict(data: dict) -> FadingModel:
    family = data["family"]
    if family == "nakagami_power":
        params = {"m": float(data["m"])}
    elif family == "gaussian":
        params = {"mu": float(data["mu"]), "sigma_lin": float(data["sigma_lin"])}
    else:
        raise ValueError(f"unknown fading family: {family!r}")
    fit = DistributionFit(
        family=family,
        params=params,
        ks_statistic=float(data["ks_d"]),
        ks_p=float(data["ks_p"]),
    )
    window_p = data.get("window_p")
    return FadingModel(
        fit=fit,
        sigma_mp=float(data["sigma_mp_db"]),
        acf_max_abs=float(data["acf_max_abs"]),
        window_p=None if window_p is None else int(window_p),
    )
