"""Median path-loss model fitting.

The composite model has two segments joined continuously at a breakpoint
d_br: a short-range segment (two-ray ground reflection, or a log-linear
line for high-scatter environments) and a far log-linear segment

    PL(d) = a2 - b2 * 10 * log10(d / d0),   d > d_br.

The two-ray segment is fitted by ordinary least squares in the *linear*
power domain, where the model is linear in its unknowns:

    gain(d) = (d0/d)^2 * [a1 - b1 * cos(2*pi*(d' - d)/lambda)],
    d' = sqrt(d^2 + 4 h^2).

Because dB scatter about the median is close to Gaussian, the de-logged
samples are lognormal about the median gain and a linear-domain mean fit
overshoots the median by exp((sigma_dB * ln10/10)^2 / 2). ``fit_two_ray``
divides that factor out (the model is a median model), using the fitted dB
residual std; ``debias=False`` disables the correction.

The breakpoint is chosen by grid search on pooled dB RMS. When the receiver
noise floor censors the lower tail at large distances, a raw far-segment fit
comes out too shallow; ``mode_fit_medians`` works around the censoring by
fitting through per-bin histogram modes instead, which estimate the median
of a symmetric scatter distribution even with the lower tail missing.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fading import FadingModel, fading_from_dict, fading_to_dict
from .stats import histogram_mode, lsq_fit
from .trace import PathLossSample, TraceDataset, samples_to_arrays, to_pathloss


class FitError(RuntimeError):
    """A model fit cannot proceed (insufficient or degenerate data)."""


@dataclass(frozen=True)
class TwoRayParams:
    a1: float  # linear power scale of the non-oscillating term
    b1: float  # linear power scale of the ground-bounce oscillation
    h: float  # common antenna height, meters
    lam: float  # carrier wavelength, meters
    d0: float = 10.0  # reference distance, meters

    def __post_init__(self):
        if self.h <= 0 or self.lam <= 0 or self.d0 <= 0:
            raise ValueError("h, lam and d0 must be positive")


@dataclass(frozen=True)
class LinearSegParams:
    a2: float  # dB intercept at the reference distance
    b2: float  # slope factor: PL = a2 - b2 * 10 * log10(d/d0)


@dataclass(frozen=True)
class MedianPoint:
    distance: float
    pl_median: float
    source: str  # "bin_mode" | "bin_mean"
    count: int = 1  # samples the point summarizes; weights median-based fits


def two_ray_predict(d, params: TwoRayParams):
    """Linear path gain p_r/p_t of the two-ray model; valid for d >= d0."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < params.d0):
        raise ValueError(f"two-ray model is valid for d >= d0 = {params.d0} m")
    d_prime = np.sqrt(d * d + 4.0 * params.h * params.h)
    cos_term = np.cos(2.0 * np.pi * (d_prime - d) / params.lam)
    gain = (params.d0 / d) ** 2 * (params.a1 - params.b1 * cos_term)
    return gain if gain.ndim else float(gain)


def two_ray_db(d, params: TwoRayParams):
    return 10.0 * np.log10(two_ray_predict(d, params))


def dip_distances(h: float, lam: float, n_max: int = 8) -> np.ndarray:
    """Distances of the two-ray gain dips, largest (n=1) first.

    The n-th dip sits where the path difference equals n wavelengths:
    d_n = (4 h^2 - (n lam)^2) / (2 n lam). Non-positive solutions (path
    difference never reaches n wavelengths) are omitted.
    """
    if h <= 0 or lam <= 0:
        raise ValueError("h and lam must be positive")
    n = np.arange(1, n_max + 1, dtype=np.float64)
    d = (4.0 * h * h - (n * lam) ** 2) / (2.0 * n * lam)
    return d[d > 0]


def linear_segment_db(d, params: LinearSegParams, d0: float = 10.0):
    d = np.asarray(d, dtype=np.float64)
    pl = params.a2 - params.b2 * 10.0 * np.log10(d / d0)
    return pl if pl.ndim else float(pl)


@dataclass(frozen=True)
class TwoRayFit:
    params: TwoRayParams
    rms_db: float
    degenerate: bool = False  # fitted a1 <= b1: predicted gain can vanish


def fit_two_ray(
    samples: Sequence[PathLossSample],
    h: float,
    lam: float,
    d0: float = 10.0,
    d_max: float = math.inf,
    debias: bool = True,
) -> TwoRayFit:
    """Least-squares two-ray fit in the linear power domain.

    Uses samples with d0 <= d <= d_max. The fit is linear in (a1, b1) with
    regressors (d0/d)^2 and -(d0/d)^2 cos(2 pi (d'-d)/lam). A fitted b1 < 0
    is clamped to 0 (the physical prior is a1 >= b1 >= 0) and a1 re-solved;
    a1 <= b1 is carried as a degenerate-fit flag.
    """
    d_all, pl_all = samples_to_arrays(samples)
    mask = (d_all >= d0) & (d_all <= d_max)
    d, pl = d_all[mask], pl_all[mask]
    if d.size < 10:
        raise FitError(f"need at least 10 samples in [{d0}, {d_max}] m, got {d.size}")

    gain = 10.0 ** (pl / 10.0)
    d_prime = np.sqrt(d * d + 4.0 * h * h)
    r1 = (d0 / d) ** 2
    r2 = -r1 * np.cos(2.0 * np.pi * (d_prime - d) / lam)
    fit = lsq_fit(np.column_stack((r1, r2)), gain)
    a1, b1 = float(fit.coeffs[0]), float(fit.coeffs[1])

    if b1 < 0.0:
        warnings.warn(
            f"fitted b1 = {b1:.3e} < 0; clamping to 0 (no ground-bounce oscillation)",
            stacklevel=2,
        )
        b1 = 0.0
        a1 = float(np.dot(r1, gain) / np.dot(r1, r1))
    degenerate = a1 <= b1
    if degenerate:
        warnings.warn(
            f"degenerate two-ray fit: a1 = {a1:.3e} <= b1 = {b1:.3e}; "
            "predicted gain is non-positive at the dips",
            stacklevel=2,
        )

    def residuals_db(a: float, b: float) -> np.ndarray:
        pred = a * r1 + b * r2
        pred = np.maximum(pred, 1e-300)
        return pl - 10.0 * np.log10(pred)

    if debias and not degenerate:
        resid = residuals_db(a1, b1)
        sigma_nat = float(resid.std()) * math.log(10.0) / 10.0
        correction = math.exp(0.5 * sigma_nat * sigma_nat)
        a1 /= correction
        b1 /= correction

    rms_db = math.sqrt(float(np.mean(residuals_db(a1, b1) ** 2)))
    return TwoRayFit(
        params=TwoRayParams(a1=a1, b1=b1, h=h, lam=lam, d0=d0),
        rms_db=rms_db,
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class LinearFit:
    params: LinearSegParams
    rms_db: float


def fit_linear_segment(
    samples: Sequence[PathLossSample],
    d0: float = 10.0,
    d_br: float | None = None,
    anchor_pl: float | None = None,
    weights: Sequence[float] | None = None,
) -> LinearFit:
    """Log-linear segment fit, optionally continuity-constrained.

    With ``anchor_pl`` given (the segment-1 PL at d_br), a2 is eliminated by
    the continuity constraint a2 = anchor_pl + b2 * 10 * log10(d_br/d0) and
    only b2 is estimated. Without it, a2 and b2 are fitted jointly.
    ``weights`` (e.g. bin populations when fitting through median points)
    weight the squared residuals; rms is reported in the weighted metric.
    """
    d, pl = samples_to_arrays(samples)
    if d.size == 0:
        raise FitError("no samples for linear segment fit")
    if np.unique(d).size < 2:
        raise FitError("all samples at one distance: slope is underdetermined")
    w = np.ones_like(d) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != d.shape or np.any(w <= 0):
        raise ValueError("weights must be positive and match the sample count")
    if anchor_pl is not None:
        if d_br is None:
            raise ValueError("anchor_pl requires d_br")
        if np.any(d <= d_br):
            raise ValueError("constrained segment-2 fit requires all samples beyond d_br")
        u = -10.0 * np.log10(d / d_br)
        y = pl - anchor_pl
        b2 = float(np.dot(w * u, y) / np.dot(w * u, u))
        a2 = anchor_pl + b2 * 10.0 * math.log10(d_br / d0)
        resid = y - b2 * u
    else:
        sqrt_w = np.sqrt(w)
        design = np.column_stack((np.ones_like(d), -10.0 * np.log10(d / d0)))
        fit = lsq_fit(design * sqrt_w[:, None], pl * sqrt_w)
        a2, b2 = float(fit.coeffs[0]), float(fit.coeffs[1])
        resid = pl - (a2 - b2 * 10.0 * np.log10(d / d0))
    rms = math.sqrt(float(np.sum(w * resid**2) / np.sum(w)))
    return LinearFit(params=LinearSegParams(a2=a2, b2=b2), rms_db=rms)


@dataclass
class PathLossModel:
    segment1: TwoRayParams | LinearSegParams
    d_br: float
    segment2: LinearSegParams
    sigma1: float  # dB std of scatter about segment 1
    sigma2: float  # dB std of scatter about segment 2
    sigma_sh1: float | None = None  # shadowing part after the multipath split
    sigma_sh2: float | None = None
    noise_floor: float = -96.0  # dBm
    d0: float = 10.0
    fading: FadingModel | None = None

    def seg1_db(self, d):
        if isinstance(self.segment1, TwoRayParams):
            return two_ray_db(d, self.segment1)
        return linear_segment_db(d, self.segment1, self.d0)

    def seg2_db(self, d):
        return linear_segment_db(d, self.segment2, self.d0)

    def median_db(self, d):
        """Median PL at distance d (segment 1 up to d_br, segment 2 beyond)."""
        d = np.asarray(d, dtype=np.float64)
        if d.ndim == 0:
            return float(self.seg1_db(d)) if d <= self.d_br else float(self.seg2_db(d))
        out = np.empty_like(d)
        low = d <= self.d_br
        if np.any(low):
            out[low] = self.seg1_db(d[low])
        if np.any(~low):
            out[~low] = self.seg2_db(d[~low])
        return out

    def continuity_gap_db(self) -> float:
        return abs(float(self.seg1_db(self.d_br)) - float(self.seg2_db(self.d_br)))


@dataclass(frozen=True)
class BreakpointSearch:
    d_br: float
    model: PathLossModel
    rms_by_candidate: dict[float, float]


def _segment_sigmas(
    model: PathLossModel, d: np.ndarray, pl: np.ndarray
) -> tuple[float, float]:
    low = (d >= model.d0) & (d <= model.d_br)
    high = d > model.d_br
    sigma1 = float((pl[low] - model.seg1_db(d[low])).std()) if np.any(low) else 0.0
    sigma2 = float((pl[high] - model.seg2_db(d[high])).std()) if np.any(high) else 0.0
    return sigma1, sigma2


def search_breakpoint(
    samples: Sequence[PathLossSample],
    candidates: Sequence[float],
    seg1_kind: str = "two_ray",
    *,
    h: float = 1.6,
    lam: float = 0.0512,
    d0: float = 10.0,
    noise_floor: float = -96.0,
    debias: bool = True,
) -> BreakpointSearch:
    """Grid search over breakpoint candidates, minimizing pooled dB RMS.

    Each candidate gets a full two-segment fit (segment 2 continuity-
    constrained at the candidate). Candidates that leave fewer than 10
    samples on either side are infeasible. Ties pick the smallest d_br, so
    the result is deterministic however the candidates are ordered.
    """
    if seg1_kind not in ("two_ray", "linear"):
        raise ValueError(f"unknown segment-1 kind: {seg1_kind!r}")
    cands = sorted(float(c) for c in candidates)
    if not cands:
        raise FitError("no breakpoint candidates given")

    d, pl = samples_to_arrays(samples)
    rms_table: dict[float, float] = {}
    best: tuple[float, float, PathLossModel] | None = None

    for cand in cands:
        low_mask = (d >= d0) & (d <= cand)
        high_mask = d > cand
        if int(low_mask.sum()) < 10 or int(high_mask.sum()) < 10:
            continue
        low_samples = [s for s, keep in zip(samples, low_mask) if keep]
        try:
            if seg1_kind == "two_ray":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    seg1_fit = fit_two_ray(low_samples, h, lam, d0, cand, debias=debias)
                seg1: TwoRayParams | LinearSegParams = seg1_fit.params
                anchor = float(two_ray_db(cand, seg1_fit.params))
                ss1 = seg1_fit.rms_db**2 * len(low_samples)
            else:
                lin1 = fit_linear_segment(low_samples, d0=d0)
                seg1 = lin1.params
                anchor = float(linear_segment_db(cand, lin1.params, d0))
                ss1 = lin1.rms_db**2 * len(low_samples)

            seg2_samples = [s for s, keep in zip(samples, high_mask) if keep]
            seg2_fit = fit_linear_segment(seg2_samples, d0=d0, d_br=cand, anchor_pl=anchor)
            ss2 = seg2_fit.rms_db**2 * len(seg2_samples)
        except FitError:
            continue

        pooled = math.sqrt((ss1 + ss2) / (len(low_samples) + len(seg2_samples)))
        rms_table[cand] = pooled
        if best is None or pooled < best[0]:
            model = PathLossModel(
                segment1=seg1,
                d_br=cand,
                segment2=seg2_fit.params,
                sigma1=0.0,
                sigma2=0.0,
                noise_floor=noise_floor,
                d0=d0,
            )
            best = (pooled, cand, model)

    if best is None:
        raise FitError("no feasible breakpoint candidate (each needs >= 10 samples per side)")

    _, d_br, model = best
    model.sigma1, model.sigma2 = _segment_sigmas(model, d, pl)
    return BreakpointSearch(d_br=d_br, model=model, rms_by_candidate=rms_table)


def mode_fit_medians(
    samples: Sequence[PathLossSample],
    tx_power: float,
    noise_floor: float = -96.0,
    bin_width_logd: float = 0.5,
    value_bin_db: float = 1.0,
    margin_db: float = 3.0,
) -> list[MedianPoint]:
    """Per-distance-bin median estimates that survive noise-floor censoring.

    Bins are uniform in 10*log10(d). Within each bin the PL histogram mode
    stands in for the median: under the symmetric-scatter assumption the two
    coincide, and the mode is still observable when the lower tail is
    censored. A bin is emitted only when its histogram is unimodal and the
    mode clears the censoring threshold (noise_floor - tx_power) by
    ``margin_db``; bins whose true median sank below the floor would
    otherwise masquerade as modes sitting on the censoring edge.
    """
    d, pl = samples_to_arrays(samples)
    if d.size == 0:
        return []
    threshold = (noise_floor - tx_power) + margin_db
    u = 10.0 * np.log10(d)
    lo = math.floor(u.min() / bin_width_logd) * bin_width_logd
    n_bins = int(math.floor((u.max() - lo) / bin_width_logd)) + 1

    points: list[MedianPoint] = []
    for i in range(n_bins):
        mask = (u >= lo + i * bin_width_logd) & (u < lo + (i + 1) * bin_width_logd)
        if not np.any(mask):
            continue
        # Absolute histogram lattice (boundaries at (k - 1/2) * bin width):
        # censoring the lower tail then cannot move the bin grid, so the
        # mode is exactly invariant while the peak bin survives.
        origin = (math.floor(float(pl[mask].min()) / value_bin_db) - 0.5) * value_bin_db
        result = histogram_mode(pl[mask], value_bin_db, origin=origin)
        if not result.unimodal or result.mode < threshold:
            continue
        center_u = lo + (i + 0.5) * bin_width_logd
        points.append(
            MedianPoint(
                distance=float(10.0 ** (center_u / 10.0)),
                pl_median=result.mode,
                source="bin_mode",
                count=int(mask.sum()),
            )
        )
    return points


def static_link_modes(
    dataset: TraceDataset, value_bin_db: float = 1.0, max_spread_m: float = 1.0
) -> list[MedianPoint]:
    """One median point per (tx, rx) pair of a static deployment.

    Static links have no fast fading, so the per-pair RSSI mode discards
    interference outliers. Pairs whose logged distance moves more than
    ``max_spread_m`` are rejected: they are not static.
    """
    samples = to_pathloss(dataset)
    by_link: dict[tuple[str, str], list[PathLossSample]] = {}
    for s in samples:
        by_link.setdefault(s.link, []).append(s)

    points: list[MedianPoint] = []
    for link in sorted(by_link):
        recs = by_link[link]
        dists = np.asarray([s.distance for s in recs])
        if float(dists.max() - dists.min()) > max_spread_m:
            raise ValueError(
                f"link {link} is not static: distance spread "
                f"{dists.max() - dists.min():.2f} m exceeds {max_spread_m} m"
            )
        pls = np.asarray([s.pl for s in recs])
        if pls.size == 1:
            mode = float(pls[0])
        else:
            mode = histogram_mode(pls, value_bin_db).mode
        points.append(
            MedianPoint(distance=float(dists.mean()), pl_median=mode, source="bin_mode")
        )
    return points


DEFAULT_BREAKPOINTS = tuple(float(c) for c in range(100, 601, 50))


@dataclass
class FitConfig:
    segment1: str = "two_ray"  # or "linear"
    h: float = 1.6
    lam: float = 0.0512
    d0: float = 10.0
    breakpoints: Sequence[float] = DEFAULT_BREAKPOINTS
    mode_fit: bool = False
    tx_power: float | None = None  # required when mode_fit is on
    noise_floor: float = -96.0
    mode_bin_logd: float = 0.5
    mode_value_bin_db: float = 1.0
    mode_margin_db: float = 3.0
    mode_search_guard_db: float = 6.0  # extra clearance for the raw-sample search range
    debias: bool = True


def fit_model(samples: Sequence[PathLossSample], config: FitConfig) -> PathLossModel:
    """Fit the full composite model from path-loss samples.

    With ``mode_fit`` off this is the plain raw-sample grid search. With it
    on, the censoring workaround runs in three steps: (1) per-bin mode
    medians locate the distance range the noise floor has not corrupted,
    (2) the breakpoint search runs on raw samples restricted to that range
    (with ``mode_search_guard_db`` extra clearance, since raw samples lose
    their lower tail well before the bin mode does), and (3) segment 2 is
    refitted through the mode medians, count-weighted and continuity-
    constrained at the selected breakpoint. This undoes the shallow-slope
    artifact that censoring imprints on a raw far-segment fit.
    """
    if not config.mode_fit:
        return search_breakpoint(
            samples,
            config.breakpoints,
            seg1_kind=config.segment1,
            h=config.h,
            lam=config.lam,
            d0=config.d0,
            noise_floor=config.noise_floor,
            debias=config.debias,
        ).model

    if config.tx_power is None:
        raise ValueError("mode_fit requires tx_power to locate the censoring threshold")
    points = mode_fit_medians(
        samples,
        tx_power=config.tx_power,
        noise_floor=config.noise_floor,
        bin_width_logd=config.mode_bin_logd,
        value_bin_db=config.mode_value_bin_db,
        margin_db=config.mode_margin_db,
    )
    threshold = (config.noise_floor - config.tx_power) + config.mode_margin_db
    guarded = [p for p in points if p.pl_median >= threshold + config.mode_search_guard_db]
    if not guarded:
        raise FitError("no distance bin clears the censoring threshold with the search guard")
    # Upper edge of the last trustworthy log-distance bin.
    d_trust = max(p.distance for p in guarded) * 10.0 ** (config.mode_bin_logd / 20.0)
    trusted = [s for s in samples if s.distance <= d_trust]

    search = search_breakpoint(
        trusted,
        config.breakpoints,
        seg1_kind=config.segment1,
        h=config.h,
        lam=config.lam,
        d0=config.d0,
        noise_floor=config.noise_floor,
        debias=config.debias,
    )
    model = search.model
    pts = [p for p in points if p.distance > model.d_br]
    if len(pts) < 2:
        raise FitError(
            "mode fitting kept fewer than 2 usable median points beyond the breakpoint"
        )
    anchor = float(model.seg1_db(model.d_br))
    seg2_fit = fit_linear_segment(
        [PathLossSample(p.distance, p.pl_median, 0.0, ("", "")) for p in pts],
        d0=config.d0,
        d_br=model.d_br,
        anchor_pl=anchor,
        weights=[float(p.count) for p in pts],
    )
    model.segment2 = seg2_fit.params
    # Scatter stds from the trusted range only; the censored tail would
    # understate them.
    d, pl = samples_to_arrays(trusted)
    model.sigma1, model.sigma2 = _segment_sigmas(model, d, pl)
    return model


@dataclass(frozen=True)
class SigmaBin:
    lo: float
    hi: float
    count: int
    sigma_db: float


def sigma_by_bin(
    samples: Sequence[PathLossSample], model: PathLossModel, bin_edges: Sequence[float]
) -> list[SigmaBin]:
    """Distance-resolved scatter std about the fitted median (diagnostic)."""
    d, pl = samples_to_arrays(samples)
    edges = np.asarray(bin_edges, dtype=np.float64)
    out: list[SigmaBin] = []
    for i in range(edges.size - 1):
        mask = (d >= edges[i]) & (d < edges[i + 1]) & (d >= model.d0)
        n = int(mask.sum())
        if n < 2:
            continue
        resid = pl[mask] - model.median_db(d[mask])
        out.append(
            SigmaBin(lo=float(edges[i]), hi=float(edges[i + 1]), count=n,
                     sigma_db=float(resid.std()))
        )
    return out


def model_to_dict(model: PathLossModel) -> dict:
    out: dict = {
        "d_br_m": model.d_br,
        "d0_m": model.d0,
        "a2_db": model.segment2.a2,
        "b2": model.segment2.b2,
        "sigma1_db": model.sigma1,
        "sigma2_db": model.sigma2,
        "sigma_sh1_db": model.sigma_sh1,
        "sigma_sh2_db": model.sigma_sh2,
        "noise_floor_dbm": model.noise_floor,
        "fading": None if model.fading is None else fading_to_dict(model.fading),
    }
    if isinstance(model.segment1, TwoRayParams):
        out["segment1_kind"] = "two_ray"
        out["a1"] = model.segment1.a1
        out["b1"] = model.segment1.b1
        out["h_m"] = model.segment1.h
        out["lambda_m"] = model.segment1.lam
    else:
        out["segment1_kind"] = "linear"
        out["a1_db"] = model.segment1.a2
        out["b1"] = model.segment1.b2
    return out


def model_from_dict(data: dict) -> PathLossModel:
    d0 = float(data["d0_m"])
    kind = data["segment1_kind"]
    if kind == "two_ray":
        segment1: TwoRayParams | LinearSegParams = TwoRayParams(
            a1=float(data["a1"]),
            b1=float(data["b1"]),
            h=float(data["h_m"]),
            lam=float(data["lambda_m"]),
            d0=d0,
        )
    elif kind == "linear":
        segment1 = LinearSegParams(a2=float(data["a1_db"]), b2=float(data["b1"]))
    else:
        raise ValueError(f"unknown segment1_kind: {kind!r}")
    fading = data.get("fading")
    return PathLossModel(
        segment1=segment1,
        d_br=float(data["d_br_m"]),
        segment2=LinearSegParams(a2=float(data["a2_db"]), b2=float(data["b2"])),
        sigma1=float(data["sigma1_db"]),
        sigma2=float(data["sigma2_db"]),
        sigma_sh1=None if data.get("sigma_sh1_db") is None else float(data["sigma_sh1_db"]),
        sigma_sh2=None if data.get("sigma_sh2_db") is None else float(data["sigma_sh2_db"]),
        noise_floor=float(data["noise_floor_dbm"]),
        d0=d0,
        fading=None if fading is None else fading_from_dict(fading),
    )


def save_model(model: PathLossModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2, sort_keys=True) + "\n")


def load_model(path) -> PathLossModel:
    return model_from_dict(json.loads(Path(path).read_text()))
