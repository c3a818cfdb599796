"""Forward Monte-Carlo link simulator.

Regenerates per-packet RSSI from a fitted path-loss model along a mobility
trace and applies a noise-floor receiver: a packet is received when its RSSI
clears the floor and it survives an optional independent interference-loss
draw. Output is a per-packet log from which PER and 95th-percentile
inter-packet-gap statistics are computed in distance bins.

Randomness and determinism
    All draws come from ``numpy.random.default_rng(seed)`` (PCG64), in a
    fixed order: shadow innovations first, then multipath power draws (when
    a fading model is attached), then the interference uniforms. A given
    (model, mobility, phy, seed) therefore always produces a byte-identical
    packet log, regardless of the kernel backend in use.

Shadow fading evolves as an exponentially correlated Gaussian over traveled
distance (step correlation exp(-|moved|/decorrelation_distance)), with the
per-segment shadowing std when the multipath split is available and the
total per-segment scatter std otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from ._kernels import shadow_scan
from .fading import FadingModel
from .pathloss import PathLossModel
from .trace import RssiRecord, TraceDataset

LOSS_CAUSE_NONE = ""
LOSS_CAUSE_NOISE = "noise"
LOSS_CAUSE_INTERFERENCE = "interference"

_CAUSE_CODES = {LOSS_CAUSE_NONE: 0, LOSS_CAUSE_NOISE: 1, LOSS_CAUSE_INTERFERENCE: 2}
_CODE_CAUSES = {v: k for k, v in _CAUSE_CODES.items()}

PACKET_LOG_HEADER = "timestamp,distance_m,rssi_dbm,received,loss_cause"
METRIC_HEADER = "bin_lo_m,bin_hi_m,value,flag"

GAUSSIAN_POWER_FLOOR = 1e-6  # linear; keeps dB of a gaussian power draw finite


@dataclass(frozen=True)
class PhyConfig:
    tx_power: float  # dBm
    rate: float  # packets per second
    noise_floor: float  # dBm
    interference_loss_prob: float = 0.0  # independent per-packet loss

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("packet rate must be positive")
        if not 0.0 <= self.interference_loss_prob <= 1.0:
            raise ValueError("interference_loss_prob must be within [0, 1]")


@dataclass
class MobilityTrace:
    timestamps: np.ndarray  # seconds, strictly increasing
    distances: np.ndarray  # meters, > 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        if self.timestamps.size == 0:
            raise ValueError("mobility trace is empty")
        if self.timestamps.size != self.distances.size:
            raise ValueError("timestamps and distances must have equal length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("mobility timestamps must be strictly increasing")
        if np.any(self.distances <= 0):
            raise ValueError("mobility distances must be positive")

    def distance_at(self, t) -> np.ndarray:
        return np.interp(np.asarray(t, dtype=np.float64), self.timestamps, self.distances)

    @classmethod
    def from_csv(cls, path) -> "MobilityTrace":
        ts: list[float] = []
        ds: list[float] = []
        with open(path, "r", encoding="utf-8") as handle:
            for line_no, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if line == "timestamp,distance_m":
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    raise ValueError(f"{path}: line {line_no}: expected 2 fields")
                ts.append(float(parts[0]))
                ds.append(float(parts[1]))
        return cls(timestamps=np.asarray(ts), distances=np.asarray(ds))

    def to_csv(self, path) -> None:
        lines = ["timestamp,distance_m"]
        for t, d in zip(self.timestamps, self.distances):
            lines.append(f"{float(t)!r},{float(d)!r}")
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class LinkFadingState:
    shadow_value: float  # dB
    last_position: float  # meters (link distance used as the travel proxy)
    decorrelation_distance: float = 25.0

    def __post_init__(self):
        if self.decorrelation_distance <= 0:
            raise ValueError("decorrelation_distance must be positive")


@dataclass
class PacketLog:
    timestamps: np.ndarray
    distances: np.ndarray
    rssi: np.ndarray  # dBm, computed for lost packets too
    received: np.ndarray  # bool
    loss_cause: np.ndarray  # int8 codes, see _CAUSE_CODES

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def causes(self) -> list[str]:
        return [_CODE_CAUSES[int(c)] for c in self.loss_cause]

    def to_csv(self, path) -> None:
        lines = [PACKET_LOG_HEADER]
        for t, d, r, ok, c in zip(
            self.timestamps, self.distances, self.rssi, self.received, self.loss_cause
        ):
            lines.append(
                f"{float(t)!r},{float(d)!r},{float(r)!r},{1 if ok else 0},{_CODE_CAUSES[int(c)]}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "PacketLog":
        ts, ds, rs, ok, cause = [], [], [], [], []
        with open(path, "r", encoding="utf-8") as handle:
            header = handle.readline().strip()
            if header != PACKET_LOG_HEADER:
                raise ValueError(f"{path}: not a packet log (header {header!r})")
            for line_no, raw in enumerate(handle, start=2):
                line = raw.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 5:
                    raise ValueError(f"{path}: line {line_no}: expected 5 fields")
                ts.append(float(parts[0]))
                ds.append(float(parts[1]))
                rs.append(float(parts[2]))
                ok.append(parts[3] == "1")
                cause.append(_CAUSE_CODES[parts[4]])
        return cls(
            timestamps=np.asarray(ts),
            distances=np.asarray(ds),
            rssi=np.asarray(rs),
            received=np.asarray(ok, dtype=bool),
            loss_cause=np.asarray(cause, dtype=np.int8),
        )


def _shadow_sigmas(model: PathLossModel) -> tuple[float, float]:
    # Without a multipath split all scatter is treated as shadowing.
    s1 = model.sigma_sh1 if model.sigma_sh1 is not None else model.sigma1
    s2 = model.sigma_sh2 if model.sigma_sh2 is not None else model.sigma2
    return float(s1), float(s2)


def _multipath_db(fading: FadingModel | None, rng: np.random.Generator, n: int) -> np.ndarray:
    if fading is None:
        return np.zeros(n)
    family = fading.fit.family
    if family == "nakagami_power":
        m = fading.fit.params["m"]
        power = rng.gamma(shape=m, scale=1.0 / m, size=n)
    elif family == "gaussian":
        mu = fading.fit.params.get("mu", 1.0)
        sd = fading.fit.params["sigma_lin"]
        power = np.maximum(rng.normal(mu, sd, size=n), GAUSSIAN_POWER_FLOOR)
    else:
        raise ValueError(f"unknown fading family: {family!r}")
    return 10.0 * np.log10(power)


def initial_fading_state(
    model: PathLossModel,
    distance: float,
    rng: np.random.Generator,
    decorrelation_distance: float = 25.0,
) -> LinkFadingState:
    """Fresh link state with the shadow drawn at stationarity."""
    s1, s2 = _shadow_sigmas(model)
    sigma = s1 if distance <= model.d_br else s2
    return LinkFadingState(
        shadow_value=float(sigma * rng.standard_normal()),
        last_position=float(distance),
        decorrelation_distance=decorrelation_distance,
    )


def sample_link_gain(
    model: PathLossModel,
    d: float,
    state: LinkFadingState,
    rng: np.random.Generator,
    d_max: float = math.inf,
) -> tuple[float, LinkFadingState]:
    """One path-loss draw: median(d) + correlated shadow + multipath.

    Returns the pl value in dB and the advanced fading state. Two draws are
    consumed per call (shadow innovation, then multipath when the model
    carries a fading distribution).
    """
    if d < model.d0 or d > d_max:
        raise ValueError(f"distance {d} m outside model range [{model.d0}, {d_max}]")
    s1, s2 = _shadow_sigmas(model)
    sigma = s1 if d <= model.d_br else s2
    rho = math.exp(-abs(d - state.last_position) / state.decorrelation_distance)
    shadow = rho * state.shadow_value + math.sqrt(1.0 - rho * rho) * sigma * float(
        rng.standard_normal()
    )
    mp = float(_multipath_db(model.fading, rng, 1)[0])
    pl = float(model.median_db(d)) + shadow + mp
    new_state = LinkFadingState(
        shadow_value=shadow,
        last_position=float(d),
        decorrelation_distance=state.decorrelation_distance,
    )
    return pl, new_state


def simulate_run(
    model: PathLossModel,
    mobility: MobilityTrace,
    phy: PhyConfig,
    seed: int,
    decorrelation_distance: float = 25.0,
    d_max: float = math.inf,
) -> PacketLog:
    """Simulate one link over the mobility trace at the configured rate."""
    t0 = float(mobility.timestamps[0])
    t1 = float(mobility.timestamps[-1])
    n = int(math.floor((t1 - t0) * phy.rate)) + 1
    times = t0 + np.arange(n) / phy.rate
    d = mobility.distance_at(times)
    if np.any(d < model.d0) or np.any(d > d_max):
        raise ValueError(
            f"mobility distances leave the model range [{model.d0}, {d_max}] m"
        )

    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    mp_db = _multipath_db(model.fading, rng, n)
    u = rng.random(n)

    s1, s2 = _shadow_sigmas(model)
    sigma = np.where(d <= model.d_br, s1, s2)
    rho = np.empty(n)
    rho[0] = 0.0  # first packet draws the shadow at stationarity
    rho[1:] = np.exp(-np.abs(np.diff(d)) / decorrelation_distance)
    shadow = shadow_scan(rho, sigma, z)

    pl = model.median_db(d) + shadow + mp_db
    rssi = phy.tx_power + pl
    above_floor = rssi > phy.noise_floor
    interfered = u < phy.interference_loss_prob
    received = above_floor & ~interfered

    cause = np.zeros(n, dtype=np.int8)
    cause[~above_floor] = _CAUSE_CODES[LOSS_CAUSE_NOISE]
    cause[above_floor & interfered] = _CAUSE_CODES[LOSS_CAUSE_INTERFERENCE]

    return PacketLog(
        timestamps=times, distances=d, rssi=rssi, received=received, loss_cause=cause
    )


@dataclass
class BinnedMetric:
    bin_width: float
    values: dict[int, float] = field(default_factory=dict)
    flags: dict[int, str] = field(default_factory=dict)

    def rows(self) -> list[tuple[float, float, float, str]]:
        out = []
        for idx in sorted(self.values):
            out.append(
                (
                    idx * self.bin_width,
                    (idx + 1) * self.bin_width,
                    self.values[idx],
                    self.flags.get(idx, ""),
                )
            )
        return out

    def to_csv(self, path) -> None:
        lines = [METRIC_HEADER]
        for lo, hi, value, flag in self.rows():
            lines.append(f"{float(lo)!r},{float(hi)!r},{float(value)!r},{flag}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "BinnedMetric":
        values: dict[int, float] = {}
        flags: dict[int, str] = {}
        width: float | None = None
        with open(path, "r", encoding="utf-8") as handle:
            header = handle.readline().strip()
            if header != METRIC_HEADER:
                raise ValueError(f"{path}: not a metric file (header {header!r})")
            for line_no, raw in enumerate(handle, start=2):
                line = raw.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 4:
                    raise ValueError(f"{path}: line {line_no}: expected 4 fields")
                lo, hi, value = float(parts[0]), float(parts[1]), float(parts[2])
                w = hi - lo
                if width is None:
                    width = w
                elif abs(w - width) > 1e-9:
                    raise ValueError(f"{path}: inconsistent bin width at line {line_no}")
                idx = int(round(lo / w))
                values[idx] = value
                if parts[3]:
                    flags[idx] = parts[3]
        if width is None:
            raise ValueError(f"{path}: metric file has no rows")
        return cls(bin_width=width, values=values, flags=flags)


def per_by_bin(log: PacketLog, bin_width: float = 40.0) -> BinnedMetric:
    """Packet error rate per distance bin; empty bins are absent."""
    idx = np.floor(log.distances / bin_width).astype(np.int64)
    metric = BinnedMetric(bin_width=float(bin_width))
    for i in np.unique(idx):
        mask = idx == i
        total = int(mask.sum())
        lost = total - int(log.received[mask].sum())
        metric.values[int(i)] = lost / total
    return metric


def ipg95_by_bin(
    log: PacketLog, bin_width: float = 40.0, min_gaps: int = 20
) -> BinnedMetric:
    """95th-percentile inter-packet gap (nearest rank) per distance bin.

    Gaps run between consecutive received packets; each is assigned to the
    bin of the later packet. Bins with fewer than ``min_gaps`` gaps are
    flagged low-confidence but still reported.
    """
    rx = np.flatnonzero(log.received)
    metric = BinnedMetric(bin_width=float(bin_width))
    if rx.size < 2:
        return metric
    gaps = np.diff(log.timestamps[rx])
    later = rx[1:]
    idx = np.floor(log.distances[later] / bin_width).astype(np.int64)
    for i in np.unique(idx):
        g = np.sort(gaps[idx == i])
        rank = max(int(math.ceil(0.95 * g.size)), 1)
        metric.values[int(i)] = float(g[rank - 1])
        if g.size < min_gaps:
            metric.flags[int(i)] = "low_confidence"
    return metric


def abs_error(sim: BinnedMetric, ref: BinnedMetric) -> BinnedMetric:
    """Per-bin |sim - ref|; bins absent in either input are absent."""
    if abs(sim.bin_width - ref.bin_width) > 1e-9:
        raise ValueError(
            f"bin widths differ: {sim.bin_width} vs {ref.bin_width}"
        )
    out = BinnedMetric(bin_width=sim.bin_width)
    for idx in sorted(set(sim.values) & set(ref.values)):
        out.values[idx] = abs(sim.values[idx] - ref.values[idx])
        flag = sim.flags.get(idx, "") or ref.flags.get(idx, "")
        if flag:
            out.flags[idx] = flag
    return out


def log_to_dataset(
    log: PacketLog,
    tx_power: float,
    tx_id: str = "tx",
    rx_id: str = "rx",
    metadata: dict | None = None,
) -> TraceDataset:
    """Received packets of a simulated log as an RSSI trace dataset.

    Packet index becomes the sequence number, so the loss structure of the
    simulation is visible to loss_census and signature extraction exactly as
    it would be in a field trace.
    """
    records = []
    for k in np.flatnonzero(log.received):
        records.append(
            RssiRecord(
                timestamp=float(log.timestamps[k]),
                tx_id=tx_id,
                rx_id=rx_id,
                seq_no=int(k),
                distance=float(log.distances[k]),
                rssi=float(log.rssi[k]),
                tx_power=float(tx_power),
            )
        )
    meta = {"tx_power_dbm": float(tx_power)}
    if metadata:
        meta.update(metadata)
    return TraceDataset(records=records, metadata=meta)
