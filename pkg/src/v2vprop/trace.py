"""Packet RSSI trace ingestion.

A trace is a sequence of per-packet records: reception time, link endpoints,
a per-link sequence number, transmitter-receiver distance and the reported
RSSI. Two file formats are accepted:

CSV
    Leading ``# key=value`` lines carry trial metadata (``trial``,
    ``tx_power_dbm``, ``rate_hz``, ``noise_floor_dbm``, ``rssi_offset_db``),
    followed by a header row and the columns
    ``timestamp,tx_id,rx_id,seq_no,distance_m,rssi_dbm``.

JSONL
    One object per packet with the same field names. An optional first line
    ``{"metadata": {...}}`` carries the trial metadata.

Sequence numbers are the ground truth for packet loss: every missing seq_no
between two received packets of the same link is a lost packet.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

CSV_COLUMNS = ("timestamp", "tx_id", "rx_id", "seq_no", "distance_m", "rssi_dbm")

_FLOAT_METADATA_KEYS = frozenset(
    {"tx_power_dbm", "rate_hz", "noise_floor_dbm", "rssi_offset_db"}
)


class TraceFormatError(ValueError):
    """Malformed trace input (bad row, missing column, bad metadata)."""


class StreamError(ValueError):
    """Per-link stream invariant violated (e.g. non-monotone seq_no)."""


@dataclass(frozen=True)
class RssiRecord:
    timestamp: float
    tx_id: str
    rx_id: str
    seq_no: int
    distance: float  # meters, > 0
    rssi: float  # dBm
    tx_power: float  # dBm; NaN when unknown
    rssi_offset: float = 0.0  # dB manufacturer correction

    @property
    def link(self) -> tuple[str, str]:
        return (self.tx_id, self.rx_id)


@dataclass(frozen=True)
class PathLossSample:
    distance: float  # meters
    pl: float  # dB path gain: corrected received dB power minus tx dB power
    timestamp: float
    link: tuple[str, str]


@dataclass
class TraceDataset:
    records: list[RssiRecord]
    metadata: dict[str, float | str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def noise_floor(self) -> float | None:
        value = self.metadata.get("noise_floor_dbm")
        return None if value is None else float(value)

    @property
    def tx_power(self) -> float | None:
        value = self.metadata.get("tx_power_dbm")
        return None if value is None else float(value)

    @property
    def rate(self) -> float | None:
        value = self.metadata.get("rate_hz")
        return None if value is None else float(value)

    def links(self) -> dict[tuple[str, str], list[RssiRecord]]:
        """Records grouped per (tx_id, rx_id), preserving input order."""
        out: dict[tuple[str, str], list[RssiRecord]] = {}
        for rec in self.records:
            out.setdefault(rec.link, []).append(rec)
        return out


def _parse_metadata_value(key: str, raw: str) -> float | str:
    raw = raw.strip()
    if key in _FLOAT_METADATA_KEYS:
        try:
            return float(raw)
        except ValueError as exc:
            raise TraceFormatError(f"metadata key {key!r} is not numeric: {raw!r}") from exc
    return raw


def _validate_record(
    rec: RssiRecord,
    last_seen: dict[tuple[str, str], tuple[float, int]],
    line_no: int,
) -> None:
    if not rec.distance > 0:
        raise TraceFormatError(f"line {line_no}: distance must be > 0, got {rec.distance}")
    prev = last_seen.get(rec.link)
    if prev is not None:
        prev_t, prev_seq = prev
        if rec.timestamp < prev_t:
            raise TraceFormatError(
                f"line {line_no}: timestamp decreases within link {rec.link}"
            )
        if rec.seq_no <= prev_seq:
            raise TraceFormatError(
                f"line {line_no}: seq_no not strictly increasing within link {rec.link}"
            )
    last_seen[rec.link] = (rec.timestamp, rec.seq_no)


def _iter_lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            yield from handle
        return
    if isinstance(source, (bytes, bytearray)):
        yield from io.StringIO(source.decode("utf-8"))
        return
    for line in source:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        yield line


def _parse_csv(lines: Iterator[str]) -> TraceDataset:
    metadata: dict[str, float | str] = {}
    records: list[RssiRecord] = []
    last_seen: dict[tuple[str, str], tuple[float, int]] = {}
    header_checked = False

    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            if not body:
                continue
            if "=" not in body:
                raise TraceFormatError(f"line {line_no}: metadata line without '=': {line!r}")
            key, value = body.split("=", 1)
            key = key.strip()
            metadata[key] = _parse_metadata_value(key, value)
            continue
        parts = [p.strip() for p in line.split(",")]
        if not header_checked:
            header_checked = True
            if tuple(parts) != CSV_COLUMNS:
                missing = [c for c in CSV_COLUMNS if c not in parts]
                raise TraceFormatError(
                    f"line {line_no}: expected header {','.join(CSV_COLUMNS)}; "
                    f"missing columns: {missing or parts}"
                )
            continue
        if len(parts) != len(CSV_COLUMNS):
            raise TraceFormatError(
                f"line {line_no}: expected {len(CSV_COLUMNS)} fields, got {len(parts)}"
            )
        try:
            rec = RssiRecord(
                timestamp=float(parts[0]),
                tx_id=parts[1],
                rx_id=parts[2],
                seq_no=int(parts[3]),
                distance=float(parts[4]),
                rssi=float(parts[5]),
                tx_power=float(metadata.get("tx_power_dbm", math.nan)),
                rssi_offset=float(metadata.get("rssi_offset_db", 0.0)),
            )
        except ValueError as exc:
            raise TraceFormatError(f"line {line_no}: malformed row: {exc}") from exc
        _validate_record(rec, last_seen, line_no)
        records.append(rec)

    return TraceDataset(records=records, metadata=metadata)


def _parse_jsonl(lines: Iterator[str]) -> TraceDataset:
    metadata: dict[str, float | str] = {}
    records: list[RssiRecord] = []
    last_seen: dict[tuple[str, str], tuple[float, int]] = {}

    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"line {line_no}: invalid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise TraceFormatError(f"line {line_no}: expected a JSON object")
        if "metadata" in obj and len(obj) == 1:
            for key, value in obj["metadata"].items():
                metadata[key] = _parse_metadata_value(key, str(value))
            continue
        missing = [c for c in CSV_COLUMNS if c not in obj]
        if missing:
            raise TraceFormatError(f"line {line_no}: missing fields: {missing}")
        try:
            rec = RssiRecord(
                timestamp=float(obj["timestamp"]),
                tx_id=str(obj["tx_id"]),
                rx_id=str(obj["rx_id"]),
                seq_no=int(obj["seq_no"]),
                distance=float(obj["distance_m"]),
                rssi=float(obj["rssi_dbm"]),
                tx_power=float(obj.get("tx_power_dbm", metadata.get("tx_power_dbm", math.nan))),
                rssi_offset=float(
                    obj.get("rssi_offset_db", metadata.get("rssi_offset_db", 0.0))
                ),
            )
        except (TypeError, ValueError) as exc:
            raise TraceFormatError(f"line {line_no}: malformed record: {exc}") from exc
        _validate_record(rec, last_seen, line_no)
        records.append(rec)

    return TraceDataset(records=records, metadata=metadata)


def parse_trace(source, format: str = "csv") -> TraceDataset:
    """Parse a trace file (path, bytes, or text stream) into a TraceDataset.

    Raises TraceFormatError with the offending line number on malformed
    input. Records are returned in file order; per-link timestamp/seq_no
    monotonicity is enforced during the pass, so the returned dataset can be
    treated as immutable and shared freely afterwards.
    """
    lines = _iter_lines(source)
    if format == "csv":
        return _parse_csv(lines)
    if format == "jsonl":
        return _parse_jsonl(lines)
    raise ValueError(f"unknown trace format: {format!r}")


def to_pathloss(dataset: TraceDataset) -> list[PathLossSample]:
    """Convert records to path-loss samples: pl = (rssi + offset) - tx_power."""
    samples: list[PathLossSample] = []
    for rec in dataset.records:
        if math.isnan(rec.tx_power):
            raise ValueError(
                f"tx_power unknown for link {rec.link}; set tx_power_dbm in metadata"
            )
        samples.append(
            PathLossSample(
                distance=rec.distance,
                pl=(rec.rssi + rec.rssi_offset) - rec.tx_power,
                timestamp=rec.timestamp,
                link=rec.link,
            )
        )
    return samples


def samples_to_arrays(samples: Iterable[PathLossSample]) -> tuple[np.ndarray, np.ndarray]:
    """Distances and pl values of a sample sequence as float64 arrays."""
    pairs = [(s.distance, s.pl) for s in samples]
    if not pairs:
        return np.empty(0), np.empty(0)
    arr = np.asarray(pairs, dtype=np.float64)
    return arr[:, 0], arr[:, 1]


@dataclass(frozen=True)
class BinCensus:
    lo: float
    hi: float
    received: int
    lost: int


def loss_census(dataset: TraceDataset, bin_edges: Sequence[float]) -> list[BinCensus]:
    """Count received and lost packets per distance bin.

    Lost packets leave no record, so each seq_no gap is attributed to the
    bin of the last received packet's distance. Gaps before a link's first
    record are unobservable and not counted.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be an increasing sequence of at least 2 values")

    received = np.zeros(edges.size - 1, dtype=np.int64)
    lost = np.zeros(edges.size - 1, dtype=np.int64)

    def bin_of(distance: float) -> int:
        if distance == edges[-1]:  # right edge of the last bin is inclusive
            return edges.size - 2
        idx = int(np.searchsorted(edges, distance, side="right")) - 1
        if idx < 0 or idx >= edges.size - 1:
            raise ValueError(
                f"distance {distance} m outside bin range [{edges[0]}, {edges[-1]}]"
            )
        return idx

    for link, recs in dataset.links().items():
        prev_seq: int | None = None
        prev_bin: int | None = None
        for rec in recs:
            if prev_seq is not None and rec.seq_no <= prev_seq:
                raise StreamError(f"non-monotone seq_no in link {link}")
            idx = bin_of(rec.distance)
            received[idx] += 1
            if prev_seq is not None and rec.seq_no > prev_seq + 1:
                lost[prev_bin] += rec.seq_no - prev_seq - 1
            prev_seq = rec.seq_no
            prev_bin = idx

    return [
        BinCensus(lo=float(edges[i]), hi=float(edges[i + 1]),
                  received=int(received[i]), lost=int(lost[i]))
        for i in range(edges.size - 1)
    ]
