"""Range-test data reduction: PDR binning, summary rows, distance series.

PDR per bin follows the highest-sequence rule (received distinct sequence
numbers divided by the highest sequence observed in the bin's window), with
an optional sender-log mode where the true per-bin totals come from the
sender's own transmission log.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path


class ImportError_(ValueError):
    """Raised when a CSV export cannot be parsed at all."""


@dataclass(frozen=True)
class RangeTestRecord:
    time: datetime
    node_id: int
    seq: int
    distance_m: float
    rssi_dbm: float
    snr_db: float | None
    hops: int = 1

    def __post_init__(self) -> None:
        if self.seq < 1:
            raise ValueError(f"seq must be >= 1, got {self.seq}")
        if self.distance_m < 0:
            raise ValueError("distance must be >= 0")


@dataclass(frozen=True)
class BinnedPdr:
    low_m: float
    high_m: float
    received: int
    total: int

    @property
    def pdr(self) -> float | None:
        """PDR percent, or None when the bin saw no traffic."""
        if self.total == 0:
            return None
        return 100.0 * self.received / self.total


@dataclass(frozen=True)
class SummaryRow:
    frequency: str
    channel: str
    mean_snr_db: float | None
    mean_rssi_dbm: float | None
    max_distance_m: float | None
    overall_pdr_percent: float | None

    @property
    def empty(self) -> bool:
        return self.max_distance_m is None


def _distinct_seqs_by_bin(
    records: list[RangeTestRecord], bin_width: float
) -> dict[int, set[int]]:
    by_bin: dict[int, set[int]] = {}
    for r in records:
        by_bin.setdefault(int(r.distance_m // bin_width), set()).add(r.seq)
    return by_bin


def pdr_bins(
    records: list[RangeTestRecord],
    sender_log: list[tuple[int, float]] | None = None,
    bin_width: float = 50.0,
) -> list[BinnedPdr]:
    """Per-bin packet delivery ratio over contiguous distance bins.

    ``sender_log`` is a list of (seq, receiver distance at send time) pairs;
    when supplied, per-bin totals come from the sender (exact). Otherwise
    the highest sequence number observed in a bin stands in for the count
    of messages sent while the receiver occupied that bin, scoped by the
    neighbouring bins' sequence windows.
    """
    if bin_width <= 0:
        raise ValueError("bin width must be positive")
    received = _distinct_seqs_by_bin(records, bin_width)
    totals: dict[int, int] = {}
    if sender_log is not None:
        for seq, distance in sender_log:
            idx = int(distance // bin_width)
            totals[idx] = totals.get(idx, 0) + 1
    else:
        # Highest-sequence rule: a bin's window runs from just past the
        # previous bin's highest sequence up to its own highest sequence.
        prev_high = 0
        for idx in sorted(received):
            high = max(received[idx])
            totals[idx] = max(high - prev_high, len(received[idx]))
            prev_high = max(prev_high, high)
    if not totals:
        return []
    last = max(totals)
    bins = []
    for idx in range(0, last + 1):
        bins.append(
            BinnedPdr(
                low_m=idx * bin_width,
                high_m=(idx + 1) * bin_width,
                received=len(received.get(idx, ())),
                total=totals.get(idx, 0),
            )
        )
    return bins


def overall_pdr(records: list[RangeTestRecord], total_sent: int | None = None) -> float | None:
    """Whole-run PDR: distinct sequences received over total sent.

    Without a sender log the highest received sequence stands in for the
    total sent (the paper's rule; optimistic when the final sends are lost).
    """
    seqs = {r.seq for r in records}
    if not seqs:
        return None if not total_sent else 0.0
    total = total_sent if total_sent is not None else max(seqs)
    if total <= 0:
        return None
    return 100.0 * len(seqs) / total


def summarize(
    records: list[RangeTestRecord],
    frequency: str,
    channel: str,
    total_sent: int | None = None,
) -> SummaryRow:
    """Per-configuration summary: mean SNR/RSSI, max distance, overall PDR.

    Means are arithmetic over received records; records without an SNR
    reading still count toward PDR but are excluded from the SNR mean.
    """
    if not records:
        return SummaryRow(frequency, channel, None, None, None, None)
    snrs = [r.snr_db for r in records if r.snr_db is not None]
    mean_snr = sum(snrs) / len(snrs) if snrs else None
    mean_rssi = sum(r.rssi_dbm for r in records) / len(records)
    return SummaryRow(
        frequency=frequency,
        channel=channel,
        mean_snr_db=mean_snr,
        mean_rssi_dbm=mean_rssi,
        max_distance_m=max(r.distance_m for r in records),
        overall_pdr_percent=overall_pdr(records, total_sent),
    )


def series(records: list[RangeTestRecord], metric: str) -> list[tuple[float, float]]:
    """(distance, value) pairs sorted by distance, ties kept in time order."""
    if metric not in ("rssi", "snr"):
        raise ValueError(f"metric must be 'rssi' or 'snr', got {metric!r}")
    picked = []
    for r in sorted(records, key=lambda r: (r.distance_m, r.time)):
        value = r.rssi_dbm if metric == "rssi" else r.snr_db
        if value is not None:
            picked.append((r.distance_m, value))
    return picked


# ----------------------------------------------------------------------
_SEQ_RE = re.compile(r"seq\s*0*(\d+)", re.IGNORECASE)

#: Column aliases accepted by the Meshtastic-style import adapter.
_COLUMN_ALIASES = {
    "time": ("time_iso8601", "time", "date", "timestamp", "rx time"),
    "node": ("node_id", "node", "from", "sender node id"),
    "seq": ("seq",),
    "payload": ("payload",),
    "distance": ("distance_m", "distance"),
    "rssi": ("rssi_dbm", "rssi", "rx rssi"),
    "snr": ("snr_db", "snr", "rx snr"),
    "hops": ("hops", "hop count"),
}


def _find_column(header: list[str], names: tuple[str, ...]) -> int | None:
    lowered = [h.strip().lower() for h in header]
    for name in names:
        if name in lowered:
            return lowered.index(name)
    return None


def _parse_time(raw: str) -> datetime:
    raw = raw.strip()
    for fmt in (None, "%Y-%m-%d %H:%M:%S", "%d.%m.%Y %H:%M:%S"):
        try:
            if fmt is None:
                return datetime.fromisoformat(raw.replace("Z", "+00:00"))
            return datetime.strptime(raw, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {raw!r}")


def import_meshtastic_csv(path: str | Path) -> tuple[list[RangeTestRecord], list[dict]]:
    """Import the canonical CSV or a Meshtastic-style export.

    Sequence numbers may live in a ``payload`` column as "seq N". Malformed
    rows are collected into a rejects report instead of aborting the import.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ImportError_(f"{path}: empty file, no header")
        cols = {key: _find_column(header, names) for key, names in _COLUMN_ALIASES.items()}
        if cols["distance"] is None or (cols["seq"] is None and cols["payload"] is None):
            raise ImportError_(f"{path}: header lacks distance and seq/payload columns")
        records: list[RangeTestRecord] = []
        rejects: list[dict] = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(_row_to_record(row, cols))
            except (ValueError, IndexError) as exc:
                rejects.append({"line": lineno, "row": row, "error": str(exc)})
    return records, rejects


def _row_to_record(row: list[str], cols: dict[str, int | None]) -> RangeTestRecord:
    def cell(key: str) -> str | None:
        idx = cols[key]
        if idx is None or idx >= len(row):
            return None
        value = row[idx].strip()
        return value or None

    if cols["seq"] is not None and cell("seq"):
        seq = int(cell("seq"))
    else:
        payload = cell("payload")
        if payload is None:
            raise ValueError("row has neither seq nor payload")
        match = _SEQ_RE.search(payload)
        if not match:
            raise ValueError(f"payload {payload!r} carries no sequence number")
        seq = int(match.group(1))
    distance = float(cell("distance") or "")
    raw_time = cell("time")
    time = _parse_time(raw_time) if raw_time else datetime(1970, 1, 1, tzinfo=timezone.utc)
    raw_snr = cell("snr")
    snr = float(raw_snr) if raw_snr is not None else None
    if snr is not None and math.isnan(snr):
        snr = None
    raw_rssi = cell("rssi")
    rssi = float(raw_rssi) if raw_rssi is not None else 0.0
    return RangeTestRecord(
        time=time,
        node_id=int(cell("node") or 0),
        seq=seq,
        distance_m=distance,
        rssi_dbm=rssi,
        snr_db=snr,
        hops=int(cell("hops") or 1),
    )
