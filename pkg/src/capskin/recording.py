"""On-disk recording format: sensor frames co-logged with a reference gauge.

A recording is line-oriented text so captures diff cleanly:

  line 1:  header document, one JSON object
  then:    F <ts_ms> <sensor_id> <seq> <c0> ... <cN-1>     sensor frame
           G <ts_ms> <value> <unit>                        reference gauge

Gauge units are N (force gauge) or kPa (chamber pressure sensor). Rows are
time-ordered; the header names every sensor_id that appears in the rows.
Serialization is canonical: reading a file and writing it back reproduces
the bytes, so read . write . read == read.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .core import SensorFrame
from .errors import RecordingParseError

RECORDING_SCHEMA = "capskin.recording/1"

GAUGE_UNITS = ("N", "kPa")


@dataclass(frozen=True)
class GaugeSample:
    """One reference-channel reading (applied force or chamber pressure)."""

    timestamp_ms: int
    value: float
    unit: str

    def __post_init__(self):
        if self.unit not in GAUGE_UNITS:
            raise ValueError(f"gauge unit must be one of {GAUGE_UNITS}, got {self.unit!r}")


@dataclass(frozen=True)
class SensorDescriptor:
    sensor_id: int
    taxel_count: int


@dataclass(frozen=True)
class RecordingHeader:
    layout_id: str
    sensors: tuple[SensorDescriptor, ...]
    start_epoch_ms: int = 0
    gauge_unit: str | None = None

    def to_doc(self) -> dict:
        return {
            "schema": RECORDING_SCHEMA,
            "layout_id": self.layout_id,
            "sensors": [
                {"sensor_id": s.sensor_id, "taxel_count": s.taxel_count} for s in self.sensors
            ],
            "start_epoch_ms": self.start_epoch_ms,
            "gauge_unit": self.gauge_unit,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "RecordingHeader":
        if doc.get("schema") != RECORDING_SCHEMA:
            raise ValueError(f"unsupported recording schema {doc.get('schema')!r}")
        return cls(
            layout_id=str(doc["layout_id"]),
            sensors=tuple(
                SensorDescriptor(int(s["sensor_id"]), int(s["taxel_count"]))
                for s in doc["sensors"]
            ),
            start_epoch_ms=int(doc.get("start_epoch_ms", 0)),
            gauge_unit=doc.get("gauge_unit"),
        )


Row = SensorFrame | GaugeSample


@dataclass
class Recording:
    """Header plus time-ordered frame and gauge rows."""

    header: RecordingHeader
    rows: list[Row] = field(default_factory=list)

    def validate(self) -> None:
        known = {s.sensor_id for s in self.header.sensors}
        widths = {s.sensor_id: s.taxel_count for s in self.header.sensors}
        last_ts = None
        for row in self.rows:
            if last_ts is not None and row.timestamp_ms < last_ts:
                raise ValueError(f"rows not time-ordered at t={row.timestamp_ms}")
            last_ts = row.timestamp_ms
            if isinstance(row, SensorFrame):
                if row.sensor_id not in known:
                    raise ValueError(f"sensor_id {row.sensor_id} missing from header")
                if len(row.counts) != widths[row.sensor_id]:
                    raise ValueError(
                        f"frame width {len(row.counts)} != header {widths[row.sensor_id]}"
                    )

    def frames(self, sensor_id: int | None = None) -> list[SensorFrame]:
        return [
            r
            for r in self.rows
            if isinstance(r, SensorFrame) and (sensor_id is None or r.sensor_id == sensor_id)
        ]

    def gauge(self) -> list[GaugeSample]:
        return [r for r in self.rows if isinstance(r, GaugeSample)]

    def gauge_series(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauge channel as (timestamps_ms, values) arrays."""
        samples = self.gauge()
        return (
            np.array([s.timestamp_ms for s in samples], dtype=float),
            np.array([s.value for s in samples], dtype=float),
        )

    def taxel_series(self, taxel_id: int, sensor_id: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """One taxel's raw-count channel as (timestamps_ms, counts) arrays."""
        frames = self.frames(sensor_id)
        return (
            np.array([f.timestamp_ms for f in frames], dtype=float),
            np.array([float(f.counts[taxel_id]) for f in frames]),
        )


def _format_row(row: Row) -> str:
    if isinstance(row, SensorFrame):
        counts = " ".join(str(int(c)) for c in row.counts)
        return f"F {row.timestamp_ms} {row.sensor_id} {row.seq} {counts}"
    return f"G {row.timestamp_ms} {row.value!r} {row.unit}"


def write_recording(path: str | os.PathLike | io.TextIOBase, recording: Recording) -> None:
    """Write a validated recording; one row per line, canonical formatting."""
    recording.validate()
    if isinstance(path, io.TextIOBase):
        _write_lines(path, recording)
    else:
        with open(path, "w", encoding="ascii") as fh:
            _write_lines(fh, recording)


def _write_lines(fh, recording: Recording) -> None:
    fh.write(json.dumps(recording.header.to_doc(), sort_keys=True) + "\n")
    for row in recording.rows:
        fh.write(_format_row(row) + "\n")


def read_recording(path: str | os.PathLike | io.TextIOBase) -> Recording:
    """Parse a recording file; malformed lines raise RecordingParseError."""
    if isinstance(path, io.TextIOBase):
        return _read_lines(path)
    with open(path, "r", encoding="ascii") as fh:
        return _read_lines(fh)


def _read_lines(fh) -> Recording:
    first = fh.readline()
    if not first.strip():
        raise RecordingParseError(1, "missing header document")
    try:
        header = RecordingHeader.from_doc(json.loads(first))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise RecordingParseError(1, f"bad header: {exc}") from exc
    rows: list[Row] = []
    for line_no, line in enumerate(fh, start=2):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        tag = fields[0]
        try:
            if tag == "F":
                ts, sensor_id, seq = int(fields[1]), int(fields[2]), int(fields[3])
                counts = np.array([int(c) for c in fields[4:]], dtype=np.int64)
                rows.append(
                    SensorFrame(timestamp_ms=ts, sensor_id=sensor_id, seq=seq, counts=counts)
                )
            elif tag == "G":
                if len(fields) != 4:
                    raise ValueError(f"gauge row has {len(fields)} fields, wants 4")
                rows.append(
                    GaugeSample(timestamp_ms=int(fields[1]), value=float(fields[2]), unit=fields[3])
                )
            else:
                raise ValueError(f"unknown channel tag {tag!r}")
        except (ValueError, IndexError) as exc:
            raise RecordingParseError(line_no, str(exc)) from exc
    recording = Recording(header=header, rows=rows)
    recording.validate()
    return recording
