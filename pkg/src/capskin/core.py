"""Taxel geometry, frame types, baseline capture, and grid projection.

A skin covers one finger with 60 taxels by default: a domed tip carrying 12
taxels (one per electrode column) and a cylindrical body carrying 48 taxels
arranged as 4 wrapped rows of 12 columns. Readout streams interleave one or
more skins; a frame with 120 counts is the usual two-finger stream.

Taxel values travel through three representations:

  raw counts      -> capacitance proxy straight off the readout electronics
  normalized x    -> (counts - c0) / c0 relative to the no-load baseline c0
  heatmap grid    -> x projected onto a (1 + cylinder_rows) x grid_columns
                     grid, dome row on top, for display and image metrics

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyBaselineError, LengthMismatchError, ZeroBaselineError

DOME = "dome"
CYLINDER = "cylinder"

LAYOUT_SCHEMA = "capskin.layout/1"

# Effective contact area per taxel. Derived from the characterization rig's
# paired readings: an 11.12 N normal load registering 702.1 kPa implies
# 11.12 N / 702.1 kPa = 15.84 mm^2 of loaded area.
DEFAULT_TAXEL_AREA_MM2 = 15.84

DEFAULT_ANGULAR_COVERAGE_DEG = 294.0

FRAME_RATE_HZ = 30.0
FRAME_PERIOD_MS = 1000.0 / FRAME_RATE_HZ


@dataclass(frozen=True)
class Region:
    """Half-open taxel id range [start, stop) of one region kind."""

    kind: str
    start: int
    stop: int

    def __post_init__(self):
        if self.kind not in (DOME, CYLINDER):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if not 0 <= self.start < self.stop:
            raise ValueError(f"bad region range [{self.start}, {self.stop})")

    def __len__(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class TaxelLayout:
    """Geometry descriptor mapping taxel ids to regions and grid cells.

    Grid convention: row 0 holds the dome taxels (dome taxel i sits in
    column i), rows 1..cylinder_rows hold the cylinder taxels in id order,
    row-major. The projection is a bijection between taxel ids and
    populated grid cells.
    """

    taxel_count: int = 60
    regions: tuple[Region, ...] = (Region(DOME, 0, 12), Region(CYLINDER, 12, 60))
    grid_columns: int = 12
    cylinder_rows: int = 4
    taxel_areas_mm2: tuple[float, ...] | float = DEFAULT_TAXEL_AREA_MM2
    angular_coverage_deg: float = DEFAULT_ANGULAR_COVERAGE_DEG
    layout_id: str = "finger-60"

    def __post_init__(self):
        if self.taxel_count <= 0:
            raise ValueError("taxel_count must be positive")
        covered = np.zeros(self.taxel_count, dtype=bool)
        for region in self.regions:
            if region.stop > self.taxel_count:
                raise ValueError(f"region {region} exceeds taxel_count")
            if covered[region.start : region.stop].any():
                raise ValueError(f"region {region} overlaps another region")
            covered[region.start : region.stop] = True
        if not covered.all():
            raise ValueError("regions do not cover every taxel id")
        if self.dome_count > self.grid_columns:
            raise ValueError("more dome taxels than grid columns")
        if self.cylinder_count != self.grid_columns * self.cylinder_rows:
            raise ValueError(
                f"cylinder taxels ({self.cylinder_count}) must fill "
                f"{self.grid_columns} x {self.cylinder_rows} grid cells"
            )
        areas = self.areas_mm2()
        if areas.shape != (self.taxel_count,):
            raise ValueError("taxel_areas_mm2 length must equal taxel_count")
        if not (areas > 0).all():
            raise ValueError("taxel areas must be positive")

    @property
    def dome_count(self) -> int:
        return sum(len(r) for r in self.regions if r.kind == DOME)

    @property
    def cylinder_count(self) -> int:
        return sum(len(r) for r in self.regions if r.kind == CYLINDER)

    @property
    def grid_rows(self) -> int:
        return 1 + self.cylinder_rows

    def areas_mm2(self) -> np.ndarray:
        if isinstance(self.taxel_areas_mm2, (int, float)):
            return np.full(self.taxel_count, float(self.taxel_areas_mm2))
        return np.asarray(self.taxel_areas_mm2, dtype=float)

    def region_of(self, taxel_id: int) -> str:
        for region in self.regions:
            if region.start <= taxel_id < region.stop:
                return region.kind
        raise IndexError(f"taxel id {taxel_id} out of range")

    def grid_position(self, taxel_id: int) -> tuple[int, int]:
        """Return the (row, col) grid cell of a taxel id."""
        if not 0 <= taxel_id < self.taxel_count:
            raise IndexError(f"taxel id {taxel_id} out of range")
        dome_seen = 0
        for region in self.regions:
            if region.start <= taxel_id < region.stop:
                if region.kind == DOME:
                    return 0, dome_seen + (taxel_id - region.start)
                cyl_index = self._cylinder_index(taxel_id)
                return 1 + cyl_index // self.grid_columns, cyl_index % self.grid_columns
            if region.kind == DOME:
                dome_seen += len(region)
        raise IndexError(f"taxel id {taxel_id} out of range")

    def _cylinder_index(self, taxel_id: int) -> int:
        index = 0
        for region in self.regions:
            if region.kind != CYLINDER:
                continue
            if region.start <= taxel_id < region.stop:
                return index + (taxel_id - region.start)
            index += len(region)
        raise IndexError(f"taxel id {taxel_id} is not a cylinder taxel")

    def to_doc(self) -> dict:
        """Serializable layout document; schema-versioned."""
        doc = {
            "schema": LAYOUT_SCHEMA,
            "layout_id": self.layout_id,
            "taxel_count": self.taxel_count,
            "regions": [
                {"kind": r.kind, "start": r.start, "stop": r.stop} for r in self.regions
            ],
            "grid_columns": self.grid_columns,
            "cylinder_rows": self.cylinder_rows,
            "angular_coverage_deg": self.angular_coverage_deg,
        }
        if isinstance(self.taxel_areas_mm2, (int, float)):
            doc["taxel_area_mm2"] = float(self.taxel_areas_mm2)
        else:
            doc["taxel_areas_mm2"] = list(self.taxel_areas_mm2)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "TaxelLayout":
        if doc.get("schema") != LAYOUT_SCHEMA:
            raise ValueError(f"unsupported layout schema {doc.get('schema')!r}")
        if "taxel_areas_mm2" in doc:
            areas: tuple[float, ...] | float = tuple(doc["taxel_areas_mm2"])
        else:
            areas = float(doc.get("taxel_area_mm2", DEFAULT_TAXEL_AREA_MM2))
        return cls(
            taxel_count=int(doc["taxel_count"]),
            regions=tuple(
                Region(r["kind"], int(r["start"]), int(r["stop"])) for r in doc["regions"]
            ),
            grid_columns=int(doc["grid_columns"]),
            cylinder_rows=int(doc["cylinder_rows"]),
            taxel_areas_mm2=areas,
            angular_coverage_deg=float(doc.get("angular_coverage_deg", DEFAULT_ANGULAR_COVERAGE_DEG)),
            layout_id=str(doc.get("layout_id", "finger-60")),
        )


DEFAULT_LAYOUT = TaxelLayout()


@dataclass(frozen=True)
class SensorFrame:
    """One timestamped readout of raw counts.

    seq increases strictly within a stream (gaps allowed, regressions not);
    counts are non-negative integers. The unsigned 16-bit bound applies at
    the wire codec, not here, so high-resolution virtual readouts can carry
    wider counts through recordings.
    """

    timestamp_ms: int
    sensor_id: int
    seq: int
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1:
            raise ValueError("counts must be a 1-D vector")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SensorFrame):
            return NotImplemented
        return (
            self.timestamp_ms == other.timestamp_ms
            and self.sensor_id == other.sensor_id
            and self.seq == other.seq
            and np.array_equal(self.counts, other.counts)
        )


@dataclass(frozen=True)
class Baseline:
    """Per-taxel no-load means c0 and the number of frames averaged."""

    c0: np.ndarray
    sample_count: int

    def __post_init__(self):
        c0 = np.asarray(self.c0, dtype=float)
        if (c0 <= 0).any():
            raise ZeroBaselineError("baseline contains a non-positive mean")
        object.__setattr__(self, "c0", c0)


@dataclass(frozen=True)
class NormalizedFrame:
    """One timestamped vector of normalized values x = (C - c0) / c0."""

    timestamp_ms: int
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))


@dataclass(frozen=True)
class HeatmapGrid:
    """Row-major grid of reals with a mask marking populated cells."""

    rows: int
    cols: int
    cells: np.ndarray
    cell_mask: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=float)
        mask = np.asarray(self.cell_mask, dtype=bool)
        if cells.shape != (self.rows, self.cols) or mask.shape != cells.shape:
            raise ValueError("cells/mask shape must be (rows, cols)")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "cell_mask", mask)

    def populated(self) -> np.ndarray:
        """Populated cell values in row-major order."""
        return self.cells[self.cell_mask]


# Number of frames averaged into a baseline by default: one second of the
# 30 Hz stream. How the no-load reference is captured is a toolkit choice.
DEFAULT_BASELINE_FRAMES = 30


def capture_baseline(frames: list[SensorFrame]) -> Baseline:
    """Average no-load frames into per-taxel baseline means.

    Caller asserts the frames are no-load. Raises EmptyBaselineError on empty
    input, LengthMismatchError if frames disagree on taxel count, and
    ZeroBaselineError if any per-taxel mean is zero.
    """
    if not frames:
        raise EmptyBaselineError("cannot capture a baseline from zero frames")
    width = len(frames[0].counts)
    for frame in frames:
        if len(frame.counts) != width:
            raise LengthMismatchError("frames disagree on taxel count")
    c0 = np.mean([frame.counts for frame in frames], axis=0, dtype=float)
    if (c0 == 0).any():
        raise ZeroBaselineError("zero no-load mean indicates a hardware fault")
    return Baseline(c0=c0, sample_count=len(frames))


def normalize(frame: SensorFrame, baseline: Baseline) -> NormalizedFrame:
    """Return x = (counts - c0) / c0. Negative values are kept, not clamped."""
    if len(frame.counts) != len(baseline.c0):
        raise LengthMismatchError(
            f"frame has {len(frame.counts)} taxels, baseline has {len(baseline.c0)}"
        )
    values = (frame.counts - baseline.c0) / baseline.c0
    return NormalizedFrame(timestamp_ms=frame.timestamp_ms, values=values)


def grid_project(values: np.ndarray, layout: TaxelLayout) -> HeatmapGrid:
    """Project one skin's values onto its display grid."""
    values = np.asarray(values, dtype=float)
    if values.shape != (layout.taxel_count,):
        raise LengthMismatchError(
            f"expected {layout.taxel_count} values, got {values.shape}"
        )
    cells = np.zeros((layout.grid_rows, layout.grid_columns))
    mask = np.zeros((layout.grid_rows, layout.grid_columns), dtype=bool)
    for taxel_id in range(layout.taxel_count):
        row, col = layout.grid_position(taxel_id)
        cells[row, col] = values[taxel_id]
        mask[row, col] = True
    return HeatmapGrid(rows=layout.grid_rows, cols=layout.grid_columns, cells=cells, cell_mask=mask)


def grid_unproject(grid: HeatmapGrid, layout: TaxelLayout) -> np.ndarray:
    """Inverse of grid_project; recovers the taxel-ordered vector exactly."""
    if (grid.rows, grid.cols) != (layout.grid_rows, layout.grid_columns):
        raise LengthMismatchError("grid shape does not match layout")
    values = np.zeros(layout.taxel_count)
    for taxel_id in range(layout.taxel_count):
        row, col = layout.grid_position(taxel_id)
        if not grid.cell_mask[row, col]:
            raise LengthMismatchError(f"cell for taxel {taxel_id} is unpopulated")
        values[taxel_id] = grid.cells[row, col]
    return values


def split_skins(values: np.ndarray, layout: TaxelLayout) -> list[np.ndarray]:
    """Split a multi-skin vector (e.g. 120 counts) into per-skin vectors."""
    values = np.asarray(values)
    if len(values) % layout.taxel_count != 0:
        raise LengthMismatchError(
            f"vector of {len(values)} is not a multiple of {layout.taxel_count}"
        )
    n = len(values) // layout.taxel_count
    return [values[i * layout.taxel_count : (i + 1) * layout.taxel_count] for i in range(n)]
