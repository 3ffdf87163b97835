"""Sensor-quality metrics: hysteresis, drift, crosstalk, uniformity, image
similarity, force-estimation error, and the mean-active-pressure statistic.

All metrics are pure functions of immutable inputs and reproduce bit-for-bit
from the same recording and configuration. They are permutation-equivariant
over taxel ids except the grid-based SSIM/MSE, which depend on the layout's
cell arrangement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .calibrate import (
    AlignedPairs,
    CalibrationCurve,
    baseline_from_recording,
    detect_peaks,
    estimate_force,
    estimate_pressure,
    pairs_from_recording,
)
from .core import (
    HeatmapGrid,
    NormalizedFrame,
    TaxelLayout,
    capture_baseline,
    normalize,
)
from .errors import DegenerateDataError, NoCompleteCycleError, NoOverlapError
from .recording import Recording

logger = logging.getLogger(__name__)

REPORT_SCHEMA = "capskin.report/1"

# Interpolation resolution for the loading/unloading gap scan.
HYSTERESIS_GRID_POINTS = 200

# Taxels with normalized output below this are not "active" contacts.
ACTIVE_THRESHOLD = 0.005


@dataclass(frozen=True)
class CycleSplit:
    """One loading segment and one unloading segment of (reference, x) pairs.

    Loading references are non-decreasing and unloading references
    non-increasing; non-monotone raw samples are pruned to the running
    extreme when the split is built.
    """

    loading_ref: np.ndarray
    loading_x: np.ndarray
    unloading_ref: np.ndarray
    unloading_x: np.ndarray

    def __post_init__(self):
        for name in ("loading_ref", "loading_x", "unloading_ref", "unloading_x"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.loading_ref.size == 0 or self.unloading_ref.size == 0:
            raise ValueError("cycle segments must be non-empty")
        if (np.diff(self.loading_ref) < 0).any():
            raise ValueError("loading references must be non-decreasing")
        if (np.diff(self.unloading_ref) > 0).any():
            raise ValueError("unloading references must be non-increasing")

    def x_span(self) -> tuple[float, float]:
        combined = np.concatenate([self.loading_x, self.unloading_x])
        return float(combined.min()), float(combined.max())


def _monotone_prune(ref: np.ndarray, x: np.ndarray, direction: int):
    """Keep the subsequence whose reference advances in one direction."""
    keep = [0]
    for i in range(1, len(ref)):
        if direction * (ref[i] - ref[keep[-1]]) >= 0:
            keep.append(i)
    keep = np.array(keep)
    return ref[keep], x[keep]


def split_cycles(pairs: AlignedPairs) -> list[CycleSplit]:
    """Split aligned pairs into per-cycle loading/unloading segments.

    Cycles are bounded by the reference-channel minima around each detected
    peak.
    """
    ref = pairs.y
    x = pairs.x
    peaks = detect_peaks(ref)
    if not peaks:
        raise NoCompleteCycleError("no reference peaks, so no complete cycle")
    splits = []
    for k, peak in enumerate(peaks):
        left_bound = peaks[k - 1] if k else 0
        right_bound = peaks[k + 1] if k + 1 < len(peaks) else len(ref) - 1
        left = left_bound + int(np.argmin(ref[left_bound : peak + 1]))
        right = peak + int(np.argmin(ref[peak : right_bound + 1]))
        if left == peak or right == peak:
            continue
        loading_ref, loading_x = _monotone_prune(ref[left : peak + 1], x[left : peak + 1], +1)
        unloading_ref, unloading_x = _monotone_prune(
            ref[peak : right + 1], x[peak : right + 1], -1
        )
        splits.append(
            CycleSplit(
                loading_ref=loading_ref,
                loading_x=loading_x,
                unloading_ref=unloading_ref,
                unloading_x=unloading_x,
            )
        )
    if not splits:
        raise NoCompleteCycleError("peaks found but no complete loading/unloading cycle")
    return splits


def hysteresis_percent(split: CycleSplit) -> float:
    """Maximum loading/unloading gap as % of the cycle's full-scale output.

    Both segments are linearly interpolated onto a uniform 200-point grid
    over their common reference interval; the result is
    max |x_unload - x_load| / (cycle max x - cycle min x) * 100.
    """
    lo = max(split.loading_ref.min(), split.unloading_ref.min())
    hi = min(split.loading_ref.max(), split.unloading_ref.max())
    if hi <= lo:
        raise NoOverlapError("loading and unloading segments share no reference interval")
    grid = np.linspace(lo, hi, HYSTERESIS_GRID_POINTS)
    load_interp = np.interp(grid, split.loading_ref, split.loading_x)
    unload_interp = np.interp(
        grid, split.unloading_ref[::-1], split.unloading_x[::-1]
    )
    x_min, x_max = split.x_span()
    full_scale = x_max - x_min
    if full_scale <= 0:
        raise DegenerateDataError("cycle has no output span")
    return float(np.max(np.abs(unload_interp - load_interp)) / full_scale * 100.0)


def cyclic_drift(splits: list[CycleSplit]) -> tuple[float, float]:
    """(peak drift %, zero drift %) between the first and last cycle.

    peak drift = |peak_N - peak_1| / peak_1; zero drift normalizes the
    baseline shift by the first cycle's full-scale span (peak_1 - base_1),
    since the baseline itself sits near zero.
    """
    if len(splits) < 2:
        raise ValueError("drift needs at least 2 cycles")
    first_min, first_max = splits[0].x_span()
    last_min, last_max = splits[-1].x_span()
    if first_max == 0 or first_max - first_min <= 0:
        raise DegenerateDataError("first cycle has no usable span")
    peak_drift = abs(last_max - first_max) / first_max * 100.0
    zero_drift = abs(last_min - first_min) / (first_max - first_min) * 100.0
    return float(peak_drift), float(zero_drift)


def crosstalk_percent(pressures_kpa, loaded: int) -> float:
    """Highest unloaded-taxel pressure as % of the loaded taxel's pressure.

    Negative sensed pressures count as zero ghost activation.
    """
    pressures = np.asarray(pressures_kpa, dtype=float)
    loaded_pressure = pressures[loaded]
    if loaded_pressure <= 0:
        raise ValueError("loaded taxel pressure must be positive")
    others = np.delete(pressures, loaded)
    if others.size == 0:
        return 0.0
    ghost = max(float(others.max()), 0.0)
    return ghost / loaded_pressure * 100.0


def rmse_force(curve: CalibrationCurve, eval_pairs: AlignedPairs) -> float:
    """Root mean square force-estimation error over an evaluation set."""
    if eval_pairs.unit != "N":
        raise ValueError("force RMSE needs pairs in newtons")
    errors = estimate_force(curve, eval_pairs.x) - eval_pairs.y
    return float(np.sqrt(np.mean(np.square(errors))))


# ---------------------------------------------------------------------------
# Grid similarity


def _matched_populated(grid_a: HeatmapGrid, grid_b: HeatmapGrid):
    if (grid_a.rows, grid_a.cols) != (grid_b.rows, grid_b.cols) or not np.array_equal(
        grid_a.cell_mask, grid_b.cell_mask
    ):
        raise ValueError("grids must share shape and populated-cell mask")
    return grid_a.populated(), grid_b.populated()


def ssim(grid_a: HeatmapGrid, grid_b: HeatmapGrid, dynamic_range: float | None = None) -> float:
    """Single-window structural similarity over the populated cells.

    The grids are too small for sliding windows, so means, variances and
    covariance are taken over all populated cells at once with the standard
    stabilizers C1 = (0.01*L)^2 and C2 = (0.03*L)^2. L defaults to the
    maximum populated value across both grids.
    """
    a, b = _matched_populated(grid_a, grid_b)
    if dynamic_range is None:
        dynamic_range = float(max(a.max(), b.max()))
    if dynamic_range <= 0:
        raise ValueError("dynamic range must be positive")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mean_a, mean_b = a.mean(), b.mean()
    var_a = np.mean((a - mean_a) ** 2)
    var_b = np.mean((b - mean_b) ** 2)
    covariance = np.mean((a - mean_a) * (b - mean_b))
    return float(
        (2 * mean_a * mean_b + c1)
        * (2 * covariance + c2)
        / ((mean_a**2 + mean_b**2 + c1) * (var_a + var_b + c2))
    )


def mse(grid_a: HeatmapGrid, grid_b: HeatmapGrid) -> float:
    """Mean squared error over the populated cells."""
    a, b = _matched_populated(grid_a, grid_b)
    return float(np.mean((a - b) ** 2))


# ---------------------------------------------------------------------------
# Mean active pressure


@dataclass(frozen=True)
class MeanActivePressure:
    """Pooled mean pressure over active (taxel, frame) samples."""

    kpa: float
    sample_count: int

    @property
    def empty(self) -> bool:
        return self.sample_count == 0


def mean_active_pressure(
    frames: list[NormalizedFrame],
    curves: dict[int, CalibrationCurve],
    layout: TaxelLayout,
    threshold: float = ACTIVE_THRESHOLD,
) -> MeanActivePressure:
    """Mean per-taxel normal pressure over active samples, pooled over time.

    Taxels reading below the activity threshold are dropped per frame; the
    remaining normalized values convert to force through each taxel's force
    curve and to pressure through its contact area. An empty retained set
    yields 0 kPa with a warning.
    """
    missing = [t for t in range(layout.taxel_count) if t not in curves]
    if missing:
        raise ValueError(f"force curves missing for taxels {missing}")
    areas = layout.areas_mm2()
    pooled = []
    for frame in frames:
        active = np.flatnonzero(frame.values >= threshold)
        for taxel in active:
            force = estimate_force(curves[int(taxel)], float(frame.values[taxel]))
            pooled.append(force / areas[taxel] * 1000.0)  # N/mm^2 -> kPa
    if not pooled:
        logger.warning("no active samples above threshold %g; reporting 0 kPa", threshold)
        return MeanActivePressure(kpa=0.0, sample_count=0)
    return MeanActivePressure(kpa=float(np.mean(pooled)), sample_count=len(pooled))


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True)
class CrosstalkStats:
    mean_pct: float
    sd_pct: float
    max_pct: float
    sample_count: int

    @classmethod
    def from_samples(cls, samples) -> "CrosstalkStats":
        values = np.asarray(samples, dtype=float)
        if values.size == 0:
            raise ValueError("no crosstalk samples")
        return cls(
            mean_pct=float(values.mean()),
            sd_pct=float(values.std()),
            max_pct=float(values.max()),
            sample_count=int(values.size),
        )


@dataclass(frozen=True)
class CharacterizationReport:
    """Everything the characterization pipeline can say about a recording."""

    hysteresis_pct: dict[int, float] = field(default_factory=dict)
    peak_drift_pct: float | None = None
    zero_drift_pct: float | None = None
    crosstalk: CrosstalkStats | None = None
    uniformity_cov: float | None = None
    rmse_force_n: dict[int, float] = field(default_factory=dict)
    cycles: int | None = None

    def to_doc(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "hysteresis_pct": {str(k): v for k, v in sorted(self.hysteresis_pct.items())},
            "peak_drift_pct": self.peak_drift_pct,
            "zero_drift_pct": self.zero_drift_pct,
            "crosstalk": None
            if self.crosstalk is None
            else {
                "mean_pct": self.crosstalk.mean_pct,
                "sd_pct": self.crosstalk.sd_pct,
                "max_pct": self.crosstalk.max_pct,
                "sample_count": self.crosstalk.sample_count,
            },
            "uniformity_cov": self.uniformity_cov,
            "rmse_force_n": {str(k): v for k, v in sorted(self.rmse_force_n.items())},
            "cycles": self.cycles,
        }


def uniformity_cov(
    recording: Recording, taxel_ids=None, levels=(0.25, 0.5, 0.75, 1.0)
) -> float:
    """Coefficient of variation of x across taxels at reference load levels.

    Meaningful for uniform-load (pneumatic) recordings: at each reference
    level of the gauge maximum, the loading-leg frame nearest that level is
    located and std/mean of x across taxels is taken; levels are averaged.
    """
    baseline = baseline_from_recording(recording)
    gauge_ts, gauge_values = recording.gauge_series()
    if gauge_values.size == 0:
        raise ValueError("recording has no gauge channel")
    frames = recording.frames()
    frame_ts = np.array([f.timestamp_ms for f in frames], dtype=float)
    apex = int(gauge_values.argmax())
    covs = []
    for level in levels:
        target = level * gauge_values.max()
        leg = gauge_values[: apex + 1]
        idx = int(np.argmin(np.abs(leg - target)))
        frame_idx = int(np.argmin(np.abs(frame_ts - gauge_ts[idx])))
        x = normalize(frames[frame_idx], baseline).values
        if taxel_ids is not None:
            x = x[list(taxel_ids)]
        if np.mean(x) <= 0:
            continue
        covs.append(float(np.std(x) / np.mean(x)))
    if not covs:
        raise DegenerateDataError("no usable reference levels for uniformity")
    return float(np.mean(covs))


def characterize_recording(
    recording: Recording,
    taxel_ids: list[int],
    force_curves: dict[int, CalibrationCurve] | None = None,
    crosstalk_samples=None,
) -> CharacterizationReport:
    """Run every metric the recording supports; omitted ones stay None.

    Cycle metrics come from the gauge-aligned series of each requested
    taxel. Force RMSE needs force curves and a newton gauge. Uniformity
    needs a uniform (pneumatic) load. Crosstalk samples come from a
    localized-load survey and are folded in as given.
    """
    unit = recording.header.gauge_unit or "N"
    baseline = baseline_from_recording(recording)
    hysteresis = {}
    rmse_by_taxel = {}
    peak_drift = zero_drift = None
    cycle_count = None
    for taxel_id in taxel_ids:
        # rig recordings co-log both channels on one clock
        pairs = pairs_from_recording(
            recording, taxel_id, unit, baseline=baseline, synchronized=True
        )
        splits = split_cycles(pairs)
        cycle_count = len(splits)
        hysteresis[taxel_id] = float(np.mean([hysteresis_percent(s) for s in splits]))
        if len(splits) >= 2:
            peak_drift, zero_drift = cyclic_drift(splits)
        if force_curves is not None and unit == "N" and taxel_id in force_curves:
            rmse_by_taxel[taxel_id] = rmse_force(force_curves[taxel_id], pairs)
    uniformity = None
    if unit == "kPa":
        try:
            uniformity = uniformity_cov(recording)
        except (DegenerateDataError, ValueError):
            uniformity = None
    return CharacterizationReport(
        hysteresis_pct=hysteresis,
        peak_drift_pct=peak_drift,
        zero_drift_pct=zero_drift,
        crosstalk=None if crosstalk_samples is None else CrosstalkStats.from_samples(crosstalk_samples),
        uniformity_cov=uniformity,
        rmse_force_n=rmse_by_taxel,
        cycles=cycle_count,
    )


def crosstalk_survey(
    sim,
    loads_kpa,
    loaded_taxel: int,
    curves: dict[int, CalibrationCurve],
    baseline=None,
) -> list[float]:
    """Crosstalk samples from localized loads on a simulated skin.

    Each load is applied to the loaded taxel only; every taxel's sensed
    pressure is reconstructed through its pneumatic curve and one crosstalk
    percentage recorded per load.
    """
    if baseline is None:
        baseline = capture_baseline([sim.respond(np.zeros(sim.taxel_count)) for _ in range(30)])
    samples = []
    for load in loads_kpa:
        pressure_field = np.zeros(sim.taxel_count)
        pressure_field[loaded_taxel] = load
        frame = sim.respond(pressure_field)
        x = normalize(frame, baseline).values
        pressures = np.array(
            [estimate_pressure(curves[t], x[t]) for t in range(sim.taxel_count)]
        )
        samples.append(crosstalk_percent(pressures, loaded_taxel))
    return samples
