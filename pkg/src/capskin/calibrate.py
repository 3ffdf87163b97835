"""Force and pressure calibration: peak alignment, exponential fits, transfer.

Two curve forms map a taxel's normalized output x = (C - C0)/C0 onto a
reference quantity:

  force form      F(x) = a * (exp(b*(x+d)) - exp(b*d))     [newtons]
  pneumatic form  P(x) = a * exp(b*x) + d                  [kilopascals]

The force form is structurally zero at x = 0. It is also over-parameterized:
a and d only enter through the product A = a*exp(b*d), so F is exactly
A*(exp(b*x) - 1). The fitter therefore estimates (A, b) and reports the
canonical gauge a = A, d = 0; evaluation still honors arbitrary (a, b, d)
triples loaded from files. The pneumatic form's three parameters are all
identifiable and are fitted jointly.

Fitting is damped Gauss-Newton with analytic Jacobians, converging when the
largest relative parameter change drops below 1e-9 (200 iteration cap, five
seeded random restarts on failure). Positivity of the scale parameter is
structural (it is optimized in log space).

The transfer map chains one sensor's forward pneumatic curve with another's
inverse to re-express raw counts of a source sensor in a target sensor's
output space:

  C2 = (C0_2 / b2) * ln((a1*exp(b1*(C1 - C0_1)/C0_1) + d1 - d2) / a2) + C0_2
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .core import DEFAULT_BASELINE_FRAMES, Baseline, capture_baseline
from .errors import (
    DegenerateDataError,
    NoOverlapError,
    NoPeaksError,
    NonConvergenceError,
    NonPositiveLogArgumentError,
    SeriesTooShortError,
)
from .recording import Recording

FORCE = "force"
PNEUMATIC = "pneumatic"

CURVES_SCHEMA = "capskin.curves/1"
TRANSFER_SCHEMA = "capskin.transfer/1"

MIN_FIT_PAIRS = 10
CONVERGENCE_TOL = 1e-9
MAX_ITERATIONS = 200
RESTARTS = 5


@dataclass(frozen=True)
class AlignedPairs:
    """Time-aligned (x, reference) samples for one taxel, at the gauge rate.

    offset_ms records the sensor-minus-gauge time offset removed during
    alignment (diagnostic only; 0 for pairs built directly).
    """

    x: np.ndarray
    y: np.ndarray
    unit: str
    taxel_id: int = 0
    offset_ms: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape != y.shape or x.ndim != 1:
            raise ValueError("x and y must be 1-D arrays of equal length")
        if x.size == 0:
            raise ValueError("aligned pairs must be non-empty")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("aligned pairs must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return len(self.x)


@dataclass(frozen=True)
class CalibrationCurve:
    """Fitted exponential curve with its fit-quality summary.

    x_range is the fitted validity interval; evaluation outside it
    extrapolates (in_range flags where that happens).
    """

    form: str
    a: float
    b: float
    d: float
    c0: float | None
    r2: float
    x_range: tuple[float, float]
    rmse: float
    taxel_id: int = 0

    def __post_init__(self):
        if self.form not in (FORCE, PNEUMATIC):
            raise ValueError(f"unknown curve form {self.form!r}")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("curve requires a > 0 and b > 0")
        if self.c0 is not None and self.c0 <= 0:
            raise ValueError("curve baseline c0 must be positive")

    def evaluate(self, x):
        """Curve value at x (scalar or array); total function, extrapolates."""
        x = np.asarray(x, dtype=float)
        if self.form == FORCE:
            out = self.a * (np.exp(self.b * (x + self.d)) - math.exp(self.b * self.d))
        else:
            out = self.a * np.exp(self.b * x) + self.d
        return out if out.ndim else float(out)

    def in_range(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.x_range
        ok = (x >= lo) & (x <= hi)
        return ok if ok.ndim else bool(ok)

    def to_doc(self) -> dict:
        return {
            "form": self.form,
            "a": self.a,
            "b": self.b,
            "d": self.d,
            "c0": self.c0,
            "r2": self.r2,
            "x_range": list(self.x_range),
            "rmse": self.rmse,
            "taxel_id": self.taxel_id,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "CalibrationCurve":
        return cls(
            form=doc["form"],
            a=float(doc["a"]),
            b=float(doc["b"]),
            d=float(doc["d"]),
            c0=None if doc.get("c0") is None else float(doc["c0"]),
            r2=float(doc["r2"]),
            x_range=(float(doc["x_range"][0]), float(doc["x_range"][1])),
            rmse=float(doc["rmse"]),
            taxel_id=int(doc.get("taxel_id", 0)),
        )


def estimate_force(curve: CalibrationCurve, x) -> float:
    """F = a*(exp(b*(x+d)) - exp(b*d)); exactly 0 at x = 0."""
    if curve.form != FORCE:
        raise ValueError("estimate_force requires a force-form curve")
    return curve.evaluate(x)


def estimate_pressure(curve: CalibrationCurve, x) -> float:
    """P = a*exp(b*x) + d."""
    if curve.form != PNEUMATIC:
        raise ValueError("estimate_pressure requires a pneumatic-form curve")
    return curve.evaluate(x)


# ---------------------------------------------------------------------------
# Peak detection and alignment


def detect_peaks(
    values,
    min_prominence_frac: float = 0.2,
    min_separation_frac: float = 0.25,
) -> list[int]:
    """Indices of cycle apexes in a series.

    Local maxima with prominence >= 20% of the series range, separated by at
    least 25% of the median cycle length (estimated from a first unspaced
    pass). Deterministic for fixed input.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 3:
        raise SeriesTooShortError(f"need >= 3 samples, got {values.size}")
    vrange = float(np.ptp(values))
    if vrange == 0:
        return []
    prominence = min_prominence_frac * vrange
    idx, _ = find_peaks(values, prominence=prominence)
    if len(idx) >= 2:
        median_cycle = float(np.median(np.diff(idx)))
        distance = max(1, int(round(min_separation_frac * median_cycle)))
        idx, _ = find_peaks(values, prominence=prominence, distance=distance)
    return [int(i) for i in idx]


def align_by_peaks(
    sensor_ts,
    sensor_values,
    gauge_ts,
    gauge_values,
    unit: str,
    taxel_id: int = 0,
    pairing_tolerance_ms: float | None = None,
) -> AlignedPairs:
    """Align a sensor series with a reference gauge and downsample to pairs.

    The time offset between the channels is the median of per-peak timestamp
    differences; the sensor series is shifted by it. Each gauge sample is
    then paired with the nearest-in-time shifted sensor sample within half a
    frame period (the gauge is the slower channel, so pairing runs at its
    rate).
    """
    sensor_ts = np.asarray(sensor_ts, dtype=float)
    sensor_values = np.asarray(sensor_values, dtype=float)
    gauge_ts = np.asarray(gauge_ts, dtype=float)
    gauge_values = np.asarray(gauge_values, dtype=float)

    sensor_peaks = detect_peaks(sensor_values)
    gauge_peaks = detect_peaks(gauge_values)
    if not sensor_peaks or not gauge_peaks:
        raise NoPeaksError("no peaks detected in sensor and/or gauge series")
    paired = min(len(sensor_peaks), len(gauge_peaks))
    offset = float(
        np.median(sensor_ts[sensor_peaks[:paired]] - gauge_ts[gauge_peaks[:paired]])
    )
    shifted = sensor_ts - offset

    return _pair_nearest(
        shifted, sensor_values, gauge_ts, gauge_values, unit, taxel_id, pairing_tolerance_ms, offset
    )


def pair_synchronized(
    sensor_ts,
    sensor_values,
    gauge_ts,
    gauge_values,
    unit: str,
    taxel_id: int = 0,
    pairing_tolerance_ms: float | None = None,
) -> AlignedPairs:
    """Pair channels that already share a clock (co-logged rig recordings).

    No offset is estimated or removed; each gauge sample takes the
    nearest-in-time sensor sample within half a frame period. Use this for
    characterization of synchronized captures; align_by_peaks is for
    streams whose clocks may disagree.
    """
    return _pair_nearest(
        np.asarray(sensor_ts, dtype=float),
        np.asarray(sensor_values, dtype=float),
        np.asarray(gauge_ts, dtype=float),
        np.asarray(gauge_values, dtype=float),
        unit,
        taxel_id,
        pairing_tolerance_ms,
        offset=0.0,
    )


def _pair_nearest(
    sensor_ts, sensor_values, gauge_ts, gauge_values, unit, taxel_id, tolerance_ms, offset
) -> AlignedPairs:
    if tolerance_ms is None:
        period = float(np.median(np.diff(sensor_ts))) if len(sensor_ts) > 1 else 0.0
        tolerance_ms = period / 2.0
    order = np.argsort(sensor_ts, kind="stable")
    sensor_ts = sensor_ts[order]
    sensor_values = sensor_values[order]
    xs, ys = [], []
    for ts, value in zip(gauge_ts, gauge_values):
        pos = int(np.searchsorted(sensor_ts, ts))
        best, best_dt = None, None
        for candidate in (pos - 1, pos):
            if 0 <= candidate < len(sensor_ts):
                dt = abs(sensor_ts[candidate] - ts)
                if best_dt is None or dt < best_dt:
                    best, best_dt = candidate, dt
        if best is not None and best_dt <= tolerance_ms:
            xs.append(sensor_values[best])
            ys.append(value)
    if not xs:
        raise NoOverlapError("no gauge sample found a sensor sample within tolerance")
    return AlignedPairs(
        x=np.array(xs), y=np.array(ys), unit=unit, taxel_id=taxel_id, offset_ms=offset
    )


# ---------------------------------------------------------------------------
# Nonlinear least squares


def _damped_gauss_newton(residual_jac, theta0):
    """Minimize ||r(theta)||^2; returns (theta, converged)."""
    theta = np.asarray(theta0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        r, jac = residual_jac(theta)
        sse = float(r @ r)
        if not np.isfinite(sse):
            return theta, False
        lam = 1e-3
        for _ in range(MAX_ITERATIONS):
            normal = jac.T @ jac
            gradient = jac.T @ r
            damping = np.diag(np.maximum(np.diag(normal), 1e-12))
            accepted = False
            while lam <= 1e14:
                try:
                    delta = np.linalg.solve(normal + lam * damping, -gradient)
                except np.linalg.LinAlgError:
                    lam *= 10
                    continue
                candidate = theta + delta
                r_new, jac_new = residual_jac(candidate)
                sse_new = float(r_new @ r_new)
                if np.isfinite(sse_new) and sse_new <= sse:
                    accepted = True
                    break
                lam *= 10
            if not accepted:
                return theta, False
            step = float(np.max(np.abs(delta) / (np.abs(theta) + 1e-12)))
            theta, r, jac, sse = candidate, r_new, jac_new, sse_new
            lam = max(lam / 3.0, 1e-12)
            if step < CONVERGENCE_TOL:
                return theta, True
    return theta, False


def _initial_rate(x: np.ndarray, y: np.ndarray) -> float:
    """Starting growth rate from a log-linear regression of shifted y on x."""
    scale = float(np.ptp(y))
    z = (y - y.min()) + max(1e-3 * scale, 1e-12)
    slope = float(np.polyfit(x, np.log(z), 1)[0])
    return max(slope, 1e-6)


def _initial_scale(x: np.ndarray, y: np.ndarray, b0: float) -> float:
    spread = math.exp(b0 * x.max()) - math.exp(b0 * x.min())
    if spread <= 0 or not math.isfinite(spread):
        return max(float(np.ptp(y)), 1e-12)
    return max(float(np.ptp(y)) / spread, 1e-12)


def _check_fittable(pairs: AlignedPairs, unit: str) -> None:
    if pairs.unit != unit:
        raise ValueError(f"expected pairs in {unit}, got {pairs.unit}")
    if len(pairs) < MIN_FIT_PAIRS:
        raise DegenerateDataError(f"need >= {MIN_FIT_PAIRS} pairs, got {len(pairs)}")
    if np.ptp(pairs.x) == 0 or np.ptp(pairs.y) == 0:
        raise DegenerateDataError("constant x or y cannot constrain the fit")


def _fit_quality(y: np.ndarray, fitted: np.ndarray) -> tuple[float, float]:
    ss_res = float(np.sum((fitted - y) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot
    return r2, math.sqrt(ss_res / len(y))


def _usable(theta, rate_index: int) -> bool:
    # theta[0] is the log of the scale parameter; a collapse toward zero
    # amplitude means no member of the exponential family fits the data.
    return bool(np.isfinite(theta).all() and theta[rate_index] > 0 and theta[0] > -50)


def _solve_with_restarts(residual_jac, theta0, rate_index: int):
    theta, converged = _damped_gauss_newton(residual_jac, theta0)
    if converged and _usable(theta, rate_index):
        return theta
    rng = np.random.default_rng(20260810)
    for _ in range(RESTARTS):
        perturbed = np.array(theta0, dtype=float)
        perturbed += rng.normal(scale=np.abs(perturbed) * 0.5 + 0.1)
        perturbed[rate_index] = abs(perturbed[rate_index]) + 1e-3
        theta, converged = _damped_gauss_newton(residual_jac, perturbed)
        if converged and _usable(theta, rate_index):
            return theta
    raise NonConvergenceError("curve fit failed to converge after restarts")


def fit_force_curve(pairs: AlignedPairs, c0: float | None = None) -> CalibrationCurve:
    """Least-squares fit of the force form over aligned (x, newton) pairs."""
    _check_fittable(pairs, "N")
    x, y = pairs.x, pairs.y
    b0 = _initial_rate(x, y)
    theta0 = np.array([math.log(_initial_scale(x, y, b0)), b0])

    def residual_jac(theta):
        log_a, b = theta
        amp = np.exp(log_a)
        growth = np.exp(b * x)
        model = amp * (growth - 1.0)
        jac = np.column_stack([model, amp * x * growth])
        return model - y, jac

    theta = _solve_with_restarts(residual_jac, theta0, rate_index=1)
    amp, rate = math.exp(theta[0]), float(theta[1])
    fitted = amp * (np.exp(rate * x) - 1.0)
    r2, rmse = _fit_quality(y, fitted)
    return CalibrationCurve(
        form=FORCE,
        a=amp,
        b=rate,
        d=0.0,
        c0=c0,
        r2=r2,
        x_range=(float(x.min()), float(x.max())),
        rmse=rmse,
        taxel_id=pairs.taxel_id,
    )


def fit_pneumatic_curve(pairs: AlignedPairs, c0: float | None = None) -> CalibrationCurve:
    """Least-squares fit of the pneumatic form over aligned (x, kPa) pairs."""
    _check_fittable(pairs, "kPa")
    x, y = pairs.x, pairs.y
    b0 = _initial_rate(x, y)
    a0 = _initial_scale(x, y, b0)
    theta0 = np.array([math.log(a0), b0, float(y.min()) - a0])

    def residual_jac(theta):
        log_a, b, d = theta
        scale = np.exp(log_a)
        growth = scale * np.exp(b * x)
        model = growth + d
        jac = np.column_stack([growth, growth * x, np.ones_like(x)])
        return model - y, jac

    theta = _solve_with_restarts(residual_jac, theta0, rate_index=1)
    scale, rate, offset = math.exp(theta[0]), float(theta[1]), float(theta[2])
    fitted = scale * np.exp(rate * x) + offset
    r2, rmse = _fit_quality(y, fitted)
    return CalibrationCurve(
        form=PNEUMATIC,
        a=scale,
        b=rate,
        d=offset,
        c0=c0,
        r2=r2,
        x_range=(float(x.min()), float(x.max())),
        rmse=rmse,
        taxel_id=pairs.taxel_id,
    )


# ---------------------------------------------------------------------------
# Recording-level helpers


def baseline_from_recording(
    recording: Recording,
    sensor_id: int | None = None,
    window: int = DEFAULT_BASELINE_FRAMES,
) -> Baseline:
    """Baseline from the no-load lead-in frames of a recording."""
    frames = recording.frames(sensor_id)[:window]
    return capture_baseline(frames)


def pairs_from_recording(
    recording: Recording,
    taxel_id: int,
    unit: str,
    sensor_id: int | None = None,
    baseline: Baseline | None = None,
    synchronized: bool = False,
) -> AlignedPairs:
    """Aligned (x, reference) pairs for one taxel of a rig recording.

    The default path estimates and removes a clock offset from peak
    timestamps (the calibration preprocessing); pass synchronized=True for
    co-logged recordings whose channels share a clock already.
    """
    if baseline is None:
        baseline = baseline_from_recording(recording, sensor_id)
    ts, counts = recording.taxel_series(taxel_id, sensor_id)
    c0 = baseline.c0[taxel_id]
    x = (counts - c0) / c0
    gauge_ts, gauge_values = recording.gauge_series()
    if gauge_ts.size == 0:
        raise NoPeaksError("recording has no gauge channel")
    pair = pair_synchronized if synchronized else align_by_peaks
    return pair(ts, x, gauge_ts, gauge_values, unit=unit, taxel_id=taxel_id)


def fit_recording(
    recording: Recording,
    form: str,
    taxel_ids: list[int] | None = None,
    sensor_id: int | None = None,
) -> dict[int, CalibrationCurve]:
    """Fit every requested taxel of a rig recording; returns curves by id."""
    baseline = baseline_from_recording(recording, sensor_id)
    if taxel_ids is None:
        taxel_ids = list(range(len(baseline.c0)))
    unit = "N" if form == FORCE else "kPa"
    fit = fit_force_curve if form == FORCE else fit_pneumatic_curve
    curves = {}
    for taxel_id in taxel_ids:
        pairs = pairs_from_recording(recording, taxel_id, unit, sensor_id, baseline)
        curves[taxel_id] = fit(pairs, c0=float(baseline.c0[taxel_id]))
    return curves


def curves_to_doc(curves: dict[int, CalibrationCurve], sensor_id: int = 0) -> dict:
    return {
        "schema": CURVES_SCHEMA,
        "sensor_id": sensor_id,
        "curves": {str(t): c.to_doc() for t, c in sorted(curves.items())},
    }


def curves_from_doc(doc: dict) -> dict[int, CalibrationCurve]:
    if doc.get("schema") != CURVES_SCHEMA:
        raise ValueError(f"unsupported curves schema {doc.get('schema')!r}")
    return {int(t): CalibrationCurve.from_doc(c) for t, c in doc["curves"].items()}


# ---------------------------------------------------------------------------
# Cross-sensor transfer


@dataclass(frozen=True)
class TransferMap:
    """Per-taxel pneumatic curve pairs implementing source -> target remap."""

    source: dict[int, CalibrationCurve]
    target: dict[int, CalibrationCurve]

    def __post_init__(self):
        if set(self.source) != set(self.target):
            raise ValueError("source and target curve sets cover different taxels")
        for curves in (self.source, self.target):
            for taxel_id, curve in curves.items():
                if curve.form != PNEUMATIC:
                    raise ValueError(f"taxel {taxel_id}: transfer requires pneumatic curves")
                if curve.c0 is None:
                    raise ValueError(f"taxel {taxel_id}: transfer curves need baselines")

    def taxel_ids(self) -> list[int]:
        return sorted(self.source)

    def covers(self, taxel_ids) -> list[int]:
        """Taxel ids from the argument that the map does not cover."""
        return sorted(set(taxel_ids) - set(self.source))

    def remap(self, taxel_id: int, c1: float) -> float:
        """Estimated target-sensor count for a source-sensor count."""
        src = self.source[taxel_id]
        tgt = self.target[taxel_id]
        x1 = (c1 - src.c0) / src.c0
        argument = (src.a * math.exp(src.b * x1) + src.d - tgt.d) / tgt.a
        if argument <= 0:
            raise NonPositiveLogArgumentError(taxel_id, c1)
        return (tgt.c0 / tgt.b) * math.log(argument) + tgt.c0

    def remap_vector(self, counts) -> np.ndarray:
        """Remap a full frame's counts; output is real-valued (no rounding)."""
        counts = np.asarray(counts, dtype=float)
        out = np.empty_like(counts)
        for taxel_id in range(len(counts)):
            out[taxel_id] = self.remap(taxel_id, float(counts[taxel_id]))
        return out

    def inverted(self) -> "TransferMap":
        return TransferMap(source=dict(self.target), target=dict(self.source))

    def to_doc(self) -> dict:
        return {
            "schema": TRANSFER_SCHEMA,
            "taxels": {
                str(t): {"source": self.source[t].to_doc(), "target": self.target[t].to_doc()}
                for t in self.taxel_ids()
            },
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TransferMap":
        if doc.get("schema") != TRANSFER_SCHEMA:
            raise ValueError(f"unsupported transfer schema {doc.get('schema')!r}")
        source, target = {}, {}
        for taxel, entry in doc["taxels"].items():
            source[int(taxel)] = CalibrationCurve.from_doc(entry["source"])
            target[int(taxel)] = CalibrationCurve.from_doc(entry["target"])
        return cls(source=source, target=target)


def build_transfer_map(
    source: dict[int, CalibrationCurve], target: dict[int, CalibrationCurve]
) -> TransferMap:
    common = sorted(set(source) & set(target))
    if not common:
        raise ValueError("no common taxel ids between source and target curves")
    return TransferMap(
        source={t: source[t] for t in common}, target={t: target[t] for t in common}
    )
