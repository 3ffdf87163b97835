"""Virtual skin and virtual test rigs with known ground-truth parameters.

Each taxel responds to normal pressure P (kPa) through the inverse of its
pneumatic curve P = a*exp(b*x) + d:

  x(P) = (1/b) * ln((P - d) / a)

Zero-consistent taxels fix d = -a so x(0) = 0 exactly; otherwise d must be
negative so the log argument stays positive for every P >= 0 (checked at
construction, never per call).

The response pipeline per frame, in order:

  ideal x -> crosstalk mixing (K @ x) -> hysteresis play operator
          -> cycle-indexed drift offsets
          -> counts = round(c0 * (1 + x) + noise)

Noise emulates the readout board's four-sample averaging: four Gaussian
draws are averaged before quantization. Hysteresis is a scalar play
(backlash) operator per taxel, the simplest rate-independent model with a
controllable loading/unloading gap; its width and the drift offsets are
expressed as fractions of the full-scale response (x at
full_scale_pressure_kpa). Drift is linear in cycle index so a run of N
cycles lands exactly on the configured endpoint drift fractions.

A simulator instance is stateful (play memory, cycle counter, seq, RNG)
and single-owner; the frames it emits are immutable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import PNEUMATIC, CalibrationCurve
from .core import FRAME_PERIOD_MS, SensorFrame, TaxelLayout
from .errors import ConfigError
from .recording import GaugeSample, Recording, RecordingHeader, SensorDescriptor

PHYSICS_SCHEMA = "capskin.physics/1"
RIG_SCHEMA = "capskin.rig/1"

VERTICAL_STAGE = "vertical_stage"
PNEUMATIC_CHAMBER = "pneumatic_chamber"

HYSTERESIS_NONE = "none"
HYSTERESIS_PLAY = "play"

# Nominal response shape: ~1.3 full-scale normalized output at 702.1 kPa.
NOMINAL_A_KPA = 50.0
NOMINAL_B = 2.085
NOMINAL_C0 = 20000.0
FULL_SCALE_PRESSURE_KPA = 702.1

AVERAGING_SAMPLES = 4


@dataclass(frozen=True)
class TaxelPhysics:
    """Ground-truth pneumatic-form parameters of one simulated taxel."""

    a_kpa: float
    b: float
    d_kpa: float
    c0: float
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not (self.a_kpa > 0 and self.b > 0):
            raise ConfigError("taxel physics requires a > 0 and b > 0")
        if self.d_kpa >= 0:
            raise ConfigError(
                "d must be negative so x(P) is defined for every P >= 0 "
                "(use d = -a for a zero-consistent taxel)"
            )
        if self.c0 <= 0:
            raise ConfigError("baseline c0 must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise sigma must be non-negative")

    @property
    def zero_consistent(self) -> bool:
        return self.d_kpa == -self.a_kpa

    def x_of_pressure(self, pressure_kpa):
        return np.log((np.asarray(pressure_kpa, dtype=float) - self.d_kpa) / self.a_kpa) / self.b

    def pressure_of_x(self, x):
        return self.a_kpa * np.exp(self.b * np.asarray(x, dtype=float)) + self.d_kpa


@dataclass(frozen=True)
class HysteresisModel:
    """Loading/unloading gap model; width is a fraction of full-scale x."""

    kind: str = HYSTERESIS_NONE
    width: float = 0.0

    def __post_init__(self):
        if self.kind not in (HYSTERESIS_NONE, HYSTERESIS_PLAY):
            raise ConfigError(f"unknown hysteresis kind {self.kind!r}")
        if self.width < 0:
            raise ConfigError("hysteresis width must be >= 0")
        if self.kind == HYSTERESIS_NONE and self.width != 0:
            raise ConfigError("kind=none requires width 0")


@dataclass(frozen=True)
class DriftModel:
    """Endpoint drift fractions reached linearly over a planned cycle count."""

    peak_drift_total: float = 0.0
    zero_drift_total: float = 0.0
    cycles: int = 1

    def __post_init__(self):
        if self.cycles < 1:
            raise ConfigError("drift cycle count must be >= 1")

    def offsets(self, cycle_index: int) -> tuple[float, float]:
        """(zero, peak) offset fractions of full-scale x at a 0-based cycle."""
        if self.cycles <= 1:
            return 0.0, 0.0
        progress = cycle_index / (self.cycles - 1)
        return self.zero_drift_total * progress, self.peak_drift_total * progress


@dataclass(frozen=True)
class CouplingMatrix:
    """Crosstalk mixing matrix applied to normalized responses: x' = K @ x."""

    k: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise ConfigError("coupling matrix must be square")
        if not np.allclose(np.diag(k), 1.0):
            raise ConfigError("coupling matrix diagonal must be 1")
        off = k[~np.eye(k.shape[0], dtype=bool)]
        if off.size and (off.min() < 0 or off.max() > 0.1):
            raise ConfigError("off-diagonal coupling must lie in [0, 0.1]")
        object.__setattr__(self, "k", k)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CouplingMatrix):
            return NotImplemented
        return np.array_equal(self.k, other.k)

    @classmethod
    def identity(cls, n: int) -> "CouplingMatrix":
        return cls(np.eye(n))

    @classmethod
    def uniform(cls, n: int, coefficient: float) -> "CouplingMatrix":
        """All off-diagonal entries set to one coefficient."""
        k = np.full((n, n), coefficient)
        np.fill_diagonal(k, 1.0)
        return cls(k)

    @property
    def size(self) -> int:
        return self.k.shape[0]


@dataclass(frozen=True)
class SkinConfig:
    """Full physical description of one simulated skin."""

    layout: TaxelLayout
    taxels: tuple[TaxelPhysics, ...]
    coupling: CouplingMatrix | None = None
    hysteresis: HysteresisModel = HysteresisModel()
    drift: DriftModel = DriftModel()
    full_scale_pressure_kpa: float = FULL_SCALE_PRESSURE_KPA
    averaging_samples: int = AVERAGING_SAMPLES

    def __post_init__(self):
        if len(self.taxels) != self.layout.taxel_count:
            raise ConfigError("one TaxelPhysics per layout taxel required")
        if self.coupling is not None and self.coupling.size != self.layout.taxel_count:
            raise ConfigError("coupling matrix size must match taxel count")
        if self.full_scale_pressure_kpa <= 0:
            raise ConfigError("full-scale pressure must be positive")
        if self.averaging_samples < 1:
            raise ConfigError("averaging sample count must be >= 1")

    @classmethod
    def nominal(
        cls,
        layout: TaxelLayout | None = None,
        a_kpa: float = NOMINAL_A_KPA,
        b: float = NOMINAL_B,
        c0: float = NOMINAL_C0,
        noise_sigma: float = 0.0,
        spread: float = 0.15,
        seed: int = 0,
        coupling: CouplingMatrix | None = None,
        hysteresis: HysteresisModel = HysteresisModel(),
        drift: DriftModel = DriftModel(),
        full_scale_pressure_kpa: float = FULL_SCALE_PRESSURE_KPA,
    ) -> "SkinConfig":
        """Zero-consistent skin with per-taxel parameter spread.

        Each taxel's (a, b, c0) is the nominal value scaled by an independent
        uniform factor in [1-spread, 1+spread], seeded for reproducibility.
        """
        layout = layout or TaxelLayout()
        rng = np.random.default_rng(seed)
        taxels = []
        for _ in range(layout.taxel_count):
            fa, fb, fc = 1.0 + rng.uniform(-spread, spread, size=3)
            taxel_a = a_kpa * fa
            taxels.append(
                TaxelPhysics(
                    a_kpa=taxel_a,
                    b=b * fb,
                    d_kpa=-taxel_a,
                    c0=c0 * fc,
                    noise_sigma=noise_sigma,
                )
            )
        return cls(
            layout=layout,
            taxels=tuple(taxels),
            coupling=coupling,
            hysteresis=hysteresis,
            drift=drift,
            full_scale_pressure_kpa=full_scale_pressure_kpa,
        )

    def ground_truth_curves(self) -> dict[int, CalibrationCurve]:
        """Per-taxel pneumatic ground-truth curves (for oracle pipelines)."""
        curves = {}
        for taxel_id, taxel in enumerate(self.taxels):
            x_max = float(taxel.x_of_pressure(self.full_scale_pressure_kpa))
            curves[taxel_id] = CalibrationCurve(
                form=PNEUMATIC,
                a=taxel.a_kpa,
                b=taxel.b,
                d=taxel.d_kpa,
                c0=taxel.c0,
                r2=1.0,
                x_range=(0.0, x_max),
                rmse=0.0,
                taxel_id=taxel_id,
            )
        return curves


class SkinSimulator:
    """Stateful virtual skin emitting SensorFrames for applied pressures."""

    def __init__(self, config: SkinConfig, sensor_id: int = 0, seed: int = 0):
        self.config = config
        self.sensor_id = sensor_id
        self._rng = np.random.default_rng(seed)
        self._a = np.array([t.a_kpa for t in config.taxels])
        self._b = np.array([t.b for t in config.taxels])
        self._d = np.array([t.d_kpa for t in config.taxels])
        self._c0 = np.array([t.c0 for t in config.taxels])
        self._sigma = np.array([t.noise_sigma for t in config.taxels])
        self._k = None if config.coupling is None else config.coupling.k
        # full-scale normalized response per taxel, the reference for
        # hysteresis width and drift offsets
        self._x_full = np.log((config.full_scale_pressure_kpa - self._d) / self._a) / self._b
        self._play_half_width = (
            0.5 * config.hysteresis.width * self._x_full
            if config.hysteresis.kind == HYSTERESIS_PLAY
            else None
        )
        self._play_state: np.ndarray | None = None
        self._cycle_index = 0
        self._seq = 0

    @property
    def taxel_count(self) -> int:
        return self.config.layout.taxel_count

    @property
    def cycle_index(self) -> int:
        return self._cycle_index

    def reset(self) -> None:
        self._play_state = None
        self._cycle_index = 0
        self._seq = 0

    def begin_cycle(self) -> None:
        """Advance the cycle counter.

        A fresh simulator is already in cycle 0; rigs call this between
        cycles so a run of N cycles spans indices 0..N-1 and lands exactly
        on the configured endpoint drift.
        """
        self._cycle_index += 1

    def x_of_pressure(self, pressure_kpa) -> np.ndarray:
        pressure = np.asarray(pressure_kpa, dtype=float)
        return np.log((pressure - self._d) / self._a) / self._b

    def respond(self, pressure_kpa, timestamp_ms: int | None = None) -> SensorFrame:
        """Emit one frame for a per-taxel pressure field (kPa)."""
        pressure = np.asarray(pressure_kpa, dtype=float)
        if pressure.shape != (self.taxel_count,):
            raise ValueError(f"pressure field must have {self.taxel_count} entries")
        if (pressure < 0).any():
            raise ValueError("pressures must be non-negative")

        x = self.x_of_pressure(pressure)
        if self._k is not None:
            x = self._k @ x
        if self._play_half_width is not None:
            if self._play_state is None:
                self._play_state = x.copy()
            else:
                self._play_state = np.maximum(
                    x - self._play_half_width,
                    np.minimum(x + self._play_half_width, self._play_state),
                )
            x = self._play_state
        zero_off, peak_off = self.config.drift.offsets(self._cycle_index)
        if zero_off or peak_off:
            fraction = np.clip(x / self._x_full, 0.0, 1.0)
            x = x + self._x_full * (zero_off + (peak_off - zero_off) * fraction)

        counts = self._c0 * (1.0 + x)
        if self._sigma.any():
            draws = self._rng.normal(size=(self.config.averaging_samples, self.taxel_count))
            counts = counts + self._sigma * draws.mean(axis=0)
        counts = np.maximum(np.rint(counts), 0.0).astype(np.int64)

        seq = self._seq
        self._seq += 1
        if timestamp_ms is None:
            timestamp_ms = round(seq * FRAME_PERIOD_MS)
        return SensorFrame(
            timestamp_ms=timestamp_ms, sensor_id=self.sensor_id, seq=seq, counts=counts
        )


# ---------------------------------------------------------------------------
# Rig programs


@dataclass(frozen=True)
class VerticalStageProgram:
    """Motorized stage pressing one taxel through loading/unloading cycles.

    The stage advances in constant steps; a linear stiffness maps indentation
    depth to normal force (default 2.5 N per mm, i.e. 2.5 N per 100 of the
    0.01 mm steps). Force converts to pressure through the taxel's area.
    """

    target_taxel: int
    max_force_n: float = 2.5
    step_mm: float = 0.01
    stiffness_n_per_mm: float = 2.5
    cycles: int = 3
    noload_lead_s: float = 1.0

    kind: str = VERTICAL_STAGE

    def __post_init__(self):
        if self.max_force_n <= 0 or self.step_mm <= 0 or self.stiffness_n_per_mm <= 0:
            raise ConfigError("stage force, step and stiffness must be positive")
        if self.cycles < 1:
            raise ConfigError("cycle count must be >= 1")

    @property
    def steps_per_leg(self) -> int:
        return max(1, round(self.max_force_n / (self.stiffness_n_per_mm * self.step_mm)))

    def force_at_step(self, step: int) -> float:
        return step * self.step_mm * self.stiffness_n_per_mm


@dataclass(frozen=True)
class PneumaticChamberProgram:
    """Inflatable chamber ramping uniform pressure over the whole skin."""

    p_max_kpa: float = 41.4
    ramp_s: float = 10.0
    cycles: int = 1
    noload_lead_s: float = 1.0

    kind: str = PNEUMATIC_CHAMBER

    def __post_init__(self):
        if self.p_max_kpa <= 0 or self.ramp_s <= 0:
            raise ConfigError("chamber pressure and ramp duration must be positive")
        if self.cycles < 1:
            raise ConfigError("cycle count must be >= 1")


RigProgram = VerticalStageProgram | PneumaticChamberProgram


def run_rig(
    program: RigProgram,
    sim: SkinSimulator,
    frame_rate_hz: float = 30.0,
    gauge_rate_hz: float = 10.0,
    layout_id: str | None = None,
) -> Recording:
    """Execute a rig program; returns the co-logged frame + gauge recording.

    Frames step at the sensor rate; the (slower) reference gauge is sampled
    at its own rate and interleaved in time order. Every program starts with
    a no-load lead-in so recordings carry their own baseline window.
    """
    frame_period_ms = 1000.0 / frame_rate_hz
    gauge_period_ms = 1000.0 / gauge_rate_hz

    lead = round(program.noload_lead_s * frame_rate_hz)
    if isinstance(program, VerticalStageProgram):
        unit = "N"
        area = sim.config.layout.areas_mm2()[program.target_taxel]
        steps = list(range(program.steps_per_leg + 1))
        profile = steps + steps[-2::-1]  # apex appears exactly once
        schedule = [(0.0, None)] * lead  # per-frame (gauge value, load)
        for _ in range(program.cycles):
            for step in profile:
                force = program.force_at_step(step)
                schedule.append((force, (program.target_taxel, force / area * 1000.0)))
    else:
        unit = "kPa"
        leg = max(1, round(program.ramp_s * frame_rate_hz / 2.0))
        up = [program.p_max_kpa * i / leg for i in range(leg + 1)]
        profile = up + up[-2::-1]
        schedule = [(0.0, None)] * lead
        for _ in range(program.cycles):
            for pressure in profile:
                schedule.append((pressure, ("uniform", pressure)))
    # cycle 0 includes the lead-in; later cycles advance the drift counter
    cycle_starts = {lead + c * len(profile) for c in range(1, program.cycles)}

    frames = []
    zeros = np.zeros(sim.taxel_count)
    for index, (_, load) in enumerate(schedule):
        if index in cycle_starts:
            sim.begin_cycle()
        if load is None:
            field_kpa = zeros
        elif load[0] == "uniform":
            field_kpa = np.full(sim.taxel_count, load[1])
        else:
            field_kpa = zeros.copy()
            field_kpa[load[0]] = load[1]
        frames.append(sim.respond(field_kpa))

    # The gauge samples the applied reference at its own clock
    # (sample-and-hold of the schedule), with timestamps formed exactly like
    # frame timestamps so co-logged instants coincide.
    ratio = frame_rate_hz / gauge_rate_hz
    gauge_rows = []
    tick = 0
    while True:
        frame_index = int(np.floor(tick * ratio + 1e-9))
        if frame_index >= len(schedule):
            break
        gauge_rows.append(
            GaugeSample(
                timestamp_ms=round(tick * gauge_period_ms),
                value=schedule[frame_index][0],
                unit=unit,
            )
        )
        tick += 1

    rows = []
    gauge_iter = iter(gauge_rows)
    pending = next(gauge_iter, None)
    for frame in frames:
        while pending is not None and pending.timestamp_ms <= frame.timestamp_ms:
            rows.append(pending)
            pending = next(gauge_iter, None)
        rows.append(frame)
    while pending is not None:
        rows.append(pending)
        pending = next(gauge_iter, None)

    header = RecordingHeader(
        layout_id=layout_id or sim.config.layout.layout_id,
        sensors=(SensorDescriptor(sim.sensor_id, sim.taxel_count),),
        start_epoch_ms=0,
        gauge_unit=unit,
    )
    return Recording(header=header, rows=rows)


# ---------------------------------------------------------------------------
# Config documents


def skin_config_to_doc(config: SkinConfig) -> dict:
    doc = {
        "schema": PHYSICS_SCHEMA,
        "layout": config.layout.to_doc(),
        "taxels": [
            {
                "a_kpa": t.a_kpa,
                "b": t.b,
                "d_kpa": t.d_kpa,
                "c0": t.c0,
                "noise_sigma": t.noise_sigma,
            }
            for t in config.taxels
        ],
        "hysteresis": {"kind": config.hysteresis.kind, "width": config.hysteresis.width},
        "drift": {
            "peak_drift_total": config.drift.peak_drift_total,
            "zero_drift_total": config.drift.zero_drift_total,
            "cycles": config.drift.cycles,
        },
        "full_scale_pressure_kpa": config.full_scale_pressure_kpa,
        "averaging_samples": config.averaging_samples,
    }
    if config.coupling is not None:
        doc["coupling"] = config.coupling.k.tolist()
    return doc


def skin_config_from_doc(doc: dict) -> SkinConfig:
    if doc.get("schema") != PHYSICS_SCHEMA:
        raise ConfigError(f"unsupported physics schema {doc.get('schema')!r}")
    return SkinConfig(
        layout=TaxelLayout.from_doc(doc["layout"]),
        taxels=tuple(
            TaxelPhysics(
                a_kpa=float(t["a_kpa"]),
                b=float(t["b"]),
                d_kpa=float(t["d_kpa"]),
                c0=float(t["c0"]),
                noise_sigma=float(t.get("noise_sigma", 0.0)),
            )
            for t in doc["taxels"]
        ),
        coupling=None if "coupling" not in doc else CouplingMatrix(np.array(doc["coupling"])),
        hysteresis=HysteresisModel(
            kind=doc["hysteresis"]["kind"], width=float(doc["hysteresis"]["width"])
        ),
        drift=DriftModel(
            peak_drift_total=float(doc["drift"]["peak_drift_total"]),
            zero_drift_total=float(doc["drift"]["zero_drift_total"]),
            cycles=int(doc["drift"]["cycles"]),
        ),
        full_scale_pressure_kpa=float(doc["full_scale_pressure_kpa"]),
        averaging_samples=int(doc.get("averaging_samples", AVERAGING_SAMPLES)),
    )


def rig_program_to_doc(program: RigProgram) -> dict:
    if isinstance(program, VerticalStageProgram):
        return {
            "schema": RIG_SCHEMA,
            "kind": VERTICAL_STAGE,
            "target_taxel": program.target_taxel,
            "max_force_n": program.max_force_n,
            "step_mm": program.step_mm,
            "stiffness_n_per_mm": program.stiffness_n_per_mm,
            "cycles": program.cycles,
            "noload_lead_s": program.noload_lead_s,
        }
    return {
        "schema": RIG_SCHEMA,
        "kind": PNEUMATIC_CHAMBER,
        "p_max_kpa": program.p_max_kpa,
        "ramp_s": program.ramp_s,
        "cycles": program.cycles,
        "noload_lead_s": program.noload_lead_s,
    }


def rig_program_from_doc(doc: dict) -> RigProgram:
    if doc.get("schema") != RIG_SCHEMA:
        raise ConfigError(f"unsupported rig schema {doc.get('schema')!r}")
    if doc["kind"] == VERTICAL_STAGE:
        return VerticalStageProgram(
            target_taxel=int(doc["target_taxel"]),
            max_force_n=float(doc.get("max_force_n", 2.5)),
            step_mm=float(doc.get("step_mm", 0.01)),
            stiffness_n_per_mm=float(doc.get("stiffness_n_per_mm", 2.5)),
            cycles=int(doc.get("cycles", 3)),
            noload_lead_s=float(doc.get("noload_lead_s", 1.0)),
        )
    if doc["kind"] == PNEUMATIC_CHAMBER:
        return PneumaticChamberProgram(
            p_max_kpa=float(doc.get("p_max_kpa", 41.4)),
            ramp_s=float(doc.get("ramp_s", 10.0)),
            cycles=int(doc.get("cycles", 1)),
            noload_lead_s=float(doc.get("noload_lead_s", 1.0)),
        )
    raise ConfigError(f"unknown rig kind {doc['kind']!r}")
