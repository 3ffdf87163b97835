"""Calibration-session state machine.

Phases move strictly idle -> recording -> fitting -> review -> done:

  start        idle -> recording; names the mode and target taxels
  arm_rig      recording; runs a rig program on the session's simulator and
               collects the co-logged recording
  mark_noload  recording; pins the baseline window to the latest frames
  fit          recording|review -> fitting -> review; runs the calibration
               fits (failures land in review with diagnostics, not raised)
  accept       review; freezes a taxel's fit (accepted fits are immutable)
  reject       review; discards a taxel's fit so a re-fit can replace it
  finish       review -> done; requires at least one accepted fit and
               returns the curve document

Commands apply atomically under the session lock; an illegal command
raises IllegalTransitionError and leaves the state untouched.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .calibrate import FORCE, PNEUMATIC, curves_to_doc, fit_recording
from .characterize import mse, ssim
from .core import DEFAULT_LAYOUT, TaxelLayout, grid_project
from .errors import CapskinError, IllegalTransitionError
from .recording import Recording
from .sim import SkinSimulator, rig_program_from_doc, run_rig

IDLE = "idle"
RECORDING = "recording"
FITTING = "fitting"
REVIEW = "review"
DONE = "done"

MODES = ("force_calibration", "pneumatic_calibration", "transfer_check")

START = "start"
ARM_RIG = "arm_rig"
MARK_NOLOAD = "mark_noload"
FIT = "fit"
ACCEPT = "accept"
REJECT = "reject"
FINISH = "finish"

COMMANDS = (START, ARM_RIG, MARK_NOLOAD, FIT, ACCEPT, REJECT, FINISH)


@dataclass
class SessionState:
    session_id: str
    phase: str = IDLE
    mode: str | None = None
    target_taxels: list[int] = field(default_factory=list)
    fits: dict[int, dict] = field(default_factory=dict)
    accepted: list[int] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)
    frames_recorded: int = 0
    noload_marked: bool = False
    comparison: dict | None = None
    comparison_accepted: bool = False

    def to_doc(self) -> dict:
        return {
            "session_id": self.session_id,
            "phase": self.phase,
            "mode": self.mode,
            "target_taxels": list(self.target_taxels),
            "fits": {str(t): f for t, f in sorted(self.fits.items())},
            "accepted": sorted(self.accepted),
            "diagnostics": list(self.diagnostics),
            "frames_recorded": self.frames_recorded,
            "noload_marked": self.noload_marked,
            "comparison": self.comparison,
            "comparison_accepted": self.comparison_accepted,
        }


class Session:
    """One calibration session; single-writer, serialized command application.

    frame_provider(sensor_id) and transfer_provider() feed the
    transfer_check mode with the hub's latest frames and active map; plain
    calibration sessions need neither.
    """

    def __init__(
        self,
        session_id: str,
        simulator: SkinSimulator | None = None,
        layout: TaxelLayout = DEFAULT_LAYOUT,
        frame_provider=None,
        transfer_provider=None,
    ):
        self._lock = threading.Lock()
        self.state = SessionState(session_id=session_id)
        self.simulator = simulator
        self.layout = layout
        self.frame_provider = frame_provider
        self.transfer_provider = transfer_provider
        self.recording: Recording | None = None
        self._curves = {}

    def command(self, cmd: str, args: dict | None = None) -> SessionState:
        args = args or {}
        with self._lock:
            handler = {
                START: self._start,
                ARM_RIG: self._arm_rig,
                MARK_NOLOAD: self._mark_noload,
                FIT: self._fit,
                ACCEPT: self._accept,
                REJECT: self._reject,
                FINISH: self._finish,
            }.get(cmd)
            if handler is None:
                raise IllegalTransitionError(f"unknown command {cmd!r}")
            handler(args)
            return self.state

    def _require(self, *phases: str) -> None:
        if self.state.phase not in phases:
            raise IllegalTransitionError(
                f"command not legal in phase {self.state.phase!r} (wants {'/'.join(phases)})"
            )

    def _start(self, args: dict) -> None:
        self._require(IDLE)
        mode = args.get("mode")
        if mode not in MODES:
            raise IllegalTransitionError(f"unknown mode {mode!r}")
        self.state.mode = mode
        self.state.target_taxels = [int(t) for t in args.get("target_taxels", [])]
        self.state.phase = RECORDING

    def _arm_rig(self, args: dict) -> None:
        self._require(RECORDING)
        if self.simulator is None:
            raise IllegalTransitionError("session has no simulator to arm")
        program = rig_program_from_doc(args["rig"])
        self.simulator.reset()
        self.recording = run_rig(program, self.simulator)
        self.state.frames_recorded = len(self.recording.frames())

    def _mark_noload(self, args: dict) -> None:
        self._require(RECORDING)
        self.state.noload_marked = True

    def _fit(self, args: dict) -> None:
        self._require(RECORDING, REVIEW)
        self.state.phase = FITTING
        try:
            if self.state.mode == "transfer_check":
                self._compare_transfer(args)
            else:
                if self.recording is None:
                    raise CapskinError("no recording collected; arm_rig first")
                form = FORCE if self.state.mode == "force_calibration" else PNEUMATIC
                taxels = self.state.target_taxels or None
                curves = fit_recording(self.recording, form=form, taxel_ids=taxels)
                # accepted fits are immutable; refits replace the rest
                for taxel_id, curve in curves.items():
                    if taxel_id not in self.state.accepted:
                        self._curves[taxel_id] = curve
                        self.state.fits[taxel_id] = curve.to_doc()
        except CapskinError as exc:
            self.state.diagnostics.append(f"fit failed: {exc}")
        finally:
            self.state.phase = REVIEW

    def _compare_transfer(self, args: dict) -> None:
        """transfer_check's `fit`: score the live remap against the target."""
        if self.frame_provider is None or self.transfer_provider is None:
            raise CapskinError("session has no live frame/transfer access")
        transfer = self.transfer_provider()
        if transfer is None:
            raise CapskinError("no transfer map applied")
        source = self.frame_provider(int(args.get("source_sensor", 0)))
        target = self.frame_provider(int(args.get("target_sensor", 1)))
        if source is None or target is None:
            raise CapskinError("need a latest frame from both sensors")
        remapped = transfer.remap_vector(source.counts)
        grid_source = grid_project(source.counts.astype(float), self.layout)
        grid_target = grid_project(target.counts.astype(float), self.layout)
        grid_remapped = grid_project(remapped, self.layout)
        dynamic_range = float(
            max(
                grid_source.populated().max(),
                grid_target.populated().max(),
                grid_remapped.populated().max(),
            )
        )
        self.state.comparison = {
            "ssim_raw": ssim(grid_source, grid_target, dynamic_range),
            "ssim_remapped": ssim(grid_remapped, grid_target, dynamic_range),
            "mse_raw": mse(grid_source, grid_target),
            "mse_remapped": mse(grid_remapped, grid_target),
            "source_seq": source.seq,
            "target_seq": target.seq,
        }

    def _accept(self, args: dict) -> None:
        self._require(REVIEW)
        if self.state.mode == "transfer_check":
            if self.state.comparison is None:
                raise IllegalTransitionError("no comparison to accept")
            self.state.comparison_accepted = True
            return
        taxels = args.get("taxels")
        candidates = [int(t) for t in taxels] if taxels else list(self.state.fits)
        for taxel_id in candidates:
            if taxel_id not in self.state.fits:
                raise IllegalTransitionError(f"no fit to accept for taxel {taxel_id}")
            if taxel_id not in self.state.accepted:
                self.state.accepted.append(taxel_id)

    def _reject(self, args: dict) -> None:
        self._require(REVIEW)
        taxels = args.get("taxels")
        candidates = [int(t) for t in taxels] if taxels else list(self.state.fits)
        for taxel_id in candidates:
            if taxel_id in self.state.accepted:
                raise IllegalTransitionError(f"taxel {taxel_id} already accepted")
            self.state.fits.pop(taxel_id, None)
            self._curves.pop(taxel_id, None)

    def _finish(self, args: dict) -> None:
        self._require(REVIEW)
        if not self.state.accepted and not self.state.comparison_accepted:
            raise IllegalTransitionError("cannot finish without an accepted fit")
        self.state.phase = DONE

    def curve_doc(self) -> dict:
        """Accepted curves as a curves document (valid once done)."""
        accepted = {t: self._curves[t] for t in self.state.accepted}
        sensor_id = self.simulator.sensor_id if self.simulator else 0
        return curves_to_doc(accepted, sensor_id=sensor_id)

    def report_doc(self) -> dict:
        """Fit-quality summary for the review/report surfaces."""
        return {
            "session_id": self.state.session_id,
            "mode": self.state.mode,
            "phase": self.state.phase,
            "fits": {
                str(t): {"r2": doc["r2"], "rmse": doc["rmse"], "a": doc["a"], "b": doc["b"], "d": doc["d"]}
                for t, doc in sorted(self.state.fits.items())
            },
            "accepted": sorted(self.state.accepted),
            "diagnostics": list(self.state.diagnostics),
            "comparison": self.state.comparison,
        }


class SessionManager:
    """Registry of sessions keyed by id."""

    def __init__(
        self,
        simulator_factory=None,
        layout: TaxelLayout = DEFAULT_LAYOUT,
        frame_provider=None,
        transfer_provider=None,
    ):
        self._lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._simulator_factory = simulator_factory
        self._layout = layout
        self._frame_provider = frame_provider
        self._transfer_provider = transfer_provider

    def get_or_create(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self._sessions:
                simulator = self._simulator_factory() if self._simulator_factory else None
                self._sessions[session_id] = Session(
                    session_id,
                    simulator,
                    layout=self._layout,
                    frame_provider=self._frame_provider,
                    transfer_provider=self._transfer_provider,
                )
            return self._sessions[session_id]

    def get(self, session_id: str) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id)

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._sessions)
