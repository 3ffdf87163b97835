"""Runtime hub: fans frames from sources out to the recorder and viewers.

Delivery contracts:

  recorder   lossless; receives every published frame in publication order
  viewers    latest-wins; each viewer owns a bounded queue (depth 8) that
             drops the oldest frame when full, so a slow dashboard can
             never stall the stream

Sources are plain frame iterables (simulator generators, recording
replays, decoded byte streams) pumped by one thread each; a source ending
or failing surfaces as a hub event and the hub keeps running. An applied
transfer map remaps the values viewers see while the recorder always gets
the raw frames; remapped values stay real-valued (rounding to counts is a
wire-protocol concern, not a viewer concern).
"""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .calibrate import TransferMap
from .core import Baseline, SensorFrame, capture_baseline
from .errors import CoverageGapError

logger = logging.getLogger(__name__)

VIEWER_QUEUE_DEPTH = 8
BASELINE_WINDOW = 30


@dataclass(frozen=True)
class HubEvent:
    kind: str  # source_end | source_error
    source: str
    detail: str = ""


@dataclass(frozen=True)
class PublishedFrame:
    """What viewers receive: raw counts plus derived per-taxel values."""

    timestamp_ms: int
    sensor_id: int
    seq: int
    counts: np.ndarray
    x: np.ndarray | None = None
    remapped: np.ndarray | None = None

    def to_doc(self) -> dict:
        return {
            "ts": self.timestamp_ms,
            "sensor_id": self.sensor_id,
            "seq": self.seq,
            "counts": [int(c) for c in self.counts],
            "x": None if self.x is None else [float(v) for v in self.x],
            "remapped": None if self.remapped is None else [float(v) for v in self.remapped],
        }


class Viewer:
    """One live consumer with a drop-oldest queue."""

    def __init__(self, depth: int = VIEWER_QUEUE_DEPTH):
        self._queue: deque[PublishedFrame] = deque(maxlen=depth)
        self._condition = threading.Condition()
        self.dropped = 0
        self.closed = False

    def _offer(self, frame: PublishedFrame) -> None:
        with self._condition:
            if len(self._queue) == self._queue.maxlen:
                self.dropped += 1
            self._queue.append(frame)
            self._condition.notify()

    def next_frame(self, timeout: float | None = 1.0) -> PublishedFrame | None:
        """Oldest queued frame, blocking up to timeout; None on timeout/close."""
        with self._condition:
            if not self._queue and not self.closed:
                self._condition.wait(timeout)
            if self._queue:
                return self._queue.popleft()
            return None

    def close(self) -> None:
        with self._condition:
            self.closed = True
            self._condition.notify_all()


class FrameHub:
    """Multiple producer sources, one lossless recorder, many lossy viewers."""

    def __init__(self, baseline: Baseline | None = None):
        self._lock = threading.Lock()
        self._recorded: list[SensorFrame] = []
        self._viewers: list[Viewer] = []
        self._events: list[HubEvent] = []
        self._threads: list[threading.Thread] = []
        self._transfer: TransferMap | None = None
        self._baseline = baseline
        self._baseline_window: list[SensorFrame] = []

    # -- sinks

    def open_viewer(self, depth: int = VIEWER_QUEUE_DEPTH) -> Viewer:
        viewer = Viewer(depth)
        with self._lock:
            self._viewers.append(viewer)
        return viewer

    def close_viewer(self, viewer: Viewer) -> None:
        viewer.close()
        with self._lock:
            if viewer in self._viewers:
                self._viewers.remove(viewer)

    def recorded_frames(self) -> list[SensorFrame]:
        with self._lock:
            return list(self._recorded)

    def events(self) -> list[HubEvent]:
        with self._lock:
            return list(self._events)

    @property
    def baseline(self) -> Baseline | None:
        return self._baseline

    def set_baseline(self, baseline: Baseline | None) -> None:
        with self._lock:
            self._baseline = baseline

    # -- transfer remapping of the viewer path

    def apply_transfer(self, transfer: TransferMap, taxel_count: int | None = None) -> None:
        """Remap subsequently published viewer frames; raw stays recorded."""
        with self._lock:
            width = taxel_count
            if width is None:
                width = len(self._recorded[-1].counts) if self._recorded else None
            if width is not None:
                missing = transfer.covers(range(width))
                if missing:
                    raise CoverageGapError(missing)
            self._transfer = transfer

    def clear_transfer(self) -> None:
        with self._lock:
            self._transfer = None

    @property
    def transfer_active(self) -> bool:
        return self._transfer is not None

    def active_transfer(self) -> TransferMap | None:
        return self._transfer

    # -- publication

    def publish(self, frame: SensorFrame) -> None:
        """Deliver one frame to the recorder (lossless) and viewers (lossy)."""
        with self._lock:
            self._recorded.append(frame)
            if self._baseline is None:
                self._baseline_window.append(frame)
                if len(self._baseline_window) >= BASELINE_WINDOW:
                    try:
                        self._baseline = capture_baseline(self._baseline_window)
                    except Exception:  # zero means stay unbaselined, keep serving
                        logger.warning("auto-baseline failed; normalized values unavailable")
                    self._baseline_window = []
            x = None
            if self._baseline is not None and len(self._baseline.c0) == len(frame.counts):
                x = (frame.counts - self._baseline.c0) / self._baseline.c0
            remapped = None
            if self._transfer is not None and not self._transfer.covers(range(len(frame.counts))):
                try:
                    remapped = self._transfer.remap_vector(frame.counts)
                except Exception as exc:
                    self._events.append(HubEvent("remap_error", "transfer", str(exc)))
            published = PublishedFrame(
                timestamp_ms=frame.timestamp_ms,
                sensor_id=frame.sensor_id,
                seq=frame.seq,
                counts=frame.counts,
                x=x,
                remapped=remapped,
            )
            viewers = list(self._viewers)
        for viewer in viewers:
            viewer._offer(published)

    def latest(self, sensor_id: int | None = None) -> SensorFrame | None:
        with self._lock:
            for frame in reversed(self._recorded):
                if sensor_id is None or frame.sensor_id == sensor_id:
                    return frame
        return None

    # -- sources

    def attach_source(self, frames, name: str, block: bool = False) -> threading.Thread:
        """Pump an iterable of frames into the hub from its own thread."""

        def pump():
            try:
                for frame in frames:
                    self.publish(frame)
                with self._lock:
                    self._events.append(HubEvent("source_end", name))
            except Exception as exc:
                with self._lock:
                    self._events.append(HubEvent("source_error", name, str(exc)))
                logger.warning("source %s failed: %s", name, exc)

        thread = threading.Thread(target=pump, name=f"source-{name}", daemon=True)
        self._threads.append(thread)
        thread.start()
        if block:
            thread.join()
        return thread

    def wait_sources(self, timeout: float | None = None) -> None:
        for thread in self._threads:
            thread.join(timeout)


def replay_source(recording, rate: float = 0.0):
    """Yield a recording's frames, optionally paced at a realtime multiple.

    rate 0 replays as fast as possible; rate 1 paces to the original
    timestamps, rate 2 twice as fast, and so on.
    """
    import time

    frames = recording.frames()
    start = None
    wall_start = time.monotonic()
    for frame in frames:
        if rate > 0:
            if start is None:
                start = frame.timestamp_ms
            due = wall_start + (frame.timestamp_ms - start) / 1000.0 / rate
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        yield frame


def simulator_source(sim, pressure_schedule, rate_hz: float = 0.0):
    """Yield simulator frames for a pressure schedule (an iterable of fields).

    rate_hz 0 runs unpaced (tests); otherwise frames are paced in wall time.
    """
    import time

    period = 0.0 if rate_hz <= 0 else 1.0 / rate_hz
    next_due = time.monotonic()
    for pressure_field in pressure_schedule:
        if period:
            delay = next_due - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            next_due += period
        yield sim.respond(np.asarray(pressure_field, dtype=float))


def pulsing_schedule(taxel_count: int, frames: int | None = None, peak_kpa: float = 120.0):
    """Endless demo pressure pattern: a breathing blob wandering over taxels."""
    index = 0
    while frames is None or index < frames:
        center = (index // 15) % taxel_count
        amplitude = peak_kpa * 0.5 * (1 - np.cos(2 * np.pi * (index % 90) / 90))
        pressure_field = np.zeros(taxel_count)
        for offset in (-1, 0, 1):
            taxel = (center + offset) % taxel_count
            pressure_field[taxel] = amplitude * (1.0 if offset == 0 else 0.4)
        yield pressure_field
        index += 1
