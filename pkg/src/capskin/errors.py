"""Exception hierarchy for the capskin toolkit.

Every raised condition named in a module contract has a dedicated class so
callers can catch precisely. Codec faults inside decode_stream never raise;
they surface as diagnostics instead.
"""


class CapskinError(Exception):
    """Base class for all toolkit errors."""


class EmptyBaselineError(CapskinError):
    """Baseline capture received no frames."""


class LengthMismatchError(CapskinError):
    """Vector lengths disagree with the layout or with each other."""


class ZeroBaselineError(CapskinError):
    """A per-taxel no-load mean of zero; hardware fault, not valid data."""


class RangeExceededError(CapskinError):
    """A count does not fit the wire format's unsigned 16-bit payload."""


class RecordingParseError(CapskinError):
    """Malformed recording line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SeriesTooShortError(CapskinError):
    """Peak detection needs at least three samples."""


class NoPeaksError(CapskinError):
    """Peak alignment found no peaks in one of the series."""


class NoOverlapError(CapskinError):
    """No sensor/gauge sample pairs fell within the pairing tolerance."""


class DegenerateDataError(CapskinError):
    """Fit input is constant, too small, or otherwise unfittable."""


class NonConvergenceError(CapskinError):
    """The curve fit did not converge after restarts."""


class NonPositiveLogArgumentError(CapskinError):
    """Transfer remap hit a non-positive log argument for a taxel/input."""

    def __init__(self, taxel_id: int, c1: float):
        super().__init__(f"non-positive log argument remapping taxel {taxel_id} at count {c1}")
        self.taxel_id = taxel_id
        self.c1 = c1


class NoCompleteCycleError(CapskinError):
    """Cycle splitting found no complete loading/unloading cycle."""


class ConfigError(CapskinError):
    """Invalid simulator or rig configuration, rejected at construction."""


class IllegalTransitionError(CapskinError):
    """Session command not legal in the current state."""


class CoverageGapError(CapskinError):
    """A transfer map does not cover the active layout."""

    def __init__(self, missing: list[int]):
        super().__init__(f"transfer map missing taxels: {missing}")
        self.missing = missing
