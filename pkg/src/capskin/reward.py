"""Reward arithmetic and residual action composition for gentle grasping.

A residual policy scales a base gripper command a_b in [0, 1] by a factor
a_r in [0.8, 1.2]; the executed command is clamp(a_b * a_r, 0, 1). The
per-step reward combines three terms:

  force term    -sum(max(0, t_i - t_thresh)^2) over taxels, after removing
                 spike readings above the cutoff (unintentional surface
                 contacts are filtered out, not clamped)
  action term   -|(1 - a_r) * a_b|, penalizing residuals that actually
                 change the command
  failure term  failure_penalty at a terminal step flagged failed, else 0

  total = r_force + action_weight * r_action + r_failure    (exactly)

Sign convention: the force expression is sometimes written unsigned and
called a penalty; here every reward term is <= 0 so that larger is better,
and force_penalty exposes the unsigned value for callers that want the
literal quantity. Gripper commands are smoothed with an exponential moving
average where alpha weights the newest command (alpha = 0.3 means 30% new,
70% history); the first step passes through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import NormalizedFrame

ACTIONS_SCHEMA = "capskin.actions/1"


@dataclass(frozen=True)
class RewardConfig:
    t_thresh: float = 0.1
    spike_cutoff: float = 0.35
    action_weight: float = 0.01
    failure_penalty: float = -10.0
    residual_low: float = 0.8
    residual_high: float = 1.2
    ema_alpha: float = 0.3

    def __post_init__(self):
        if not 0 <= self.t_thresh < self.spike_cutoff:
            raise ValueError("requires 0 <= t_thresh < spike_cutoff")
        if self.action_weight < 0:
            raise ValueError("action_weight must be >= 0")
        if not 0 < self.residual_low <= self.residual_high:
            raise ValueError("residual bounds must be positive and ordered")
        if not 0 < self.ema_alpha <= 1:
            raise ValueError("ema_alpha must lie in (0, 1]")


DEFAULT_CONFIG = RewardConfig()


@dataclass(frozen=True)
class RewardBreakdown:
    """All reward components of one step plus the composed command."""

    r_force: float
    r_action: float
    r_failure: float
    total: float
    masked_taxels: tuple[int, ...] = ()


def force_penalty(frame: NormalizedFrame, config: RewardConfig = DEFAULT_CONFIG):
    """Unsigned threshold-exceedance penalty and the spike-masked taxel ids."""
    values = frame.values
    masked = np.flatnonzero(values > config.spike_cutoff)
    kept = np.delete(values, masked)
    exceedance = np.maximum(0.0, kept - config.t_thresh)
    return float(np.sum(exceedance**2)), tuple(int(t) for t in masked)


def force_reward(
    frame: NormalizedFrame, config: RewardConfig = DEFAULT_CONFIG
) -> tuple[float, tuple[int, ...]]:
    """Negated force penalty (<= 0) and the spike-masked taxel ids."""
    penalty, masked = force_penalty(frame, config)
    return -penalty, masked


def action_reward(a_b: float, a_r: float, config: RewardConfig = DEFAULT_CONFIG) -> float:
    """-|(1 - a_r) * a_b|: zero iff the residual leaves the command alone."""
    _check_actions(a_b, a_r, config)
    return -abs((1.0 - a_r) * a_b)


def compose_action(a_b: float, a_r: float, config: RewardConfig = DEFAULT_CONFIG) -> float:
    """Executed gripper command clamp(a_b * a_r, 0, 1)."""
    _check_actions(a_b, a_r, config)
    return min(max(a_b * a_r, 0.0), 1.0)


def total_reward(
    frame: NormalizedFrame,
    a_b: float,
    a_r: float,
    failed: bool,
    config: RewardConfig = DEFAULT_CONFIG,
) -> RewardBreakdown:
    """Compose the three reward terms for one step.

    failed marks a terminal step judged unsuccessful (externally supplied);
    it triggers the failure penalty exactly once, at that step.
    """
    r_force, masked = force_reward(frame, config)
    r_action = action_reward(a_b, a_r, config)
    r_failure = config.failure_penalty if failed else 0.0
    return RewardBreakdown(
        r_force=r_force,
        r_action=r_action,
        r_failure=r_failure,
        total=r_force + config.action_weight * r_action + r_failure,
        masked_taxels=masked,
    )


def ema_smooth(previous: float | None, new: float, alpha: float = DEFAULT_CONFIG.ema_alpha) -> float:
    """alpha * new + (1 - alpha) * previous; first step returns new unchanged."""
    if previous is None:
        return new
    return alpha * new + (1.0 - alpha) * previous


class EmaSmoother:
    """One EMA state value, owned by a single control loop."""

    def __init__(self, alpha: float = DEFAULT_CONFIG.ema_alpha):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = alpha
        self._previous: float | None = None

    def step(self, new: float) -> float:
        smoothed = ema_smooth(self._previous, new, self.alpha)
        self._previous = smoothed
        return smoothed

    def reset(self) -> None:
        self._previous = None


def _check_actions(a_b: float, a_r: float, config: RewardConfig) -> None:
    if not 0.0 <= a_b <= 1.0:
        raise ValueError(f"base command {a_b} outside [0, 1]")
    if not config.residual_low <= a_r <= config.residual_high:
        raise ValueError(
            f"residual {a_r} outside [{config.residual_low}, {config.residual_high}]"
        )


# ---------------------------------------------------------------------------
# Action logs: one `A <ts_ms> <a_b> <a_r> <failed:0|1>` line per step


@dataclass(frozen=True)
class ActionStep:
    timestamp_ms: int
    a_b: float
    a_r: float
    failed: bool


def write_action_log(path, steps: list[ActionStep]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for step in steps:
            fh.write(f"A {step.timestamp_ms} {step.a_b!r} {step.a_r!r} {int(step.failed)}\n")


def read_action_log(path) -> list[ActionStep]:
    steps = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 5 or fields[0] != "A":
                raise ValueError(f"line {line_no}: expected 'A <ts> <a_b> <a_r> <failed>'")
            steps.append(
                ActionStep(
                    timestamp_ms=int(fields[1]),
                    a_b=float(fields[2]),
                    a_r=float(fields[3]),
                    failed=fields[4] == "1",
                )
            )
    return steps


def replay_rewards(
    frames: list[NormalizedFrame],
    steps: list[ActionStep],
    config: RewardConfig = DEFAULT_CONFIG,
) -> list[RewardBreakdown]:
    """Evaluate the reward of each action step against the nearest frame."""
    if not frames:
        raise ValueError("no frames to evaluate against")
    frame_ts = np.array([f.timestamp_ms for f in frames], dtype=float)
    breakdowns = []
    for step in steps:
        nearest = int(np.argmin(np.abs(frame_ts - step.timestamp_ms)))
        breakdowns.append(
            total_reward(frames[nearest], step.a_b, step.a_r, step.failed, config)
        )
    return breakdowns
