"""Rotation detection between consecutive tracked poses and the gate logic.

The measured quantity is the axis-angle magnitude of the relative rotation
between the current frame's pose and the most recent real frame's pose.
Interpolated frames never trigger interpolation and never become the
reference frame for the next measurement.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .geometry import PoseSE3, relative_pose, rotation_angle

DEFAULT_BETA = 0.03  # radians per consecutive real-frame pair


class InterpolationMode(Enum):
    OFF = "off"
    GATED = "gated"
    ALWAYS = "always"


@dataclass
class GateConfig:
    beta: float = DEFAULT_BETA
    mode: InterpolationMode = InterpolationMode.GATED

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = InterpolationMode(self.mode)
        if self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass
class RotationMeasurement:
    theta: float  # radians, in [0, pi]
    frame_prev_id: int
    frame_curr_id: int


def measure_rotation(
    pose_prev: PoseSE3,
    pose_curr: PoseSE3,
    frame_prev_id: int = -1,
    frame_curr_id: int = -1,
) -> RotationMeasurement:
    """Rotation angle of the relative pose between two world-to-camera poses."""
    rel = relative_pose(pose_prev, pose_curr)
    return RotationMeasurement(rotation_angle(rel.rotation), frame_prev_id, frame_curr_id)


def gate_decision(
    m: RotationMeasurement, cfg: GateConfig, curr_is_interpolated: bool
) -> bool:
    """Should a mid-frame be inserted between the current and next frame?

    Off: never. Always: for every real-frame pair. Gated: only when
    theta strictly exceeds beta and the current frame is real; detection
    is never performed on synthesized frames, so they cannot re-trigger.
    """
    if cfg.mode is InterpolationMode.OFF:
        return False
    if curr_is_interpolated:
        return False
    if cfg.mode is InterpolationMode.ALWAYS:
        return True
    return m.theta > cfg.beta


class RotationGate:
    """Sequential gate state: remembers the most recent real frame's pose.

    Driven only from the pipeline thread. `observe` returns the rotation
    measurement against the last real frame (None before one exists) and
    the insertion decision for the pair (current, next).
    """

    def __init__(self, cfg: GateConfig):
        self.cfg = cfg
        self._last_real: tuple[int, PoseSE3] | None = None

    def observe(self, frame_id: int, pose: PoseSE3, is_interpolated: bool):
        measurement = None
        if self._last_real is not None:
            prev_id, prev_pose = self._last_real
            measurement = measure_rotation(prev_pose, pose, prev_id, frame_id)
        if measurement is not None:
            decision = gate_decision(measurement, self.cfg, is_interpolated)
        else:
            # Before any real reference exists only Always mode can fire.
            decision = (
                self.cfg.mode is InterpolationMode.ALWAYS and not is_interpolated
            )
        if not is_interpolated:
            self._last_real = (frame_id, pose)
        return measurement, decision
