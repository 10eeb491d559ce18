"""Visual odometry with rotation-gated frame interpolation.

Track camera pose from monocular or RGB-D sequences, measure the rotation
between consecutive estimated poses, and insert synthesized mid-frames
while the rotation rate exceeds a threshold, which keeps feature matching
alive through fast turns.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    datasets,
    estimation,
    evaluation,
    features,
    geometry,
    imaging,
    interp,
    pipeline,
    rotation_gate,
)
from .errors import SpinvoError  # noqa: F401
from .estimation import CameraIntrinsics  # noqa: F401
from .geometry import PoseSE3, compose, inverse, relative_pose, rotation_angle  # noqa: F401
from .pipeline import PipelineConfig, RunReport, run_sequence  # noqa: F401
from .rotation_gate import GateConfig, InterpolationMode  # noqa: F401
