"""Sequence sources: KITTI odometry, TUM RGB-D, and a synthetic renderer.

Every source presents the same contract: camera intrinsics, an iterator of
timestamped frames (lazy-loading images for on-disk datasets), and an
optional ground-truth trajectory (camera-to-world; on-disk ground truth is
converted from each dataset's own convention at load time, and internal
tracking always works world-to-camera).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError, ParseError
from .estimation import CameraIntrinsics
from .evaluation import (
    Trajectory,
    associate_timestamps,
    read_tum_trajectory,
    write_tum_trajectory,
)
from .geometry import PoseSE3, inverse, rotation_from_axis_angle
from .imaging import load_depth_png, load_png, save_depth_png, save_png

TUM_DEPTH_SCALE = 5000.0
TUM_ASSOC_MAX_DT = 0.02
# TUM default pinhole parameters (used when a sequence ships no calibration).
TUM_DEFAULT_INTRINSICS = CameraIntrinsics(525.0, 525.0, 319.5, 239.5)


@dataclass
class SourceFrame:
    index: int
    timestamp: float
    image: np.ndarray
    depth: np.ndarray | None = None


class SequenceSource:
    """Base contract: len, iteration over SourceFrame, intrinsics, ground truth."""

    intrinsics: CameraIntrinsics
    ground_truth: Trajectory | None = None
    name: str = "sequence"

    def __len__(self):
        raise NotImplementedError

    def __iter__(self):
        raise NotImplementedError

    @property
    def timestamps(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def frame_rate(self) -> float:
        ts = self.timestamps
        if len(ts) < 2:
            return 1.0
        dt = float(np.median(np.diff(ts)))
        return 1.0 / dt if dt > 0 else 1.0


# --------------------------------------------------------------------------
# KITTI odometry layout


def _parse_kitti_calib(path: Path) -> CameraIntrinsics:
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if line.startswith("P2:"):
            vals = line.split(":", 1)[1].split()
            if len(vals) != 12:
                raise ParseError(f"{path}:{lineno}: P2 needs 12 floats, got {len(vals)}")
            p = np.array([float(v) for v in vals]).reshape(3, 4)
            return CameraIntrinsics(p[0, 0], p[1, 1], p[0, 2], p[1, 2])
    raise ParseError(f"{path}: no P2 calibration line")


def _parse_kitti_poses(path: Path) -> list:
    """12-float rows as camera-to-world [R|t]; returned as PoseSE3 list."""
    poses = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        vals = line.split()
        if len(vals) != 12:
            raise ParseError(
                f"{path}:{lineno}: pose line needs 12 floats, got {len(vals)}"
            )
        try:
            m = np.array([float(v) for v in vals]).reshape(3, 4)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        poses.append(PoseSE3(m[:, :3], m[:, 3]))
    return poses


class KittiSource(SequenceSource):
    def __init__(self, seq_dir: Path, poses_path: Path | None, name: str):
        self.seq_dir = Path(seq_dir)
        self.name = name
        times_path = self.seq_dir / "times.txt"
        if not times_path.exists():
            raise ParseError(f"missing {times_path}")
        self._timestamps = np.array(
            [float(line) for line in times_path.read_text().split()]
        )
        self.intrinsics = _parse_kitti_calib(self.seq_dir / "calib.txt")
        self.image_dir = self.seq_dir / "image_2"
        if not self.image_dir.is_dir():
            raise ParseError(f"missing image directory {self.image_dir}")
        self.ground_truth = None
        if poses_path is not None and poses_path.exists():
            poses_cw = _parse_kitti_poses(poses_path)
            n = min(len(poses_cw), len(self._timestamps))
            self.ground_truth = Trajectory(self._timestamps[:n], poses_cw[:n])

    @property
    def timestamps(self):
        return self._timestamps

    def __len__(self):
        return len(self._timestamps)

    def __iter__(self):
        for i, t in enumerate(self._timestamps):
            img = load_png(self.image_dir / f"{i:06d}.png")
            yield SourceFrame(i, float(t), img)


def load_kitti(path, sequence_id: str | int | None = None) -> KittiSource:
    """KITTI odometry loader.

    With `sequence_id`, `path` is the dataset root (sequences/<id>/...,
    poses/<id>.txt). Without it, `path` is a sequence directory and an
    optional poses.txt inside it is used as ground truth.
    """
    path = Path(path)
    if sequence_id is not None:
        sid = f"{int(sequence_id):02d}" if str(sequence_id).isdigit() else str(sequence_id)
        seq_dir = path / "sequences" / sid
        poses = path / "poses" / f"{sid}.txt"
        name = f"kitti{sid}"
    else:
        seq_dir = path
        poses = path / "poses.txt"
        name = path.name or "kitti"
    if not seq_dir.is_dir():
        raise ParseError(f"no such sequence directory: {seq_dir}")
    return KittiSource(seq_dir, poses, name)


def save_kitti_sequence(source: SequenceSource, out_dir) -> Path:
    """Persist a source in the single-directory KITTI layout (round-trip aid)."""
    out = Path(out_dir)
    (out / "image_2").mkdir(parents=True, exist_ok=True)
    k = source.intrinsics
    p_row = f"{k.fx:.12e} 0.000000000000e+00 {k.cx:.12e} 0.000000000000e+00 " \
            f"0.000000000000e+00 {k.fy:.12e} {k.cy:.12e} 0.000000000000e+00 " \
            f"0.000000000000e+00 0.000000000000e+00 1.000000000000e+00 0.000000000000e+00"
    (out / "calib.txt").write_text(
        "".join(f"P{i}: {p_row}\n" for i in range(4))
    )
    times = []
    for frame in source:
        save_png(out / "image_2" / f"{frame.index:06d}.png", frame.image)
        times.append(frame.timestamp)
    (out / "times.txt").write_text("".join(f"{t:.12e}\n" for t in times))
    if source.ground_truth is not None:
        lines = []
        for pose in source.ground_truth.poses:
            m = np.hstack([pose.rotation, pose.translation[:, None]])
            lines.append(" ".join(f"{v:.15e}" for v in m.reshape(-1)))
        (out / "poses.txt").write_text("\n".join(lines) + "\n")
    return out


# --------------------------------------------------------------------------
# TUM RGB-D layout


def _parse_tum_file_list(path: Path) -> list:
    """(timestamp, filename) rows from rgb.txt / depth.txt."""
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'timestamp filename'")
        try:
            entries.append((float(parts[0]), parts[1]))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return entries


class TumSource(SequenceSource):
    def __init__(
        self,
        root: Path,
        pairs: list,
        intrinsics: CameraIntrinsics,
        ground_truth: Trajectory | None,
        dropped_rgb: int,
        name: str,
    ):
        self.root = root
        self._pairs = pairs  # (timestamp, rgb relpath, depth relpath)
        self.intrinsics = intrinsics
        self.ground_truth = ground_truth
        self.dropped_rgb = dropped_rgb
        self.name = name

    @property
    def timestamps(self):
        return np.array([t for t, _, _ in self._pairs])

    def __len__(self):
        return len(self._pairs)

    def __iter__(self):
        for i, (t, rgb_rel, depth_rel) in enumerate(self._pairs):
            img = load_png(self.root / rgb_rel)
            depth = load_depth_png(self.root / depth_rel, TUM_DEPTH_SCALE)
            yield SourceFrame(i, t, img, depth)


def load_tum(
    path,
    intrinsics: CameraIntrinsics | None = None,
    max_dt: float = TUM_ASSOC_MAX_DT,
) -> TumSource:
    """TUM RGB-D loader: associates rgb/depth by nearest timestamp.

    Each file is used at most once and pairs beyond `max_dt` are dropped
    (dropped rgb entries are counted on the returned source). Ground truth
    quaternion poses are camera-to-world and parsed into a Trajectory.
    A calibration.txt with 'fx fy cx cy' overrides the TUM default
    intrinsics; synthetic sequences persist one.
    """
    root = Path(path)
    rgb = _parse_tum_file_list(root / "rgb.txt")
    depth = _parse_tum_file_list(root / "depth.txt")
    pairs_idx = associate_timestamps(
        np.array([t for t, _ in rgb]), np.array([t for t, _ in depth]), max_dt
    )
    pairs = [(rgb[i][0], rgb[i][1], depth[j][1]) for i, j in pairs_idx]
    pairs.sort()
    dropped = len(rgb) - len(pairs)

    if intrinsics is None:
        calib = root / "calibration.txt"
        if calib.exists():
            vals = [float(v) for v in calib.read_text().split()]
            if len(vals) != 4:
                raise ParseError(f"{calib}: expected 'fx fy cx cy'")
            intrinsics = CameraIntrinsics(*vals)
        else:
            intrinsics = TUM_DEFAULT_INTRINSICS

    gt = None
    gt_path = root / "groundtruth.txt"
    if gt_path.exists():
        gt = read_tum_trajectory(gt_path)
    return TumSource(root, pairs, intrinsics, gt, dropped, root.name or "tum")


def save_tum_sequence(source: SequenceSource, out_dir) -> Path:
    """Persist any source in the TUM RGB-D layout (plus calibration.txt)."""
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    rgb_lines = ["# timestamp filename"]
    depth_lines = ["# timestamp filename"]
    for frame in source:
        stamp = f"{frame.timestamp:.6f}"
        rgb_rel = f"rgb/{stamp}.png"
        save_png(out / rgb_rel, frame.image)
        rgb_lines.append(f"{stamp} {rgb_rel}")
        if frame.depth is not None:
            depth_rel = f"depth/{stamp}.png"
            save_depth_png(out / depth_rel, frame.depth, TUM_DEPTH_SCALE)
            depth_lines.append(f"{stamp} {depth_rel}")
    (out / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (out / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    k = source.intrinsics
    (out / "calibration.txt").write_text(f"{k.fx} {k.fy} {k.cx} {k.cy}\n")
    if source.ground_truth is not None:
        write_tum_trajectory(source.ground_truth, out / "groundtruth.txt")
    return out


# --------------------------------------------------------------------------
# Synthetic scenes


@dataclass
class PathSegment:
    """Constant-motion stretch: per-frame camera-frame velocity and yaw rate."""

    frames: int
    velocity: tuple = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("segment must span at least one frame")
        if not abs(self.yaw_rate) < math.pi:
            raise ValueError("|yaw_rate| must be below pi rad/frame")


@dataclass
class SyntheticSceneConfig:
    """Landmark sprite field plus a piecewise-constant camera path."""

    n_landmarks: int = 300
    world_min: tuple = (-8.0, -6.0, 4.0)
    world_max: tuple = (8.0, 6.0, 14.0)
    segments: list = field(default_factory=lambda: [PathSegment(10)])
    width: int = 320
    height: int = 240
    sprite_radius: int = 6
    seed: int = 0
    frame_rate: float = 30.0
    with_depth: bool = True
    background: int = 20
    intrinsics: CameraIntrinsics | None = None

    def __post_init__(self):
        if self.n_landmarks < 1:
            raise ValueError("n_landmarks must be positive")
        if self.sprite_radius < 2:
            raise ValueError("sprite_radius must be >= 2")
        self.segments = [
            s if isinstance(s, PathSegment) else PathSegment(**s) for s in self.segments
        ]
        if self.intrinsics is None:
            f = 0.8 * self.width
            self.intrinsics = CameraIntrinsics(f, f, self.width / 2.0, self.height / 2.0)

    @property
    def n_frames(self) -> int:
        return sum(s.frames for s in self.segments)

    def to_json(self) -> str:
        d = {
            "n_landmarks": self.n_landmarks,
            "world_min": list(self.world_min),
            "world_max": list(self.world_max),
            "segments": [
                {"frames": s.frames, "velocity": list(s.velocity), "yaw_rate": s.yaw_rate}
                for s in self.segments
            ],
            "width": self.width,
            "height": self.height,
            "sprite_radius": self.sprite_radius,
            "seed": self.seed,
            "frame_rate": self.frame_rate,
            "with_depth": self.with_depth,
            "background": self.background,
            "intrinsics": [
                self.intrinsics.fx,
                self.intrinsics.fy,
                self.intrinsics.cx,
                self.intrinsics.cy,
            ],
        }
        return json.dumps(d, indent=2)

    @staticmethod
    def from_json(text: str) -> "SyntheticSceneConfig":
        d = json.loads(text)
        known = {
            "n_landmarks", "world_min", "world_max", "segments", "width", "height",
            "sprite_radius", "seed", "frame_rate", "with_depth", "background",
            "intrinsics",
        }
        for key in d:
            if key not in known:
                raise ValueError(f"unknown scene config field: {key}")
        if "intrinsics" in d and d["intrinsics"] is not None:
            d["intrinsics"] = CameraIntrinsics(*d["intrinsics"])
        return SyntheticSceneConfig(**d)


class SyntheticSource(SequenceSource):
    """In-memory rendered sequence with exact ground truth."""

    def __init__(self, cfg, frames, intrinsics, ground_truth, poses_wc):
        self.config = cfg
        self._frames = frames
        self.intrinsics = intrinsics
        self.ground_truth = ground_truth
        self.poses_wc = poses_wc  # camera-to-world PoseSE3 per frame
        self.name = f"synth-seed{cfg.seed}"

    @property
    def timestamps(self):
        return np.array([f.timestamp for f in self._frames])

    def __len__(self):
        return len(self._frames)

    def __iter__(self):
        return iter(self._frames)


def integrate_path(cfg: SyntheticSceneConfig) -> list:
    """Camera-to-world poses along the piecewise-constant path.

    Frame 0 sits at the identity; each later frame applies its segment's
    camera-frame velocity and a yaw step about the camera's y axis.
    """
    r_wc = np.eye(3)
    c = np.zeros(3)
    poses = [PoseSE3(r_wc, c)]
    steps = []
    for seg in cfg.segments:
        steps.extend([seg] * seg.frames)
    for seg in steps[:-1] if steps else []:
        c = c + r_wc @ np.asarray(seg.velocity, dtype=np.float64)
        r_wc = r_wc @ rotation_from_axis_angle([0.0, 1.0, 0.0], seg.yaw_rate)
        poses.append(PoseSE3(r_wc, c))
    return poses


def synth_generate(cfg: SyntheticSceneConfig) -> SyntheticSource:
    """Render a sprite-field sequence with exact ground truth.

    Landmarks are drawn uniformly in the world box and each carries a
    seeded binary pattern splatted with Gaussian falloff at its projected
    position (view-independent, constant pixel size). Depth maps record
    the nearest landmark's camera depth. Any landmark falling behind the
    camera at any frame aborts generation, naming the frame.
    """
    rng = np.random.default_rng(cfg.seed)
    lo = np.asarray(cfg.world_min, dtype=np.float64)
    hi = np.asarray(cfg.world_max, dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError("world_max must exceed world_min componentwise")
    landmarks = rng.uniform(lo, hi, size=(cfg.n_landmarks, 3))
    pat_size = 2 * cfg.sprite_radius + 3
    patterns = rng.integers(0, 2, size=(cfg.n_landmarks, pat_size, pat_size)).astype(
        np.float64
    )

    poses_wc = integrate_path(cfg)
    k = cfg.intrinsics
    h, w, r = cfg.height, cfg.width, cfg.sprite_radius
    sigma = r / 2.0
    frames = []
    for idx, pose_wc in enumerate(poses_wc):
        pose_cw = inverse(pose_wc)
        cam = landmarks @ pose_cw.rotation.T + pose_cw.translation
        z = cam[:, 2]
        if np.any(z <= 1e-3):
            bad = int(np.argmin(z))
            raise GenerationError(
                f"landmark {bad} behind the camera at frame {idx} (z={z[bad]:.4f})"
            )
        u = k.fx * cam[:, 0] / z + k.cx
        v = k.fy * cam[:, 1] / z + k.cy
        img = np.full((h, w), float(cfg.background))
        depth = np.zeros((h, w)) if cfg.with_depth else None
        for li in range(cfg.n_landmarks):
            x0 = int(math.floor(u[li])) - r - 1
            y0 = int(math.floor(v[li])) - r - 1
            x1 = x0 + 2 * (r + 1) + 1
            y1 = y0 + 2 * (r + 1) + 1
            if x1 <= 0 or y1 <= 0 or x0 >= w or y0 >= h:
                continue
            xa, xb = max(x0, 0), min(x1, w)
            ya, yb = max(y0, 0), min(y1, h)
            ys, xs = np.mgrid[ya:yb, xa:xb]
            dx = xs - u[li]
            dy = ys - v[li]
            falloff = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
            # Bilinear lookup into the landmark's binary pattern.
            px = np.clip(dx + r + 1, 0, pat_size - 1.001)
            py = np.clip(dy + r + 1, 0, pat_size - 1.001)
            ix = px.astype(np.intp)
            iy = py.astype(np.intp)
            fx = px - ix
            fy = py - iy
            p = patterns[li]
            val = (
                p[iy, ix] * (1 - fx) * (1 - fy)
                + p[iy, ix + 1] * fx * (1 - fy)
                + p[iy + 1, ix] * (1 - fx) * fy
                + p[iy + 1, ix + 1] * fx * fy
            )
            contrib = 215.0 * falloff * val
            img[ya:yb, xa:xb] += contrib
            if depth is not None:
                mask = falloff * val > 0.05
                cell = depth[ya:yb, xa:xb]
                take = mask & ((cell == 0) | (z[li] < cell))
                cell[take] = z[li]
        frame_img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        frames.append(
            SourceFrame(idx, idx / cfg.frame_rate, frame_img, depth)
        )
    timestamps = np.array([f.timestamp for f in frames])
    gt = Trajectory(timestamps, list(poses_wc))
    return SyntheticSource(cfg, frames, k, gt, poses_wc)
