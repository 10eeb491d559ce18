"""Tracking orchestrator: initialization, frame-to-map tracking with a
constant-velocity motion model, rotation gating, mid-frame insertion, and
lost-track handling.

Interpolated frames are first-class: they get features and a pose like any
other frame, but they are excluded from rotation detection, never trigger
another insertion, and never enter the evaluation trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    AmbiguousDecompositionError,
    BackendUnavailableError,
    InitializationFailure,
)
from .estimation import (
    CameraIntrinsics,
    Landmark,
    decompose_essential,
    estimate_essential,
    optimize_pose,
    pose_fraction,
    project_points,
    triangulate_points,
)
from .evaluation import Trajectory, trajectory_from_world_to_camera, write_tum_trajectory
from .features import (
    FeatureConfig,
    extract_features,
    filter_orientation_consistent,
    match_descriptors,
    match_within_radius,
)
from .geometry import PoseSE3, compose, inverse, relative_pose
from .imaging import to_grayscale
from .interp import BlendBackend
from .rotation_gate import GateConfig, InterpolationMode, RotationGate


class FrameOrigin(Enum):
    REAL = "real"
    INTERPOLATED = "interp"


class TrackingState(Enum):
    NOT_INITIALIZED = "not_initialized"
    TRACKING = "tracking"
    LOST = "lost"


@dataclass
class Frame:
    """One processed frame; `frame_id` counts frames in processing order."""

    frame_id: int
    timestamp: float
    image: np.ndarray
    depth: np.ndarray | None = None
    origin: FrameOrigin = FrameOrigin.REAL
    source_index: int | None = None
    keypoints: list = field(default_factory=list)
    descriptors: np.ndarray | None = None
    pose: PoseSE3 | None = None

    @property
    def positions(self) -> np.ndarray:
        if not self.keypoints:
            return np.zeros((0, 2))
        return np.array([[k.x, k.y] for k in self.keypoints])


class LocalMap:
    """Sliding landmark store over the last few real frames."""

    def __init__(self):
        self.positions = np.zeros((0, 3))
        self.descriptors = np.zeros((0, 32), dtype=np.uint8)
        self.observations = np.zeros(0, dtype=np.int64)
        self.last_seen = np.zeros(0, dtype=np.int64)  # real-frame ordinal
        self.created = np.zeros(0, dtype=np.int64)
        self.orientations = np.zeros(0)  # creating keypoint's orientation

    def __len__(self):
        return len(self.positions)

    def add(self, positions, descriptors, orientations, real_ordinal: int):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        descriptors = np.asarray(descriptors, dtype=np.uint8).reshape(-1, 32)
        orientations = np.asarray(orientations, dtype=np.float64).reshape(-1)
        self.positions = np.vstack([self.positions, positions])
        self.descriptors = np.vstack([self.descriptors, descriptors])
        self.orientations = np.concatenate([self.orientations, orientations])
        self.observations = np.concatenate(
            [self.observations, np.ones(len(positions), dtype=np.int64)]
        )
        self.last_seen = np.concatenate(
            [self.last_seen, np.full(len(positions), real_ordinal, dtype=np.int64)]
        )
        self.created = np.concatenate(
            [self.created, np.full(len(positions), real_ordinal, dtype=np.int64)]
        )

    def touch(self, indices, real_ordinal: int):
        self.observations[indices] += 1
        self.last_seen[indices] = real_ordinal

    def prune(self, real_ordinal: int, window: int):
        keep = self.last_seen >= real_ordinal - window
        self.positions = self.positions[keep]
        self.descriptors = self.descriptors[keep]
        self.observations = self.observations[keep]
        self.last_seen = self.last_seen[keep]
        self.created = self.created[keep]
        self.orientations = self.orientations[keep]

    def landmarks(self) -> list:
        return [
            Landmark(self.positions[i], self.descriptors[i], int(self.observations[i]))
            for i in range(len(self))
        ]


@dataclass
class GateEvent:
    frame_id: int
    theta: float  # nan before a reference real frame exists
    decision: bool
    inserted_frame_id: int | None = None


@dataclass
class MatchRecord:
    frame_id: int
    origin: str
    matches: int
    inliers: int


@dataclass
class RunReport:
    trajectory: Trajectory  # real frames only, camera-to-world
    interpolated_trajectory: Trajectory
    match_records: list
    gate_events: list
    inserted_count: int
    final_state: TrackingState
    frames_processed: int

    def write_trajectory(self, path) -> None:
        write_tum_trajectory(self.trajectory, path)

    def write_gate_log(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame_id", "theta", "decision", "inserted_frame_id"])
            for ev in self.gate_events:
                writer.writerow(
                    [
                        ev.frame_id,
                        repr(ev.theta),
                        int(ev.decision),
                        "" if ev.inserted_frame_id is None else ev.inserted_frame_id,
                    ]
                )

    def write_match_log(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame_id", "source", "matches", "inliers"])
            for rec in self.match_records:
                writer.writerow([rec.frame_id, rec.origin, rec.matches, rec.inliers])


@dataclass
class PipelineConfig:
    sensor_mode: str = "mono"  # "mono" | "rgbd"
    gate: GateConfig = field(default_factory=GateConfig)
    backend: object | None = None  # duck-typed .midframe(a, b)
    backend_fallback: str = "blend"  # "blend" | "abort"
    features: FeatureConfig = field(default_factory=FeatureConfig)
    search_radius: float = 15.0
    hamming_gate: int = 64
    min_track_inliers: int = 15
    init_min_features: int = 100
    init_min_inliers: int = 50
    init_min_points: int = 50
    init_target_depth: float = 4.0
    ransac_iterations: int = 200
    ransac_threshold: float = 1e-3
    triangulate_every: int = 5
    map_window: int = 7
    min_depth: float = 0.1
    max_depth: float = 10.0
    max_new_landmarks: int = 250  # per-frame cap on map growth
    seed: int = 0

    def __post_init__(self):
        if self.sensor_mode not in ("mono", "rgbd"):
            raise ValueError(f"unknown sensor mode {self.sensor_mode!r}")
        if self.backend_fallback not in ("blend", "abort"):
            raise ValueError("backend_fallback must be 'blend' or 'abort'")


def initialize_monocular(
    frame_a: Frame, frame_b: Frame, k: CameraIntrinsics, cfg: PipelineConfig
):
    """Essential-matrix bootstrap from two frames.

    Returns (pose_b, map positions, map descriptors) with frame_a fixed at
    the identity and the map's median depth normalized to the configured
    scale, or None when this pair cannot initialize yet.
    """
    if len(frame_a.keypoints) < cfg.init_min_features:
        return None
    if len(frame_b.keypoints) < cfg.init_min_features:
        return None
    matches = match_descriptors(frame_a.descriptors, frame_b.descriptors)
    if len(matches) < max(8, cfg.init_min_inliers):
        return None
    pa = frame_a.positions[[m.index_a for m in matches]]
    pb = frame_b.positions[[m.index_b for m in matches]]
    xa = k.normalize(pa)
    xb = k.normalize(pb)
    seed = cfg.seed + 7919 * (frame_b.source_index or 0)
    try:
        e, mask = estimate_essential(
            xa, xb, cfg.ransac_iterations, cfg.ransac_threshold, seed=seed
        )
    except InitializationFailure:
        return None
    if mask.sum() < cfg.init_min_inliers:
        return None
    try:
        pose_b = decompose_essential(e, xa[mask], xb[mask])
    except AmbiguousDecompositionError:
        return None

    identity = PoseSE3.identity()
    k_norm = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
    pts, ok = triangulate_points(identity, pose_b, xa[mask], xb[mask], k_norm)
    if ok.sum() < cfg.init_min_points:
        return None
    pts = pts[ok]
    px_a, _ = project_points(k, identity, pts)
    px_b, _ = project_points(k, pose_b, pts)
    good = (np.linalg.norm(px_a - pa[mask][ok], axis=1) < 1.0) & (
        np.linalg.norm(px_b - pb[mask][ok], axis=1) < 1.0
    )
    if good.sum() < cfg.init_min_points:
        return None
    pts = pts[good]
    median = float(np.median(pts[:, 2]))
    if median <= 0:
        return None
    scale = cfg.init_target_depth / median
    pts = pts * scale
    pose_b = PoseSE3(pose_b.rotation, pose_b.translation * scale)
    sel_b = np.array([m.index_b for m in matches])[mask][ok][good]
    desc = frame_b.descriptors[sel_b]
    thetas = np.array([frame_b.keypoints[i].orientation for i in sel_b])
    return pose_b, pts, desc, thetas


def initialize_rgbd(frame: Frame, k: CameraIntrinsics, cfg: PipelineConfig):
    """Backproject keypoints with valid depth; the first pose is the identity.

    Returns (map positions, map descriptors); raises InitializationFailure
    below the 50-point floor.
    """
    if frame.depth is None:
        raise InitializationFailure("rgbd initialization needs a depth map")
    pos, desc, thetas = backproject_keypoints(frame, PoseSE3.identity(), k, cfg)
    if len(pos) < 50:
        raise InitializationFailure(
            f"only {len(pos)} keypoints with valid depth (need 50)"
        )
    return pos, desc, thetas


def backproject_keypoints(
    frame: Frame, pose_cw: PoseSE3, k: CameraIntrinsics, cfg, subset=None
):
    """Keypoints with valid depth lifted to world points via the given pose."""
    if subset is None:
        kps = frame.keypoints
        desc_all = frame.descriptors
    else:
        kps = [frame.keypoints[i] for i in subset]
        desc_all = frame.descriptors[list(subset)] if len(subset) else frame.descriptors[:0]
    if not kps or frame.depth is None:
        return np.zeros((0, 3)), np.zeros((0, 32), dtype=np.uint8), np.zeros(0)
    h, w = frame.depth.shape
    fx = np.array([kp.x for kp in kps])
    fy = np.array([kp.y for kp in kps])
    xs = np.clip(np.rint(fx).astype(int), 0, w - 1)
    ys = np.clip(np.rint(fy).astype(int), 0, h - 1)
    d = frame.depth[ys, xs]
    ok = (d > cfg.min_depth) & (d < cfg.max_depth)
    # depth from the nearest pixel, ray through the subpixel keypoint
    xn = (fx[ok] - k.cx) / k.fx
    yn = (fy[ok] - k.cy) / k.fy
    cam = np.stack([xn * d[ok], yn * d[ok], d[ok]], axis=1)
    pose_wc = inverse(pose_cw)
    world = cam @ pose_wc.rotation.T + pose_wc.translation
    thetas = np.array([kp.orientation for kp in kps])[ok]
    return world, desc_all[ok], thetas


@dataclass
class TrackResult:
    pose: PoseSE3
    matches: int
    inliers: int
    matched_map_indices: np.ndarray  # into the local map
    matched_kp_indices: np.ndarray  # into the frame's keypoints
    inlier_mask: np.ndarray


def track_frame(
    frame: Frame,
    local_map: LocalMap,
    velocity: PoseSE3,
    last_pose: PoseSE3,
    k: CameraIntrinsics,
    cfg: PipelineConfig,
) -> TrackResult | None:
    """Constant-velocity prediction, windowed map matching, pose refinement.

    Returns None (caller transitions to Lost) when matches or optimizer
    inliers fall below the configured floors.
    """
    predicted = compose(velocity, last_pose)
    if len(local_map) == 0 or not frame.keypoints:
        return None
    px, z = project_points(k, predicted, local_map.positions)
    h, w = frame.image.shape[:2]
    visible = (
        (z > 1e-6)
        & np.isfinite(px).all(axis=1)
        & (px[:, 0] >= 0)
        & (px[:, 0] < w)
        & (px[:, 1] >= 0)
        & (px[:, 1] < h)
    )
    vis_idx = np.flatnonzero(visible)
    if len(vis_idx) == 0:
        return None
    matches = match_within_radius(
        px[vis_idx],
        local_map.descriptors[vis_idx],
        frame.positions,
        frame.descriptors,
        radius=cfg.search_radius,
        max_distance=cfg.hamming_gate,
        ratio=None,
    )
    # Aliased matches (another corner of the same structure) disagree on
    # orientation change; majority voting removes them.
    matches = filter_orientation_consistent(
        matches,
        local_map.orientations[vis_idx],
        np.array([kp.orientation for kp in frame.keypoints]),
    )
    if len(matches) < 4:
        return None
    map_idx = vis_idx[[m.index_a for m in matches]]
    kp_idx = np.array([m.index_b for m in matches], dtype=np.int64)
    result = optimize_pose(
        local_map.positions[map_idx], frame.positions[kp_idx], k, predicted
    )
    inliers = int(result.inliers.sum())
    if inliers < cfg.min_track_inliers:
        return None
    return TrackResult(
        result.pose, len(matches), inliers, map_idx, kp_idx, result.inliers
    )


class _PeekStream:
    """One-frame lookahead over a frame iterator."""

    def __init__(self, it):
        self._it = iter(it)
        self._peeked = None
        self._done = False

    def peek(self):
        if self._peeked is None and not self._done:
            try:
                self._peeked = next(self._it)
            except StopIteration:
                self._done = True
        return self._peeked

    def next(self):
        frame = self.peek()
        if frame is None:
            raise StopIteration
        self._peeked = None
        return frame


def _triangulate_new_landmarks(frame, ref, unmatched, local_map, k, cfg, real_ordinal):
    """Triangulate unmatched current keypoints against an older real frame."""
    if ref.pose is None or not unmatched:
        return
    sub_desc = frame.descriptors[unmatched]
    pair_matches = match_descriptors(sub_desc, ref.descriptors)
    pair_matches = filter_orientation_consistent(
        pair_matches,
        np.array([frame.keypoints[i].orientation for i in unmatched]),
        np.array([kp.orientation for kp in ref.keypoints]),
    )
    if not pair_matches:
        return
    cur_idx = np.array([unmatched[m.index_a] for m in pair_matches], dtype=np.int64)
    ref_idx = [m.index_b for m in pair_matches]
    obs_cur = frame.positions[cur_idx]
    obs_ref = ref.positions[ref_idx]
    pts, ok = triangulate_points(ref.pose, frame.pose, obs_ref, obs_cur, k)
    if not ok.any():
        return
    pts = pts[ok]
    # Keep well-conditioned points: decent parallax, bounded reprojection.
    ca = -ref.pose.rotation.T @ ref.pose.translation
    cb = -frame.pose.rotation.T @ frame.pose.translation
    ra = pts - ca
    rb = pts - cb
    cosang = (ra * rb).sum(axis=1) / (
        np.linalg.norm(ra, axis=1) * np.linalg.norm(rb, axis=1) + 1e-12
    )
    parallax_ok = cosang < np.cos(np.deg2rad(0.5))
    px_r, _ = project_points(k, ref.pose, pts)
    px_c, _ = project_points(k, frame.pose, pts)
    reproj_ok = (np.linalg.norm(px_r - obs_ref[ok], axis=1) < 1.0) & (
        np.linalg.norm(px_c - obs_cur[ok], axis=1) < 1.0
    )
    keep = parallax_ok & reproj_ok
    if keep.any():
        sel = np.flatnonzero(keep)[: cfg.max_new_landmarks]
        kept_idx = cur_idx[ok][sel]
        local_map.add(
            pts[sel],
            frame.descriptors[kept_idx],
            [frame.keypoints[i].orientation for i in kept_idx],
            real_ordinal,
        )


def run_sequence(source, cfg: PipelineConfig) -> RunReport:
    """Track a whole sequence, inserting mid-frames when the gate fires.

    Real frames' poses form the output trajectory; interpolated frames are
    tracked identically but reported separately. Lost is terminal: the run
    stops there and the report carries everything tracked so far.
    """
    k = source.intrinsics
    gate = RotationGate(cfg.gate)
    backend = cfg.backend
    if backend is None and cfg.gate.mode is not InterpolationMode.OFF:
        backend = BlendBackend()

    state = TrackingState.NOT_INITIALIZED
    local_map = LocalMap()
    # Constant-velocity model over consecutive REAL frames. Predictions
    # across an inserted frame use the twist-halved step: extrapolating
    # through the synthesized frame's own pose estimate feeds its bias
    # back with gain above one and diverges (see decisions ledger).
    velocity = PoseSE3.identity()
    last_real: Frame | None = None
    last_frame: Frame | None = None
    init_anchor: Frame | None = None
    real_poses: list = []  # (timestamp, world-to-camera pose)
    interp_poses: list = []
    recent_real: list = []  # recent real Frames, oldest first
    gate_events: list = []
    match_records: list = []
    inserted = 0
    real_ordinal = 0
    next_id = 0
    frames_processed = 0

    stream = _PeekStream(source)
    pending: list = []  # interpolated frames to process before the next real one

    def make_frame(raw) -> Frame:
        nonlocal next_id
        gray = to_grayscale(raw.image) if raw.image.ndim == 3 else raw.image
        f = Frame(
            frame_id=next_id,
            timestamp=raw.timestamp,
            image=raw.image,
            depth=raw.depth,
            origin=FrameOrigin.REAL,
            source_index=raw.index,
        )
        next_id += 1
        f.keypoints, f.descriptors = extract_features(gray, cfg.features)
        return f

    def make_interp_frame(img, timestamp) -> Frame:
        nonlocal next_id
        gray = to_grayscale(img) if img.ndim == 3 else img
        f = Frame(
            frame_id=next_id,
            timestamp=timestamp,
            image=img,
            origin=FrameOrigin.INTERPOLATED,
        )
        next_id += 1
        f.keypoints, f.descriptors = extract_features(gray, cfg.features)
        return f

    def observe_gate(frame: Frame):
        """Rotation detection for this frame; synthesize on a positive gate."""
        nonlocal inserted
        is_interp = frame.origin is FrameOrigin.INTERPOLATED
        measurement, decision = gate.observe(frame.frame_id, frame.pose, is_interp)
        theta = measurement.theta if measurement is not None else float("nan")
        upcoming = stream.peek()
        if upcoming is None:
            decision = False  # nothing to interpolate toward
        event = GateEvent(frame.frame_id, theta, decision)
        gate_events.append(event)
        if not decision:
            return
        try:
            mid = backend.midframe(frame.image, upcoming.image)
        except BackendUnavailableError:
            if cfg.backend_fallback == "abort":
                raise
            mid = BlendBackend().midframe(frame.image, upcoming.image)
        mid_frame = make_interp_frame(mid, 0.5 * (frame.timestamp + upcoming.timestamp))
        event.inserted_frame_id = mid_frame.frame_id
        inserted += 1
        pending.append(mid_frame)

    def record_pose(frame: Frame):
        if frame.origin is FrameOrigin.REAL:
            real_poses.append((frame.timestamp, frame.pose))
        else:
            interp_poses.append((frame.timestamp, frame.pose))

    def remember_real(frame: Frame):
        recent_real.append(frame)
        while len(recent_real) > cfg.map_window:
            recent_real.pop(0)

    def maintain_map(frame: Frame, track: TrackResult):
        nonlocal real_ordinal
        if frame.origin is not FrameOrigin.REAL:
            return
        real_ordinal += 1
        # All matched landmarks stay alive (the robust loss already
        # downweights the bad ones); pruning runs on staleness only.
        local_map.touch(track.matched_map_indices, real_ordinal)
        matched = set(int(i) for i in track.matched_kp_indices)
        unmatched = [i for i in range(len(frame.keypoints)) if i not in matched]
        if cfg.sensor_mode == "rgbd" and frame.depth is not None:
            order = sorted(unmatched, key=lambda i: -frame.keypoints[i].score)
            subset = order[: cfg.max_new_landmarks]
            pos, desc, thetas = backproject_keypoints(
                frame, frame.pose, k, cfg, subset=subset
            )
            if len(pos):
                local_map.add(pos, desc, thetas, real_ordinal)
        elif (
            cfg.sensor_mode == "mono"
            and real_ordinal % cfg.triangulate_every == 0
            and recent_real
        ):
            _triangulate_new_landmarks(
                frame, recent_real[0], unmatched, local_map, k, cfg, real_ordinal
            )
        remember_real(frame)
        local_map.prune(real_ordinal, cfg.map_window)

    while True:
        if pending:
            frame = pending.pop(0)
        else:
            try:
                frame = make_frame(stream.next())
            except StopIteration:
                break
        frames_processed += 1

        if state is TrackingState.NOT_INITIALIZED:
            if cfg.sensor_mode == "rgbd":
                try:
                    pos, desc, thetas = initialize_rgbd(frame, k, cfg)
                except InitializationFailure:
                    continue
                frame.pose = PoseSE3.identity()
                local_map.add(pos, desc, thetas, real_ordinal)
                state = TrackingState.TRACKING
                last_frame = frame
                last_real = frame
                remember_real(frame)
                record_pose(frame)
                match_records.append(
                    MatchRecord(frame.frame_id, frame.origin.value, len(pos), len(pos))
                )
                observe_gate(frame)
            else:
                if init_anchor is None:
                    init_anchor = frame
                    continue
                got = initialize_monocular(init_anchor, frame, k, cfg)
                if got is None:
                    init_anchor = frame  # slide the window
                    continue
                pose_b, pts, desc, thetas = got
                init_anchor.pose = PoseSE3.identity()
                frame.pose = pose_b
                local_map.add(pts, desc, thetas, real_ordinal)
                state = TrackingState.TRACKING
                velocity = relative_pose(init_anchor.pose, frame.pose)
                record_pose(init_anchor)
                record_pose(frame)
                for f, n in ((init_anchor, len(pts)), (frame, len(pts))):
                    match_records.append(
                        MatchRecord(f.frame_id, f.origin.value, n, n)
                    )
                remember_real(init_anchor)
                remember_real(frame)
                last_frame = frame
                last_real = frame
                # Seed the gate with the anchor (no decision point: its
                # successor was consumed by initialization), then run a
                # real decision for the second frame.
                gate.observe(init_anchor.frame_id, init_anchor.pose, False)
                observe_gate(frame)
            continue

        half_step = (
            frame.origin is FrameOrigin.INTERPOLATED
            or last_frame.origin is FrameOrigin.INTERPOLATED
        )
        step = pose_fraction(velocity, 0.5) if half_step else velocity
        track = track_frame(frame, local_map, step, last_frame.pose, k, cfg)
        if track is None:
            state = TrackingState.LOST
            match_records.append(MatchRecord(frame.frame_id, frame.origin.value, 0, 0))
            break
        frame.pose = track.pose
        match_records.append(
            MatchRecord(frame.frame_id, frame.origin.value, track.matches, track.inliers)
        )
        if frame.origin is FrameOrigin.REAL:
            velocity = relative_pose(last_real.pose, frame.pose)
            last_real = frame
        last_frame = frame
        record_pose(frame)
        maintain_map(frame, track)
        observe_gate(frame)

    trajectory = trajectory_from_world_to_camera(
        [t for t, _ in real_poses], [p for _, p in real_poses]
    )
    interp_traj = trajectory_from_world_to_camera(
        [t for t, _ in interp_poses], [p for _, p in interp_poses]
    )
    return RunReport(
        trajectory=trajectory,
        interpolated_trajectory=interp_traj,
        match_records=match_records,
        gate_events=gate_events,
        inserted_count=inserted,
        final_state=state,
        frames_processed=frames_processed,
    )
