import numpy as np
import pytest

from spinvo.datasets import PathSegment, SyntheticSceneConfig, synth_generate
from spinvo.errors import BackendUnavailableError, InitializationFailure
from spinvo.estimation import CameraIntrinsics, project_points
from spinvo.features import Keypoint
from spinvo.geometry import PoseSE3, compose, inverse, rotation_from_axis_angle
from spinvo.interp import BlendBackend, FlowBackend
from spinvo.pipeline import (
    Frame,
    FrameOrigin,
    PipelineConfig,
    TrackingState,
    initialize_monocular,
    initialize_rgbd,
    run_sequence,
)
from spinvo.rotation_gate import GateConfig, InterpolationMode, RotationMeasurement, gate_decision

K = CameraIntrinsics(256.0, 256.0, 160.0, 120.0)


def synthetic_frame(points_world, pose, frame_id=0, depth_map=None, rng=None,
                    descriptors=None, size=(240, 320)):
    """Frame with keypoints planted at exact projections (no detector noise)."""
    px, z = project_points(K, pose, points_world)
    kps = [Keypoint(float(u), float(v), 0, 0.0, 100.0) for u, v in px]
    if descriptors is None:
        descriptors = rng.integers(0, 256, size=(len(kps), 32)).astype(np.uint8)
    return (
        Frame(
            frame_id=frame_id,
            timestamp=float(frame_id) / 30.0,
            image=np.zeros(size, dtype=np.uint8),
            depth=depth_map,
            origin=FrameOrigin.REAL,
            source_index=frame_id,
            keypoints=kps,
            descriptors=descriptors,
        ),
        px,
        z,
    )


def scene_config(seed=0, segments=None, **kw):
    kw.setdefault("n_landmarks", 260)
    kw.setdefault("world_min", (-7.0, -5.0, 4.5))
    kw.setdefault("world_max", (7.0, 5.0, 14.0))
    kw.setdefault("width", 320)
    kw.setdefault("height", 240)
    kw.setdefault("sprite_radius", 5)
    return SyntheticSceneConfig(
        seed=seed, segments=segments or [PathSegment(8)], **kw
    )


class TestInitializeMonocular:
    def make_pair(self, rng, n=300, baseline=(1.0, 0.0, 0.1), angle=0.06):
        pts = np.column_stack(
            [rng.uniform(-4, 4, n), rng.uniform(-3, 3, n), rng.uniform(8, 16, n)]
        )
        pose_a = PoseSE3.identity()
        axis = rng.normal(size=3)
        pose_b = PoseSE3(
            rotation_from_axis_angle(axis, angle), np.asarray(baseline, dtype=float)
        )
        desc = rng.integers(0, 256, size=(n, 32)).astype(np.uint8)
        fa, _, _ = synthetic_frame(pts, pose_a, 0, rng=rng, descriptors=desc)
        fb, _, _ = synthetic_frame(pts, pose_b, 1, rng=rng, descriptors=desc)
        return fa, fb, pose_b, pts

    def test_exact_pair_recovers_translation_direction(self, rng):
        fa, fb, pose_b, pts = self.make_pair(rng)
        cfg = PipelineConfig(sensor_mode="mono")
        got = initialize_monocular(fa, fb, K, cfg)
        assert got is not None
        pose_est, map_pts, desc, thetas = got
        t_true = pose_b.translation / np.linalg.norm(pose_b.translation)
        t_est = pose_est.translation / np.linalg.norm(pose_est.translation)
        assert np.abs(t_est - t_true).max() < 1e-3
        assert np.abs(pose_est.rotation - pose_b.rotation).max() < 1e-3
        # scale convention: median depth of the new map at the target
        assert abs(np.median(map_pts[:, 2]) - cfg.init_target_depth) < 1e-6
        # map reprojects into both views under the estimated geometry
        px_a, _ = project_points(K, PoseSE3.identity(), map_pts)
        for u, v in px_a:
            assert 0 <= u < 320 and 0 <= v < 240

    def test_identical_frames_not_yet(self, rng):
        pts = np.column_stack(
            [rng.uniform(-4, 4, 300), rng.uniform(-3, 3, 300), rng.uniform(8, 16, 300)]
        )
        desc = rng.integers(0, 256, size=(300, 32)).astype(np.uint8)
        fa, _, _ = synthetic_frame(pts, PoseSE3.identity(), 0, rng=rng, descriptors=desc)
        fb, _, _ = synthetic_frame(pts, PoseSE3.identity(), 1, rng=rng, descriptors=desc)
        assert initialize_monocular(fa, fb, K, PipelineConfig(sensor_mode="mono")) is None

    def test_too_few_features_not_yet(self, rng):
        fa, fb, _, _ = self.make_pair(rng, n=40)
        assert initialize_monocular(fa, fb, K, PipelineConfig(sensor_mode="mono")) is None


class TestInitializeRgbd:
    def make_frame(self, rng, n=120, h=240, w=320):
        pts_cam = np.column_stack(
            [rng.uniform(-2, 2, n), rng.uniform(-1.5, 1.5, n), rng.uniform(1.0, 8.0, n)]
        )
        frame, px, z = synthetic_frame(pts_cam, PoseSE3.identity(), 0, rng=rng)
        depth = np.zeros((h, w))
        xi = np.clip(np.rint(px[:, 0]).astype(int), 0, w - 1)
        yi = np.clip(np.rint(px[:, 1]).astype(int), 0, h - 1)
        depth[yi, xi] = z
        frame.depth = depth
        return frame, pts_cam

    def test_backprojection_matches_analytic(self, rng):
        frame, pts_cam = self.make_frame(rng)
        pos, desc, thetas = initialize_rgbd(frame, K, PipelineConfig(sensor_mode="rgbd"))
        assert len(pos) >= 50
        # each backprojected point sits near a planted camera point: the ray
        # uses the subpixel keypoint, the depth the nearest pixel
        d = np.linalg.norm(pos[:, None, :] - pts_cam[None, :, :], axis=2).min(axis=1)
        assert np.median(d) < 0.05

    def test_analytic_exact_when_keypoints_integer(self, rng):
        # integer keypoint positions make the lookup and the ray coincide
        n = 80
        ui = rng.integers(20, 300, n)
        vi = rng.integers(20, 220, n)
        z = rng.uniform(1.0, 8.0, n)
        pts = np.column_stack([(ui - K.cx) / K.fx * z, (vi - K.cy) / K.fy * z, z])
        frame, px, zz = synthetic_frame(pts, PoseSE3.identity(), 0, rng=rng)
        depth = np.zeros((240, 320))
        depth[vi, ui] = z
        frame.depth = depth
        pos, _, _ = initialize_rgbd(frame, K, PipelineConfig(sensor_mode="rgbd"))
        d = np.linalg.norm(pos[:, None, :] - pts[None, :, :], axis=2).min(axis=1)
        assert d.max() < 1e-6

    def test_all_zero_depth_fails(self, rng):
        frame, _ = self.make_frame(rng)
        frame.depth = np.zeros_like(frame.depth)
        with pytest.raises(InitializationFailure):
            initialize_rgbd(frame, K, PipelineConfig(sensor_mode="rgbd"))

    def test_exactly_fifty_valid_succeeds(self, rng):
        frame, pts = self.make_frame(rng, n=50)
        pos, _, _ = initialize_rgbd(frame, K, PipelineConfig(sensor_mode="rgbd"))
        assert len(pos) == 50


def run(source, mode="off", sensor="rgbd", backend=None, seed=0, **kw):
    cfg = PipelineConfig(
        sensor_mode=sensor,
        gate=GateConfig(beta=0.03, mode=mode),
        backend=backend,
        seed=seed,
        **kw,
    )
    return run_sequence(source, cfg)


class TestRunSequence:
    def test_static_rgbd_identity_relatives(self):
        src = synth_generate(scene_config(seed=0))
        rep = run(src, "off", "rgbd")
        assert rep.final_state is TrackingState.TRACKING
        assert rep.inserted_count == 0
        assert len(rep.trajectory) == len(src)
        for a, b in zip(rep.trajectory.poses, rep.trajectory.poses[1:]):
            rel = compose(inverse(a), b)
            assert np.abs(rel.rotation - np.eye(3)).max() < 1e-4
            assert np.abs(rel.translation).max() < 1e-4

    def test_off_mode_zero_inserted(self):
        src = synth_generate(
            scene_config(seed=1, segments=[PathSegment(10, yaw_rate=0.05)],
                         world_min=(-4.0, -5.0, 4.5), world_max=(9.0, 5.0, 14.0))
        )
        rep = run(src, "off", "rgbd")
        assert rep.inserted_count == 0
        assert all(not ev.decision for ev in rep.gate_events)

    def test_gated_pure_translation_no_insertion(self):
        src = synth_generate(
            scene_config(seed=2, segments=[PathSegment(10, velocity=(0.03, 0.0, 0.05))])
        )
        rep = run(src, "gated", "rgbd", backend=BlendBackend())
        assert rep.final_state is TrackingState.TRACKING
        assert rep.inserted_count == 0

    def test_gated_fast_yaw_inserts_with_theta_above_beta(self):
        src = synth_generate(
            scene_config(
                seed=3,
                segments=[PathSegment(4), PathSegment(6, yaw_rate=0.05), PathSegment(3)],
                world_min=(-4.0, -5.0, 4.5),
                world_max=(9.0, 5.0, 14.0),
            )
        )
        rep = run(src, "gated", "rgbd", backend=FlowBackend())
        assert rep.final_state is TrackingState.TRACKING
        assert rep.inserted_count >= 1
        for ev in rep.gate_events:
            if ev.inserted_frame_id is not None:
                assert ev.theta > 0.03

    def test_gate_log_replay_reproduces_insertions(self):
        src = synth_generate(
            scene_config(
                seed=4,
                segments=[PathSegment(4), PathSegment(6, yaw_rate=0.05), PathSegment(3)],
                world_min=(-4.0, -5.0, 4.5),
                world_max=(9.0, 5.0, 14.0),
            )
        )
        rep = run(src, "gated", "rgbd", backend=FlowBackend())
        origin_of = {m.frame_id: m.origin for m in rep.match_records}
        cfg = GateConfig(beta=0.03, mode=InterpolationMode.GATED)
        inserted = set()
        for ev in rep.gate_events:
            if np.isnan(ev.theta):
                continue
            decision = gate_decision(
                RotationMeasurement(ev.theta, -1, ev.frame_id),
                cfg,
                origin_of[ev.frame_id] == "interp",
            )
            if decision and ev.inserted_frame_id is not None:
                inserted.add(ev.inserted_frame_id)
            assert decision == bool(ev.decision) or ev.inserted_frame_id is None
        actual = {
            ev.inserted_frame_id
            for ev in rep.gate_events
            if ev.inserted_frame_id is not None
        }
        assert inserted == actual

    def test_always_mode_rgbd_inserts_n_minus_one(self):
        src = synth_generate(scene_config(seed=5, segments=[PathSegment(8)]))
        rep = run(src, "always", "rgbd", backend=BlendBackend())
        assert rep.final_state is TrackingState.TRACKING
        assert rep.inserted_count == len(src) - 1

    def test_interpolated_poses_separate_and_timestamps_between_parents(self):
        src = synth_generate(
            scene_config(
                seed=6,
                segments=[PathSegment(4), PathSegment(5, yaw_rate=0.05), PathSegment(2)],
                world_min=(-4.0, -5.0, 4.5),
                world_max=(9.0, 5.0, 14.0),
            )
        )
        rep = run(src, "gated", "rgbd", backend=FlowBackend())
        assert rep.inserted_count >= 1
        assert len(rep.interpolated_trajectory) == rep.inserted_count
        real_ts = set(np.round(rep.trajectory.timestamps, 9))
        src_ts = np.round(src.timestamps, 9)
        assert real_ts <= set(src_ts)
        for t in rep.interpolated_trajectory.timestamps:
            below = src_ts[src_ts < t]
            above = src_ts[src_ts > t]
            assert len(below) and len(above)

    def test_deterministic_report(self, tmp_path):
        src = synth_generate(
            scene_config(seed=7, segments=[PathSegment(3), PathSegment(4, yaw_rate=0.05)],
                         world_min=(-4.0, -5.0, 4.5), world_max=(9.0, 5.0, 14.0))
        )
        outs = []
        for i in range(2):
            rep = run(src, "gated", "rgbd", backend=FlowBackend(), seed=3)
            t1 = tmp_path / f"traj{i}.txt"
            t2 = tmp_path / f"gate{i}.csv"
            t3 = tmp_path / f"match{i}.csv"
            rep.write_trajectory(t1)
            rep.write_gate_log(t2)
            rep.write_match_log(t3)
            outs.append((t1.read_bytes(), t2.read_bytes(), t3.read_bytes()))
        assert outs[0] == outs[1]

    def test_backend_failure_fallback_blend(self):
        class FailingBackend:
            def midframe(self, a, b):
                raise BackendUnavailableError("backend gone")

            def close(self):
                pass

        src = synth_generate(
            scene_config(seed=8, segments=[PathSegment(3), PathSegment(4, yaw_rate=0.05)],
                         world_min=(-4.0, -5.0, 4.5), world_max=(9.0, 5.0, 14.0))
        )
        rep = run(src, "gated", "rgbd", backend=FailingBackend(), backend_fallback="blend")
        assert rep.inserted_count >= 1

    def test_backend_failure_abort(self):
        class FailingBackend:
            def midframe(self, a, b):
                raise BackendUnavailableError("backend gone")

            def close(self):
                pass

        src = synth_generate(
            scene_config(seed=8, segments=[PathSegment(3), PathSegment(4, yaw_rate=0.05)],
                         world_min=(-4.0, -5.0, 4.5), world_max=(9.0, 5.0, 14.0))
        )
        with pytest.raises(BackendUnavailableError):
            run(src, "gated", "rgbd", backend=FailingBackend(), backend_fallback="abort")

    def test_fast_yaw_without_interpolation_loses_track(self):
        # abrupt 0.1 rad/frame yaw: the velocity model is suddenly wrong by
        # ~26 px, beyond the 15 px search window
        src = synth_generate(
            scene_config(
                seed=10,
                n_landmarks=300,
                segments=[PathSegment(5), PathSegment(6, yaw_rate=0.1)],
                world_min=(-3.0, -4.0, 4.5),
                world_max=(9.0, 4.0, 9.5),
            )
        )
        rep = run(src, "off", "rgbd")
        assert rep.final_state is TrackingState.LOST
        assert len(rep.trajectory) < len(src)

    def test_slow_yaw_completes_accurately(self):
        from spinvo.evaluation import ate

        src = synth_generate(
            scene_config(
                seed=11,
                n_landmarks=300,
                segments=[
                    PathSegment(5, velocity=(0.02, 0.0, 0.04)),
                    PathSegment(8, velocity=(0.02, 0.0, 0.04), yaw_rate=0.01),
                ],
                world_min=(-3.0, -4.0, 4.5),
                world_max=(9.0, 4.0, 9.5),
            )
        )
        rep = run(src, "off", "rgbd")
        assert rep.final_state is TrackingState.TRACKING
        res = ate(src.ground_truth, rep.trajectory, with_scale=False)
        assert res.rmse < 0.05

    def test_mono_translation_tracks(self):
        src = synth_generate(
            scene_config(
                seed=9,
                n_landmarks=450,
                world_min=(-8.0, -5.0, 4.5),
                world_max=(8.0, 5.0, 20.0),
                segments=[PathSegment(14, velocity=(0.06, 0.0, 0.05))],
            )
        )
        rep = run(src, "off", "mono")
        assert rep.final_state is TrackingState.TRACKING
        assert len(rep.trajectory) == len(src)
