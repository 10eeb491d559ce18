"""Acceptance suite: one test per criterion, each at its stated tolerance.

Criteria 6 and 7 run whole tracking pipelines over seeded synthetic scenes
and take several minutes; everything else is fast. A pass/fail line per
criterion is printed in the terminal summary (see conftest).
"""

import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from spinvo.cli import main as cli_main
from spinvo.datasets import (
    PathSegment,
    SyntheticSceneConfig,
    load_kitti,
    load_tum,
    save_kitti_sequence,
    save_tum_sequence,
    synth_generate,
)
from spinvo.estimation import (
    CameraIntrinsics,
    apply_twist,
    optimize_pose,
    project,
    project_points,
    reprojection_jacobian,
)
from spinvo.evaluation import Trajectory, ate, umeyama_align
from spinvo.features import FeatureConfig, extract_features, match_within_radius
from spinvo.geometry import (
    PoseSE3,
    relative_pose,
    rotation_angle,
    rotation_from_axis_angle,
)
from spinvo.interp import SeparableKernelField, blend_midframe, flow_midframe, sepconv_synthesize
from spinvo.pipeline import PipelineConfig, TrackingState, run_sequence
from spinvo.rotation_gate import (
    GateConfig,
    InterpolationMode,
    RotationMeasurement,
    gate_decision,
)

from conftest import random_rotation

REPO_ROOT = Path(__file__).resolve().parent.parent
K = CameraIntrinsics(256.0, 256.0, 160.0, 120.0)


# -------------------------------------------------------------------------
# 1. rotation math


def test_criterion_01_rotation_math():
    t0 = time.time()
    rng = np.random.default_rng(101)
    n = 10_000
    axes = rng.normal(size=(n, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(1e-6, np.pi - 1e-6, n)
    mats = Rotation.from_rotvec(axes * angles[:, None]).as_matrix()
    worst = max(abs(rotation_angle(mats[i]) - angles[i]) for i in range(n))
    assert worst < 1e-9, f"rotation_angle worst error {worst}"

    # relative_pose against the batched 4x4 homogeneous oracle
    prev_m = np.tile(np.eye(4), (n, 1, 1))
    curr_m = np.tile(np.eye(4), (n, 1, 1))
    prev_m[:, :3, :3] = Rotation.random(n, random_state=7).as_matrix()
    prev_m[:, :3, 3] = rng.uniform(-5, 5, (n, 3))
    curr_m[:, :3, :3] = Rotation.random(n, random_state=8).as_matrix()
    curr_m[:, :3, 3] = rng.uniform(-5, 5, (n, 3))
    oracle = np.matmul(curr_m, np.linalg.inv(prev_m))
    worst_rel = 0.0
    for i in range(n):
        got = relative_pose(
            PoseSE3.from_matrix(prev_m[i]), PoseSE3.from_matrix(curr_m[i])
        ).matrix()
        worst_rel = max(worst_rel, np.abs(got - oracle[i]).max())
    assert worst_rel < 1e-12, f"relative_pose worst deviation {worst_rel}"
    assert time.time() - t0 < 5.0


# -------------------------------------------------------------------------
# 2. gate semantics


def test_criterion_02_gate_semantics():
    t0 = time.time()
    beta = 0.03
    eps = 1e-9
    thetas = [0.0, beta - eps, beta, beta + eps, np.pi]
    for mode in InterpolationMode:
        cfg = GateConfig(beta=beta, mode=mode)
        for theta in thetas:
            for interp in (False, True):
                got = gate_decision(RotationMeasurement(theta, 0, 1), cfg, interp)
                if mode is InterpolationMode.OFF or interp:
                    expected = False
                elif mode is InterpolationMode.ALWAYS:
                    expected = True
                else:
                    expected = theta > beta  # ties stay false
                assert got == expected, (theta, mode, interp)
    assert time.time() - t0 < 1.0


# -------------------------------------------------------------------------
# 3. motion-only optimizer


def test_criterion_03_optimizer():
    t0 = time.time()
    rng = np.random.default_rng(303)
    for _ in range(100):
        pose = PoseSE3(random_rotation(rng), rng.uniform(-1, 1, 3))
        cam = np.column_stack(
            [rng.uniform(-2, 2, 100), rng.uniform(-1.5, 1.5, 100), rng.uniform(4, 10, 100)]
        )
        world = cam @ pose.rotation + (-pose.rotation.T @ pose.translation)
        px, z = project_points(K, pose, world)
        assert np.all(z > 0)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        d_r = rotation_from_axis_angle(axis, 0.1)
        d_t = rng.normal(size=3)
        d_t = d_t / np.linalg.norm(d_t) * 0.1
        init = PoseSE3(d_r @ pose.rotation, d_r @ pose.translation + d_t)
        res = optimize_pose(world, px, K, init)
        rot_err = rotation_angle(res.pose.rotation @ pose.rotation.T)
        trans_err = np.linalg.norm(res.pose.translation - pose.translation)
        assert rot_err < 1e-3, rot_err
        assert trans_err < 1e-3, trans_err

    # analytic Jacobian vs central differences at 100 random states
    h = 1e-6
    for _ in range(100):
        pose = PoseSE3(random_rotation(rng), rng.uniform(-1, 1, 3))
        q = np.array([rng.uniform(-2, 2), rng.uniform(-1.5, 1.5), rng.uniform(3, 9)])
        p = pose.rotation.T @ (q - pose.translation)
        jac = reprojection_jacobian(K, q)
        fd = np.zeros((2, 6))
        for i in range(6):
            xi = np.zeros(6)
            xi[i] = h
            plus = project(K, apply_twist(xi, pose), p)
            xi[i] = -h
            minus = project(K, apply_twist(xi, pose), p)
            fd[:, i] = (plus - minus) / (2 * h)
        rel = np.abs(fd - jac) / np.maximum(np.abs(jac), 1.0)
        assert rel.max() < 1e-5, rel.max()
    assert time.time() - t0 < 30.0


# -------------------------------------------------------------------------
# 4. interpolation fidelity


def test_criterion_04_interpolation_fidelity():
    t0 = time.time()
    from scipy import ndimage

    rng = np.random.default_rng(404)
    img = rng.integers(0, 256, size=(120, 160)).astype(np.float64)
    img = ndimage.gaussian_filter(img, 1.2, mode="nearest")
    img = np.clip((img - img.min()) / (img.max() - img.min()) * 255, 0, 255).astype(np.uint8)
    b = np.roll(img, 2, axis=1)
    gt = np.roll(img, 1, axis=1)
    mid = flow_midframe(img, b)
    h, w = img.shape
    cy, cx = h // 10, w // 10  # interior 80 percent crop
    sl = np.s_[cy : h - cy, cx : w - cx]
    err = np.abs(mid[sl].astype(int) - gt[sl].astype(int)).mean()
    assert err <= 2.0, err

    # brute-force separable-kernel oracle on a 16x16 fixture
    a16 = rng.integers(0, 256, size=(16, 16)).astype(np.uint8)
    b16 = rng.integers(0, 256, size=(16, 16)).astype(np.uint8)
    n = 5
    field = SeparableKernelField(*[rng.uniform(-0.2, 0.6, size=(16, 16, n)) for _ in range(4)])
    out = sepconv_synthesize(a16, b16, field)
    c = n // 2
    pa = np.pad(a16.astype(np.float64), c, mode="edge")
    pb = np.pad(b16.astype(np.float64), c, mode="edge")
    expected = np.zeros((16, 16))
    for y in range(16):
        for x in range(16):
            acc = 0.0
            for i in range(n):
                for j in range(n):
                    acc += field.k1v[y, x, i] * field.k1h[y, x, j] * pa[y + i, x + j]
                    acc += field.k2v[y, x, i] * field.k2h[y, x, j] * pb[y + i, x + j]
            expected[y, x] = acc
    assert np.array_equal(out, np.clip(np.rint(expected), 0, 255).astype(np.uint8))

    # one-hot kernels reproduce the input byte-exactly
    hot = np.zeros((16, 16, n))
    hot[:, :, n // 2] = 1.0
    zero = np.zeros((16, 16, n))
    assert np.array_equal(
        sepconv_synthesize(a16, b16, SeparableKernelField(hot, hot, zero, zero)), a16
    )
    assert time.time() - t0 < 30.0


# -------------------------------------------------------------------------
# 5. matching improvement on a fast-yaw pair (Fig. 4 direction)

MATCH_RADIUS = 18.0


def _match_counts(seed: int):
    cfg = SyntheticSceneConfig(
        n_landmarks=450,
        world_min=(-7.0, -4.5, 4.5),
        world_max=(9.0, 4.5, 16.0),
        segments=[PathSegment(2, yaw_rate=0.08)],
        width=320,
        height=240,
        sprite_radius=5,
        seed=seed,
    )
    frames = [f.image for f in synth_generate(cfg)]
    a, b = frames
    mid = flow_midframe(a, b)
    fc = FeatureConfig()
    feats = {}
    for name, image in (("a", a), ("mid", mid), ("b", b)):
        kps, desc = extract_features(image, fc)
        feats[name] = (np.array([[kp.x, kp.y] for kp in kps]), desc)

    def count(x, y):
        return len(
            match_within_radius(
                feats[x][0], feats[x][1], feats[y][0], feats[y][1], MATCH_RADIUS
            )
        )

    return count("a", "b"), count("a", "mid"), count("mid", "b")


def test_criterion_05_matching_improvement():
    t0 = time.time()
    for seed in range(10):
        ab, amid, midb = _match_counts(seed)
        assert amid >= 1.2 * max(ab, 1), (seed, ab, amid)
        assert midb >= 1.2 * max(ab, 1), (seed, ab, midb)
    assert time.time() - t0 < 60.0


# -------------------------------------------------------------------------
# 6. loss-of-track recovery (lost-track analogue), via CLI exit codes

def _yaw_burst_scene(seed: int) -> SyntheticSceneConfig:
    """Static camera spinning up to a 0.12 rad/frame yaw burst."""
    return SyntheticSceneConfig(
        n_landmarks=420,
        world_min=(-4.0, -3.5, 4.5),
        world_max=(10.0, 3.5, 9.5),
        segments=[
            PathSegment(8),
            PathSegment(1, yaw_rate=0.02),
            PathSegment(1, yaw_rate=0.05),
            PathSegment(6, yaw_rate=0.12),
            PathSegment(1, yaw_rate=0.05),
            PathSegment(8),
        ],
        width=320,
        height=240,
        sprite_radius=5,
        seed=seed,
    )


def _run_cli(seq_dir, out_dir, interp_mode, seed):
    return cli_main(
        [
            "run",
            "--dataset", "synth-dir",
            "--path", str(seq_dir),
            "--mode", "rgbd",
            "--interp", interp_mode,
            "--backend", "flow",
            "--beta", "0.03",
            "--seed", str(seed),
            "--out", str(out_dir),
        ]
    )


def test_criterion_06_loss_of_track_recovery(tmp_path):
    t0 = time.time()
    off_lost = []
    for seed in range(10):
        seq_dir = tmp_path / f"seq{seed}"
        save_tum_sequence(synth_generate(_yaw_burst_scene(seed)), seq_dir)
        code_off = _run_cli(seq_dir, tmp_path / f"off{seed}", "off", seed)
        if code_off == 2:
            off_lost.append(seed)
    assert len(off_lost) >= 8, f"interp=off lost only {len(off_lost)}/10 runs"
    recovered = 0
    for seed in off_lost:
        code_gated = _run_cli(tmp_path / f"seq{seed}", tmp_path / f"g{seed}", "gated", seed)
        if code_gated == 0:
            recovered += 1
    assert recovered >= int(np.ceil(0.8 * len(off_lost))), (
        f"gated completed only {recovered}/{len(off_lost)} of the lost runs"
    )
    assert time.time() - t0 < 600.0


# -------------------------------------------------------------------------
# 7. ATE improvement in rotating scenes
#
# Jerky two-turn loop just below the loss threshold: with interpolation off
# the velocity model is wrong by ~13 px at every other turn frame, bending
# the trajectory; gating halves the tracked steps through the turns.

JERK_HI = 0.085
JERK_LO = 0.035


def _jerky_loop_scene(seed: int) -> SyntheticSceneConfig:
    def turn(rates):
        return [
            PathSegment(1, velocity=(0.0, 0.0, 0.05), yaw_rate=r) for r in rates
        ]

    straight = lambda n: [PathSegment(n, velocity=(0.0, 0.0, 0.05))]
    rates = [JERK_LO, JERK_HI, JERK_LO, JERK_HI, JERK_LO, JERK_HI, JERK_LO, 0.015]
    segs = (
        straight(8)
        + turn(rates)
        + straight(6)
        + turn([-r for r in rates])
        + straight(6)
    )
    return SyntheticSceneConfig(
        n_landmarks=500,
        world_min=(-5.0, -4.0, 4.5),
        world_max=(10.0, 4.0, 9.8),
        segments=segs,
        width=320,
        height=240,
        sprite_radius=5,
        seed=seed,
    )


def test_criterion_07_ate_improvement():
    from spinvo.interp import FlowBackend

    t0 = time.time()
    off_rmse = []
    gated_rmse = []
    for seed in range(10):
        src = synth_generate(_jerky_loop_scene(seed))
        values = {}
        for mode in ("off", "gated"):
            cfg = PipelineConfig(
                sensor_mode="rgbd",
                gate=GateConfig(beta=0.03, mode=mode),
                backend=FlowBackend(),
                seed=seed,
            )
            rep = run_sequence(src, cfg)
            assert rep.final_state is TrackingState.TRACKING, (seed, mode)
            values[mode] = ate(src.ground_truth, rep.trajectory, with_scale=True).rmse
        off_rmse.append(values["off"])
        gated_rmse.append(values["gated"])
    med_off = float(np.median(off_rmse))
    med_gated = float(np.median(gated_rmse))
    assert med_gated <= 0.8 * med_off, (
        f"median gated {med_gated:.4f} vs off {med_off:.4f} "
        f"(ratio {med_gated / med_off:.3f})"
    )
    assert time.time() - t0 < 600.0


# -------------------------------------------------------------------------
# 8. no-harm on straight motion


def test_criterion_08_no_harm_straight(tmp_path):
    from spinvo.interp import FlowBackend

    t0 = time.time()
    cfg_scene = SyntheticSceneConfig(
        n_landmarks=450,
        world_min=(-8.0, -5.0, 4.5),
        world_max=(8.0, 5.0, 20.0),
        segments=[PathSegment(16, velocity=(0.05, 0.0, 0.05))],
        width=320,
        height=240,
        sprite_radius=5,
        seed=88,
    )
    src = synth_generate(cfg_scene)
    artifacts = {}
    for mode in ("off", "gated"):
        cfg = PipelineConfig(
            sensor_mode="mono",
            gate=GateConfig(beta=0.03, mode=mode),
            backend=FlowBackend(),
            seed=88,
        )
        rep = run_sequence(src, cfg)
        assert rep.final_state is TrackingState.TRACKING
        if mode == "gated":
            assert rep.inserted_count == 0
        paths = {}
        for name, writer in (
            ("traj", rep.write_trajectory),
            ("gate", rep.write_gate_log),
            ("match", rep.write_match_log),
        ):
            p = tmp_path / f"{mode}_{name}"
            writer(p)
            paths[name] = p.read_bytes()
        artifacts[mode] = paths
    assert artifacts["off"]["traj"] == artifacts["gated"]["traj"]
    assert artifacts["off"]["gate"] == artifacts["gated"]["gate"]
    assert artifacts["off"]["match"] == artifacts["gated"]["match"]
    assert time.time() - t0 < 60.0


# -------------------------------------------------------------------------
# 9. evaluation correctness


def test_criterion_09_evaluation_correctness(tmp_path):
    t0 = time.time()
    rng = np.random.default_rng(909)

    def curved(n=40):
        return Trajectory(
            np.arange(n) / 30.0,
            [
                PoseSE3(np.eye(3), [0.1 * i, 0.3 * np.sin(0.4 * i), 0.05 * i])
                for i in range(n)
            ],
        )

    gt = curved()
    est = Trajectory(
        gt.timestamps.copy(),
        [PoseSE3(p.rotation, p.translation + rng.normal(0, 0.01, 3)) for p in gt.poses],
    )
    base_rigid = ate(gt, est, with_scale=False).rmse
    base_sim = ate(gt, est, with_scale=True).rmse
    q = random_rotation(rng)
    v = rng.normal(size=3) * 3
    moved = Trajectory(
        est.timestamps.copy(),
        [PoseSE3(q @ p.rotation, q @ p.translation + v) for p in est.poses],
    )
    assert abs(ate(gt, moved, with_scale=False).rmse - base_rigid) < 1e-9
    scaled = Trajectory(
        est.timestamps.copy(),
        [PoseSE3(q @ p.rotation, 2.7 * (q @ p.translation) + v) for p in est.poses],
    )
    assert abs(ate(gt, scaled, with_scale=True).rmse - base_sim) < 1e-9

    # planted similarity recovery
    x = rng.normal(size=(40, 3))
    s_true, q2, v2 = 2.5, random_rotation(rng), rng.normal(size=3) * 4
    y = s_true * (x @ q2.T) + v2
    s, r, t = umeyama_align(x, y, with_scale=True)
    assert abs(s - s_true) < 1e-9
    assert np.abs(r - q2).max() < 1e-9
    assert np.abs(t - v2).max() < 1e-9

    # parser round trips through both dataset layouts
    scene = SyntheticSceneConfig(
        n_landmarks=80,
        world_min=(-3.0, -2.0, 4.5),
        world_max=(3.0, 2.0, 9.0),
        segments=[PathSegment(5, velocity=(0.05, 0.0, 0.05), yaw_rate=0.02)],
        width=160,
        height=120,
        sprite_radius=4,
        seed=9,
    )
    src = synth_generate(scene)
    tum_dir = save_tum_sequence(src, tmp_path / "tum")
    tum = load_tum(tum_dir)
    assert len(tum) == len(src)
    for pa, pb in zip(tum.ground_truth.poses, src.ground_truth.poses):
        assert np.abs(pa.matrix() - pb.matrix()).max() < 1e-6
    kitti_dir = save_kitti_sequence(src, tmp_path / "kitti")
    kitti = load_kitti(kitti_dir)
    assert np.abs(kitti.timestamps - src.timestamps).max() < 1e-9
    for pa, pb in zip(kitti.ground_truth.poses, src.ground_truth.poses):
        assert np.abs(pa.matrix() - pb.matrix()).max() < 1e-9
    assert time.time() - t0 < 10.0


# -------------------------------------------------------------------------
# 10. protocol conformance (requires the secondary adapter package)

FIXTURES = REPO_ROOT / "protocol_fixtures"


def _adapter_available() -> bool:
    import importlib.util

    return importlib.util.find_spec("fip_adapter") is not None and FIXTURES.is_dir()


@pytest.mark.skipif(not _adapter_available(), reason="secondary adapter not built")
def test_criterion_10_protocol_conformance():
    import subprocess

    from spinvo.errors import BackendUnavailableError
    from spinvo.interp import ExternalBackend

    t0 = time.time()

    # shared binary fixtures: adapter must reproduce expected responses
    requests = sorted(FIXTURES.glob("*_request.bin"))
    assert requests, "fixture suite missing"
    for mode in ("mock-echo", "mock-blend"):
        for req in requests:
            expected = FIXTURES / req.name.replace(
                "_request.bin", f"_{mode.replace('mock-', '')}_response.bin"
            )
            proc = subprocess.run(
                [sys.executable, "-m", "fip_adapter", "--mode", mode],
                input=req.read_bytes(),
                stdout=subprocess.PIPE,
                timeout=30,
            )
            assert proc.returncode == 0
            assert proc.stdout == expected.read_bytes(), (mode, req.name)

    # mock-blend equals the tracker-side blend oracle, via the protocol client
    rng = np.random.default_rng(10)
    a = rng.integers(0, 256, size=(24, 32, 3)).astype(np.uint8)
    b = rng.integers(0, 256, size=(24, 32, 3)).astype(np.uint8)
    with ExternalBackend(
        [sys.executable, "-m", "fip_adapter", "--mode", "mock-blend"], timeout=30.0
    ) as backend:
        out = backend.midframe(a, b)
        assert np.array_equal(out, blend_midframe(a, b))
        out2 = backend.midframe(a, a)  # second request on the same process
        assert np.array_equal(out2, a)

    # fault injection on the tracker side: reply truncated by a dying backend
    with ExternalBackend(
        [sys.executable, "-m", "fip_adapter", "--mode", "mock-echo", "--die-mid-response"],
        timeout=10.0,
    ) as backend:
        with pytest.raises(BackendUnavailableError):
            backend.midframe(a, b)

    # and a process killed before replying at all
    with ExternalBackend(
        [sys.executable, "-m", "fip_adapter", "--mode", "mock-echo"], timeout=10.0
    ) as backend:
        backend._proc.kill()
        backend._proc.wait()
        with pytest.raises(BackendUnavailableError):
            backend.midframe(a, b)
    assert time.time() - t0 < 30.0
