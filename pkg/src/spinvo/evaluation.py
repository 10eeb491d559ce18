"""Trajectory evaluation: timestamp association, similarity alignment,
absolute trajectory error, relative pose error, and report emission.

Trajectories here are camera-to-world (the file convention); the tracker's
internal world-to-camera poses are inverted at this boundary. Quaternions
appear only in the trajectory file format (x, y, z, w order).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, InsufficientOverlapError, ParseError
from .geometry import PoseSE3, compose, inverse, rotation_angle

DEFAULT_MAX_DT = 0.02  # seconds

METRICS_HEADER = [
    "run",
    "sequence",
    "mode",
    "ate_rmse",
    "ate_mean",
    "ate_median",
    "ate_max",
    "rpe_trans",
    "rpe_rot",
    "pairs",
    "inserted_frames",
    "final_state",
]


@dataclass
class Trajectory:
    """Timestamped camera-to-world poses with strictly increasing stamps."""

    timestamps: np.ndarray
    poses: list

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64).reshape(-1)
        if len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses must pair up")
        if len(self.timestamps) > 1 and not np.all(np.diff(self.timestamps) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        if not self.poses:
            return np.zeros((0, 3))
        return np.stack([p.translation for p in self.poses])


def quaternion_to_rotation(qx: float, qy: float, qz: float, qw: float) -> np.ndarray:
    """Rotation matrix of a unit quaternion (x, y, z, w)."""
    n = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
    if n == 0.0:
        raise ValueError("zero quaternion")
    x, y, z, w = qx / n, qy / n, qz / n, qw / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(r: np.ndarray):
    """Quaternion (x, y, z, w) of a rotation matrix, w >= 0."""
    r = np.asarray(r, dtype=np.float64)
    t = np.trace(r)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(r)))
        if i == 0:
            s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
            x = 0.25 * s
            y = (r[0, 1] + r[1, 0]) / s
            z = (r[0, 2] + r[2, 0]) / s
            w = (r[2, 1] - r[1, 2]) / s
        elif i == 1:
            s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
            x = (r[0, 1] + r[1, 0]) / s
            y = 0.25 * s
            z = (r[1, 2] + r[2, 1]) / s
            w = (r[0, 2] - r[2, 0]) / s
        else:
            s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
            x = (r[0, 2] + r[2, 0]) / s
            y = (r[1, 2] + r[2, 1]) / s
            z = 0.25 * s
            w = (r[1, 0] - r[0, 1]) / s
    if w < 0:
        x, y, z, w = -x, -y, -z, -w
    return x, y, z, w


def associate_timestamps(ta: np.ndarray, tb: np.ndarray, max_dt: float) -> list:
    """Greedy nearest-timestamp pairing, each entry used at most once.

    Candidate pairs within max_dt are sorted by |dt| (quantized at 1 ns so
    float noise cannot flip exact ties; ties then break toward the earlier
    timestamp) and taken while both sides remain free, the convention of
    the standard TUM association tool.
    """
    if max_dt <= 0:
        raise ValueError("max_dt must be positive")
    ta = np.asarray(ta, dtype=np.float64)
    tb = np.asarray(tb, dtype=np.float64)
    candidates = []
    j0 = 0
    for i, t in enumerate(ta):
        while j0 < len(tb) and tb[j0] < t - max_dt:
            j0 += 1
        j = j0
        while j < len(tb) and tb[j] <= t + max_dt:
            candidates.append((round(abs(t - tb[j]) * 1e9), t, tb[j], i, j))
            j += 1
    candidates.sort()
    used_a = set()
    used_b = set()
    pairs = []
    for _, _, _, i, j in candidates:
        if i not in used_a and j not in used_b:
            used_a.add(i)
            used_b.add(j)
            pairs.append((i, j))
    pairs.sort()
    return pairs


def associate(a: Trajectory, b: Trajectory, max_dt: float = DEFAULT_MAX_DT) -> list:
    """Pair poses of two trajectories by timestamp; needs >= 3 pairs."""
    pairs = associate_timestamps(a.timestamps, b.timestamps, max_dt)
    if len(pairs) < 3:
        raise InsufficientOverlapError(
            f"only {len(pairs)} associable pose pairs within {max_dt}s"
        )
    return pairs


def umeyama_align(x: np.ndarray, y: np.ndarray, with_scale: bool = True):
    """Least-squares similarity (s, R, t) minimizing ||y - (s R x + t)||^2.

    Closed-form solution over paired 3D point sets; the rotation sign is
    corrected so det(R) = +1. Raises DegenerateGeometryError for fewer
    than 3 points or (near-)collinear configurations.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 3)
    if len(x) != len(y):
        raise ValueError("point sets must pair up")
    if len(x) < 3:
        raise DegenerateGeometryError("alignment needs at least 3 pairs")
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    cov = yc.T @ xc / len(x)
    u, d, vt = np.linalg.svd(cov)
    if d[0] < 1e-12 or d[1] < 1e-9 * d[0]:
        raise DegenerateGeometryError("point configuration is collinear or degenerate")
    s_fix = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2, 2] = -1.0
    r = u @ s_fix @ vt
    if with_scale:
        var_x = (xc**2).sum() / len(x)
        s = float((d * np.diag(s_fix)).sum() / var_x)
    else:
        s = 1.0
    t = mu_y - s * (r @ mu_x)
    return s, r, t


@dataclass
class AteResult:
    rmse: float
    mean: float
    median: float
    max: float
    pairs: int
    scale: float
    rotation: np.ndarray
    translation: np.ndarray


def ate(
    gt: Trajectory,
    est: Trajectory,
    max_dt: float = DEFAULT_MAX_DT,
    with_scale: bool = True,
) -> AteResult:
    """Absolute trajectory error of est against gt after similarity alignment.

    Positions of the estimate are aligned onto the ground truth with a
    least-squares similarity (scale included for monocular estimators),
    then per-pair position errors are summarized.
    """
    pairs = associate(gt, est, max_dt)
    gi = [i for i, _ in pairs]
    ej = [j for _, j in pairs]
    y = gt.positions[gi]
    x = est.positions[ej]
    s, r, t = umeyama_align(x, y, with_scale)
    err = np.linalg.norm(y - (s * (x @ r.T) + t), axis=1)
    return AteResult(
        rmse=float(np.sqrt((err**2).mean())),
        mean=float(err.mean()),
        median=float(np.median(err)),
        max=float(err.max()),
        pairs=len(pairs),
        scale=s,
        rotation=r,
        translation=t,
    )


@dataclass
class RpeResult:
    trans_rmse: float
    rot_rmse: float
    pairs: int


def rpe(
    gt: Trajectory,
    est: Trajectory,
    delta: int = 1,
    max_dt: float = DEFAULT_MAX_DT,
) -> RpeResult:
    """Relative pose error over associated pairs at stride `delta` frames."""
    if delta < 1:
        raise ValueError("delta must be >= 1")
    pairs = associate(gt, est, max_dt)
    if len(pairs) < delta + 1:
        raise InsufficientOverlapError(
            f"{len(pairs)} pairs cannot support stride {delta}"
        )
    terr = []
    rerr = []
    for a, b in zip(pairs[:-delta], pairs[delta:]):
        rel_gt = compose(inverse(gt.poses[a[0]]), gt.poses[b[0]])
        rel_est = compose(inverse(est.poses[a[1]]), est.poses[b[1]])
        e = compose(inverse(rel_gt), rel_est)
        terr.append(np.linalg.norm(e.translation))
        rerr.append(rotation_angle(e.rotation))
    terr = np.asarray(terr)
    rerr = np.asarray(rerr)
    return RpeResult(
        trans_rmse=float(np.sqrt((terr**2).mean())),
        rot_rmse=float(np.sqrt((rerr**2).mean())),
        pairs=len(terr),
    )


def read_tum_trajectory(path) -> Trajectory:
    """Parse 'timestamp tx ty tz qx qy qz qw' lines; '#' starts a comment."""
    timestamps = []
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(
                    f"{path}:{lineno}: expected 8 fields, got {len(parts)}"
                )
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            t, tx, ty, tz, qx, qy, qz, qw = vals
            norm = math.sqrt(qx * qx + qy * qy + qz * qz + qw * qw)
            if abs(norm - 1.0) > 1e-3:
                raise ParseError(
                    f"{path}:{lineno}: quaternion norm {norm:.6f} deviates from 1"
                )
            timestamps.append(t)
            poses.append(PoseSE3(quaternion_to_rotation(qx, qy, qz, qw), [tx, ty, tz]))
    return Trajectory(np.array(timestamps), poses)


def write_tum_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w") as f:
        f.write("# timestamp tx ty tz qx qy qz qw\n")
        for t, pose in zip(traj.timestamps, traj.poses):
            qx, qy, qz, qw = rotation_to_quaternion(pose.rotation)
            tx, ty, tz = pose.translation
            f.write(
                f"{t:.6f} {tx:.9f} {ty:.9f} {tz:.9f} "
                f"{qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}\n"
            )


def trajectory_from_world_to_camera(timestamps, poses_wc) -> Trajectory:
    """Convert internal world-to-camera poses to a camera-to-world trajectory."""
    return Trajectory(np.asarray(timestamps, dtype=np.float64), [inverse(p) for p in poses_wc])


@dataclass
class RunRecord:
    """One evaluated run, as a metrics.csv row plus its trajectories."""

    run: str
    sequence: str
    mode: str
    estimate: Trajectory
    ground_truth: Trajectory | None = None
    ate_result: AteResult | None = None
    rpe_result: RpeResult | None = None
    inserted_frames: int = 0
    final_state: str = "tracking"


def _svg_polyline(points: np.ndarray, color: str, dasharray: str | None = None) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    dash = f' stroke-dasharray="{dasharray}"' if dasharray else ""
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} '
        f'points="{pts}" />'
    )


def write_xz_plot(trajectories: list, labels: list, path, size: int = 640) -> None:
    """Top-down x-z plot of several trajectories as one SVG."""
    if not trajectories:
        raise ValueError("nothing to plot")
    all_xz = np.concatenate([t.positions[:, [0, 2]] for t in trajectories if len(t)])
    lo = all_xz.min(axis=0)
    hi = all_xz.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    margin = 40
    scale = (size - 2 * margin) / span.max()
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white" />',
    ]
    for i, (traj, label) in enumerate(zip(trajectories, labels)):
        xz = traj.positions[:, [0, 2]]
        pts = (xz - lo) * scale + margin
        pts[:, 1] = size - pts[:, 1]  # z up the page
        dash = "6,4" if label == "ground_truth" else None
        color = "#444444" if label == "ground_truth" else colors[i % len(colors)]
        parts.append(_svg_polyline(pts, color, dash))
        parts.append(
            f'<text x="{margin}" y="{margin + 14 * i}" font-size="12" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def emit_report(records: list, out_dir) -> list:
    """Write metrics.csv, per-run trajectory files, and the x-z SVG plot.

    Returns the list of written paths. An empty record list is an error
    and produces no files.
    """
    if not records:
        raise ValueError("emit_report needs at least one run record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    metrics_path = out / "metrics.csv"
    with open(metrics_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for rec in records:
            a = rec.ate_result
            r = rec.rpe_result
            writer.writerow(
                [
                    rec.run,
                    rec.sequence,
                    rec.mode,
                    *(
                        [repr(a.rmse), repr(a.mean), repr(a.median), repr(a.max)]
                        if a
                        else [""] * 4
                    ),
                    *( [repr(r.trans_rmse), repr(r.rot_rmse)] if r else [""] * 2 ),
                    a.pairs if a else 0,
                    rec.inserted_frames,
                    rec.final_state,
                ]
            )
    written.append(metrics_path)

    trajectories = []
    labels = []
    gt_written = False
    for rec in records:
        traj_path = out / f"{rec.run}_trajectory.txt"
        write_tum_trajectory(rec.estimate, traj_path)
        written.append(traj_path)
        if len(rec.estimate):
            trajectories.append(rec.estimate)
            labels.append(rec.run)
        if rec.ground_truth is not None and not gt_written:
            gt_path = out / "groundtruth.txt"
            write_tum_trajectory(rec.ground_truth, gt_path)
            written.append(gt_path)
            trajectories.append(rec.ground_truth)
            labels.append("ground_truth")
            gt_written = True
    plot_path = out / "trajectory_plot.svg"
    write_xz_plot(trajectories, labels, plot_path)
    written.append(plot_path)
    return written


def read_metrics_csv(path) -> list:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        return list(reader)
