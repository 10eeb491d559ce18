"""Geometric pose estimation.

Pinhole projection, DLT triangulation, essential-matrix RANSAC with the
normalized 8-point solver, the 4-way decomposition with a cheirality vote,
and a robust motion-only pose optimizer (Levenberg-Marquardt over a 6-dof
twist with Huber weighting and inlier reclassification rounds).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AmbiguousDecompositionError,
    BehindCameraError,
    CheiralityError,
    DegenerateGeometryError,
    InitializationFailure,
    OptimizationFailure,
)
from .geometry import PoseSE3, rotation_from_axis_angle

HUBER_DELTA_PX = 2.45  # chi-square 95% for 2 dof, in pixels
INLIER_CHI2_PX2 = 5.99
MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def normalize(self, px: np.ndarray) -> np.ndarray:
        """Pixel coordinates to normalized camera coordinates."""
        px = np.asarray(px, dtype=np.float64)
        out = np.empty_like(px)
        out[..., 0] = (px[..., 0] - self.cx) / self.fx
        out[..., 1] = (px[..., 1] - self.cy) / self.fy
        return out

    def denormalize(self, xn: np.ndarray) -> np.ndarray:
        xn = np.asarray(xn, dtype=np.float64)
        out = np.empty_like(xn)
        out[..., 0] = xn[..., 0] * self.fx + self.cx
        out[..., 1] = xn[..., 1] * self.fy + self.cy
        return out


@dataclass
class Landmark:
    position: np.ndarray  # (3,) world units
    descriptor: np.ndarray  # (32,) packed bits
    observations: int = 1

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.position)):
            raise ValueError("landmark position must be finite")
        if self.observations < 1:
            raise ValueError("observations must be >= 1")


@dataclass
class Correspondence:
    point3: np.ndarray  # (3,) world
    pixel: np.ndarray  # (2,) px

    def __post_init__(self):
        self.point3 = np.asarray(self.point3, dtype=np.float64).reshape(3)
        self.pixel = np.asarray(self.pixel, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(self.point3)) and np.all(np.isfinite(self.pixel))):
            raise ValueError("correspondence entries must be finite")


def project(k: CameraIntrinsics, pose: PoseSE3, p: np.ndarray) -> np.ndarray:
    """Pinhole projection of one world point; raises behind the camera."""
    q = pose.rotation @ np.asarray(p, dtype=np.float64).reshape(3) + pose.translation
    if q[2] <= MIN_DEPTH:
        raise BehindCameraError(f"point depth {q[2]:.3g} <= {MIN_DEPTH}")
    return np.array([k.fx * q[0] / q[2] + k.cx, k.fy * q[1] / q[2] + k.cy])


def project_points(k: CameraIntrinsics, pose: PoseSE3, pts: np.ndarray):
    """Batch projection; returns (pixels (n,2), depths (n,)) without raising."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    q = pts @ pose.rotation.T + pose.translation
    z = q[:, 2]
    safe = np.where(np.abs(z) > MIN_DEPTH, z, np.nan)
    px = np.stack([k.fx * q[:, 0] / safe + k.cx, k.fy * q[:, 1] / safe + k.cy], axis=1)
    return px, z


def triangulate(
    pose_a: PoseSE3,
    pose_b: PoseSE3,
    obs_a: np.ndarray,
    obs_b: np.ndarray,
    k: CameraIntrinsics,
) -> np.ndarray:
    """Linear DLT triangulation of one pixel correspondence.

    Raises DegenerateGeometryError on a (near-)zero baseline and
    CheiralityError when the solution lands behind either camera.
    """
    ca = -pose_a.rotation.T @ pose_a.translation
    cb = -pose_b.rotation.T @ pose_b.translation
    if np.linalg.norm(ca - cb) <= 1e-6:
        raise DegenerateGeometryError("triangulation baseline below 1e-6")
    km = k.matrix()
    pa = km @ np.hstack([pose_a.rotation, pose_a.translation[:, None]])
    pb = km @ np.hstack([pose_b.rotation, pose_b.translation[:, None]])
    ua, va = float(obs_a[0]), float(obs_a[1])
    ub, vb = float(obs_b[0]), float(obs_b[1])
    a = np.stack(
        [
            ua * pa[2] - pa[0],
            va * pa[2] - pa[1],
            ub * pb[2] - pb[0],
            vb * pb[2] - pb[1],
        ]
    )
    _, _, vt = np.linalg.svd(a)
    xh = vt[-1]
    if abs(xh[3]) < 1e-12:
        raise DegenerateGeometryError("triangulated point at infinity")
    x = xh[:3] / xh[3]
    za = (pose_a.rotation @ x + pose_a.translation)[2]
    zb = (pose_b.rotation @ x + pose_b.translation)[2]
    if za <= 0 or zb <= 0:
        raise CheiralityError(f"negative depth ({za:.3g}, {zb:.3g})")
    return x


def triangulate_points(pose_a, pose_b, obs_a, obs_b, k) -> tuple:
    """Batch DLT; returns (points (n,3), valid mask) instead of raising."""
    obs_a = np.asarray(obs_a, dtype=np.float64).reshape(-1, 2)
    obs_b = np.asarray(obs_b, dtype=np.float64).reshape(-1, 2)
    pts = np.zeros((len(obs_a), 3))
    ok = np.zeros(len(obs_a), dtype=bool)
    for i in range(len(obs_a)):
        try:
            pts[i] = triangulate(pose_a, pose_b, obs_a[i], obs_b[i], k)
            ok[i] = True
        except (DegenerateGeometryError, CheiralityError):
            pass
    return pts, ok


def _eight_point(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """Direct linear solution of x_b^T E x_a = 0 over all given pairs."""
    a = np.stack(
        [
            xb[:, 0] * xa[:, 0],
            xb[:, 0] * xa[:, 1],
            xb[:, 0],
            xb[:, 1] * xa[:, 0],
            xb[:, 1] * xa[:, 1],
            xb[:, 1],
            xa[:, 0],
            xa[:, 1],
            np.ones(len(xa)),
        ],
        axis=1,
    )
    _, _, vt = np.linalg.svd(a)
    return vt[-1].reshape(3, 3)


def _project_essential(e: np.ndarray) -> np.ndarray:
    """Nearest matrix with singular values (1, 1, 0)."""
    u, _, vt = np.linalg.svd(e)
    return u @ np.diag([1.0, 1.0, 0.0]) @ vt


def _epipolar_residuals(e: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    ha = np.column_stack([xa, np.ones(len(xa))])
    hb = np.column_stack([xb, np.ones(len(xb))])
    return np.abs(np.einsum("ni,ij,nj->n", hb, e, ha))


def estimate_essential(
    xa: np.ndarray,
    xb: np.ndarray,
    iterations: int = 200,
    inlier_threshold: float = 1e-3,
    seed: int = 0,
):
    """Essential matrix from matched normalized coordinates, via RANSAC.

    Runs a fixed number of seeded 8-point hypotheses and keeps the one
    with the largest inlier set under the algebraic residual
    |x_b^T E x_a| (E scaled to singular values (1, 1, 0), so the residual
    is in normalized units). The final model is refit on all inliers.

    Returns (E, inlier mask); raises ValueError below 8 pairs and
    InitializationFailure when no hypothesis reaches 8 inliers.
    """
    xa = np.asarray(xa, dtype=np.float64).reshape(-1, 2)
    xb = np.asarray(xb, dtype=np.float64).reshape(-1, 2)
    n = len(xa)
    if len(xb) != n:
        raise ValueError("pair arrays must have equal length")
    if n < 8:
        raise ValueError(f"need at least 8 pairs, got {n}")
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = 0
    for _ in range(iterations):
        sel = rng.choice(n, size=8, replace=False)
        e = _project_essential(_eight_point(xa[sel], xb[sel]))
        mask = _epipolar_residuals(e, xa, xb) < inlier_threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < 8:
        raise InitializationFailure(
            f"no essential hypothesis with >= 8 inliers after {iterations} iterations"
        )
    e = _project_essential(_eight_point(xa[best_mask], xb[best_mask]))
    mask = _epipolar_residuals(e, xa, xb) < inlier_threshold
    if mask.sum() < 8:
        mask = best_mask
    return e, mask


def decompose_essential(e: np.ndarray, xa: np.ndarray, xb: np.ndarray) -> PoseSE3:
    """Relative pose (unit-norm translation) from an essential matrix.

    Tests the four (R, +-t) candidates by triangulating the given
    normalized pairs and voting on positive depth in both views. Raises
    AmbiguousDecompositionError on a tie or when the winner supports
    fewer than half the pairs (covers the pure-rotation degeneracy).
    """
    xa = np.asarray(xa, dtype=np.float64).reshape(-1, 2)
    xb = np.asarray(xb, dtype=np.float64).reshape(-1, 2)
    if len(xa) < 1:
        raise ValueError("need at least one pair to vote on cheirality")
    u, _, vt = np.linalg.svd(np.asarray(e, dtype=np.float64))
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r1 = u @ w @ vt
    r2 = u @ w.T @ vt
    if np.linalg.det(r1) < 0:
        r1 = -r1
    if np.linalg.det(r2) < 0:
        r2 = -r2
    t = u[:, 2]
    tn = np.linalg.norm(t)
    if tn < 1e-12:
        raise AmbiguousDecompositionError("translation direction is undefined")
    t = t / tn

    k1 = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
    identity = PoseSE3.identity()
    counts = []
    candidates = [
        PoseSE3(r1, t),
        PoseSE3(r1, -t),
        PoseSE3(r2, t),
        PoseSE3(r2, -t),
    ]
    for cand in candidates:
        _, ok = triangulate_points(identity, cand, xa, xb, k1)
        counts.append(int(ok.sum()))
    order = np.argsort(counts)[::-1]
    best, second = counts[order[0]], counts[order[1]]
    if best == second:
        raise AmbiguousDecompositionError(f"cheirality vote tied at {best}")
    if best < 0.5 * len(xa):
        raise AmbiguousDecompositionError(
            f"winning candidate supports only {best}/{len(xa)} pairs"
        )
    return candidates[order[0]]


def so3_exp(omega: np.ndarray) -> np.ndarray:
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        return np.eye(3) + _hat(omega)
    return rotation_from_axis_angle(omega, theta)


def _hat(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0.0]])


def se3_exp(xi: np.ndarray) -> PoseSE3:
    """Exponential of a twist (omega, v), rotation part first."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    omega, v = xi[:3], xi[3:]
    theta = np.linalg.norm(omega)
    k = _hat(omega)
    if theta < 1e-8:
        rot = np.eye(3) + k + 0.5 * (k @ k)
        jac = np.eye(3) + 0.5 * k + (k @ k) / 6.0
    else:
        rot = rotation_from_axis_angle(omega, theta)
        k2 = k @ k
        jac = (
            np.eye(3)
            + (1.0 - np.cos(theta)) / theta**2 * k
            + (theta - np.sin(theta)) / theta**3 * k2
        )
    return PoseSE3(rot, jac @ v)


def apply_twist(xi: np.ndarray, pose: PoseSE3) -> PoseSE3:
    """Left-multiplied update exp(xi) o pose."""
    d = se3_exp(xi)
    return PoseSE3(d.rotation @ pose.rotation, d.rotation @ pose.translation + d.translation)


def so3_log(r: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (angle < pi - eps assumed safe)."""
    r = np.asarray(r, dtype=np.float64)
    cos = (np.trace(r) - 1.0) / 2.0
    cos = min(1.0, max(-1.0, cos))
    theta = np.arccos(cos)
    if theta < 1e-10:
        return np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / 2.0
    if theta > np.pi - 1e-6:
        # near pi: axis from the dominant diagonal of (R + I) / 2
        m = (r + np.eye(3)) / 2.0
        i = int(np.argmax(np.diag(m)))
        axis = m[:, i] / np.sqrt(max(m[i, i], 1e-12))
        axis = axis / np.linalg.norm(axis)
        return axis * theta
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / (
        2.0 * np.sin(theta)
    )
    return axis * theta


def se3_log(pose: PoseSE3) -> np.ndarray:
    """Twist (omega, v) with se3_exp(se3_log(T)) == T."""
    omega = so3_log(pose.rotation)
    theta = np.linalg.norm(omega)
    k = _hat(omega)
    if theta < 1e-8:
        v_inv = np.eye(3) - 0.5 * k + (k @ k) / 12.0
    else:
        k2 = k @ k
        v_inv = (
            np.eye(3)
            - 0.5 * k
            + (1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta)))
            * k2
        )
    return np.concatenate([omega, v_inv @ pose.translation])


def pose_fraction(pose: PoseSE3, alpha: float) -> PoseSE3:
    """Geodesic fraction exp(alpha * log(T)): the half-step for alpha = 0.5."""
    return se3_exp(alpha * se3_log(pose))


def reprojection_jacobian(k: CameraIntrinsics, q: np.ndarray) -> np.ndarray:
    """d(residual)/d(twist) for one camera-frame point q, columns (omega, v)."""
    x, y, z = q
    dpi = np.array([[k.fx / z, 0.0, -k.fx * x / z**2], [0.0, k.fy / z, -k.fy * y / z**2]])
    dq = np.hstack([-_hat(q), np.eye(3)])
    return dpi @ dq


def _reprojection_jacobians(k: CameraIntrinsics, q: np.ndarray) -> np.ndarray:
    """Batch of (2, 6) residual Jacobians for camera-frame points (m, 3)."""
    m = len(q)
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    z = np.where(np.abs(z) > MIN_DEPTH, z, 1.0)  # guarded; callers zero bad rows
    dpi = np.zeros((m, 2, 3))
    dpi[:, 0, 0] = k.fx / z
    dpi[:, 0, 2] = -k.fx * x / z**2
    dpi[:, 1, 1] = k.fy / z
    dpi[:, 1, 2] = -k.fy * y / z**2
    dq = np.zeros((m, 3, 6))
    dq[:, 0, 1] = q[:, 2]
    dq[:, 0, 2] = -q[:, 1]
    dq[:, 1, 0] = -q[:, 2]
    dq[:, 1, 2] = q[:, 0]
    dq[:, 2, 0] = q[:, 1]
    dq[:, 2, 1] = -q[:, 0]
    dq[:, 0, 3] = dq[:, 1, 4] = dq[:, 2, 5] = 1.0
    return np.einsum("mij,mjk->mik", dpi, dq)


def _robust_cost_and_weights(res: np.ndarray, delta: float):
    """Huber cost per residual pair plus IRLS weights."""
    e = np.linalg.norm(res, axis=1)
    quad = e <= delta
    cost = np.where(quad, 0.5 * e**2, delta * (e - 0.5 * delta))
    w = np.where(quad, 1.0, delta / np.maximum(e, 1e-12))
    return float(cost.sum()), w


@dataclass
class PoseOptimizeResult:
    pose: PoseSE3
    inliers: np.ndarray  # bool mask over correspondences
    cost: float  # robust cost over all correspondences at the final pose
    round_costs: list = field(default_factory=list)  # accepted-step costs per round


def optimize_pose(
    points3: np.ndarray,
    pixels: np.ndarray,
    k: CameraIntrinsics,
    init: PoseSE3,
    rounds: int = 4,
    iterations: int = 10,
    huber_delta: float = HUBER_DELTA_PX,
    inlier_chi2: float = INLIER_CHI2_PX2,
) -> PoseOptimizeResult:
    """Motion-only pose refinement from 3D-2D correspondences.

    Levenberg-Marquardt over a left-multiplied 6-dof twist, minimizing the
    Huber-robustified reprojection error; after each of `rounds` passes
    the full correspondence set is reclassified with the chi-square gate
    `inlier_chi2` (px^2) and the next pass optimizes the inliers only.
    Damping is multiplicative on the Hessian diagonal, which keeps the
    solver exactly equivariant under global scene rescaling.

    The returned cost is evaluated over all correspondences and never
    exceeds the same cost at `init`.
    """
    points3 = np.asarray(points3, dtype=np.float64).reshape(-1, 3)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    n = len(points3)
    if len(pixels) != n:
        raise ValueError("points3 and pixels must pair up")
    if n < 4:
        raise ValueError(f"need at least 4 correspondences, got {n}")

    def residuals(pose, sel=slice(None)):
        px, z = project_points(k, pose, points3[sel])
        res = px - pixels[sel]
        bad = ~np.isfinite(res).all(axis=1) | (z <= MIN_DEPTH)
        # Behind-camera points get a large finite residual so they are
        # rejected by the robust weight instead of poisoning the solve.
        res[bad] = 1e6
        return res, bad

    def total_cost(pose):
        res, _ = residuals(pose)
        c, _ = _robust_cost_and_weights(res, huber_delta)
        return c

    pose = init
    initial_cost = total_cost(init)
    if not np.isfinite(initial_cost):
        raise OptimizationFailure("non-finite cost at the initial pose")
    inliers = np.ones(n, dtype=bool)
    round_costs: list = []

    for _ in range(rounds):
        idx = np.flatnonzero(inliers)
        accepted: list = []
        if len(idx) >= 4:
            lam = 1e-4
            res, bad = residuals(pose, idx)
            cost, w = _robust_cost_and_weights(res, huber_delta)
            w = np.where(bad, 0.0, w)
            for _ in range(iterations):
                q = points3[idx] @ pose.rotation.T + pose.translation
                jac = _reprojection_jacobians(k, q)
                wj = jac * w[:, None, None]
                h = np.einsum("mij,mik->jk", wj, jac)
                g = np.einsum("mij,mi->j", wj, res)
                if not np.isfinite(h).all() or not np.isfinite(g).all():
                    raise OptimizationFailure("non-finite normal equations")
                step_taken = False
                for _ in range(8):
                    damped = h + lam * np.diag(np.diag(h))
                    try:
                        delta = np.linalg.solve(damped, -g)
                    except np.linalg.LinAlgError:
                        lam *= 10.0
                        continue
                    trial = apply_twist(delta, pose)
                    tres, tbad = residuals(trial, idx)
                    tcost, tw = _robust_cost_and_weights(tres, huber_delta)
                    if tcost < cost:
                        pose, res, cost = trial, tres, tcost
                        w = np.where(tbad, 0.0, tw)
                        accepted.append(cost)
                        lam = max(lam / 3.0, 1e-12)
                        step_taken = True
                        break
                    lam *= 10.0
                if not step_taken:
                    break
                if np.linalg.norm(delta) < 1e-12:
                    break
        round_costs.append(accepted)
        err2 = (residuals(pose)[0] ** 2).sum(axis=1)
        inliers = err2 < inlier_chi2
        if inliers.sum() < 4:
            break

    final_cost = total_cost(pose)
    if final_cost > initial_cost:
        # Reclassification can in principle walk uphill on the full set;
        # fall back to the initial pose so the contract holds.
        pose = init
        final_cost = initial_cost
        err2 = (residuals(pose)[0] ** 2).sum(axis=1)
        inliers = err2 < inlier_chi2
    return PoseOptimizeResult(pose, inliers, final_cost, round_costs)
