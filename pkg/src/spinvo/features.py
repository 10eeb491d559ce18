"""ORB-style feature frontend.

FAST-9 corners with an SAD-over-arc score, intensity-centroid orientation,
rotated 256-bit binary descriptors from a frozen pair table, grid-based
spatial distribution, and Hamming matching with ratio test and cross check.
All operations are deterministic: no RNG, output order normalized by
(level, y, x).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ._brief_pairs import BRIEF_PAIRS
from .imaging import MIN_PYRAMID_DIM, build_pyramid, pyramid_level_dims, validate_image

# Radius-3 Bresenham circle, clockwise from 12 o'clock: (dx, dy) pairs.
FAST_CIRCLE = np.array(
    [
        (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
        (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
    ],
    dtype=np.int32,
)
FAST_ARC = 9
ORIENTATION_RADIUS = 15
DESCRIPTOR_MARGIN = 18  # 37x37 patch around the keypoint

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

# Circular patch offsets for the intensity centroid.
_oy, _ox = np.mgrid[-ORIENTATION_RADIUS : ORIENTATION_RADIUS + 1,
                    -ORIENTATION_RADIUS : ORIENTATION_RADIUS + 1]
_disk = _ox**2 + _oy**2 <= ORIENTATION_RADIUS**2
PATCH_DX = _ox[_disk].astype(np.int64)
PATCH_DY = _oy[_disk].astype(np.int64)


@dataclass
class Keypoint:
    """Corner in level-0 coordinates; `level` names the pyramid level it came from."""

    x: float
    y: float
    level: int = 0
    orientation: float = 0.0
    score: float = 0.0


@dataclass
class Match:
    index_a: int
    index_b: int
    distance: int


def fast_score_map(img: np.ndarray, threshold: int = 20) -> np.ndarray:
    """Segment-test SAD scores per pixel (0 where not a corner)."""
    img = validate_image(img)
    if img.ndim != 2:
        raise ValueError("fast_score_map expects a grayscale image")
    h, w = img.shape
    if h < 7 or w < 7:
        return np.zeros((h, w), dtype=np.int32)
    v = img.astype(np.int32)
    center = v[3 : h - 3, 3 : w - 3]
    # Compass prefilter: a 9-run around the 16-circle must light up at
    # least two of the four axis-aligned circle points.
    cnt_b = np.zeros(center.shape, dtype=np.uint8)
    cnt_d = np.zeros(center.shape, dtype=np.uint8)
    for dx, dy in FAST_CIRCLE[[0, 4, 8, 12]]:
        s = v[3 + dy : h - 3 + dy, 3 + dx : w - 3 + dx]
        cnt_b += s > center + threshold
        cnt_d += s < center - threshold
    cys, cxs = np.nonzero((cnt_b >= 2) | (cnt_d >= 2))
    full = np.zeros((h, w), dtype=np.int32)
    if len(cys):
        cys = cys + 3
        cxs = cxs + 3
        c = v[cys, cxs]
        ring = np.stack([v[cys + dy, cxs + dx] for dx, dy in FAST_CIRCLE])
        bright = ring > c + threshold
        dark = ring < c - threshold
        sad = np.abs(ring - c)
        # Wrap the circle so every 9-window is a contiguous slice.
        bright = np.concatenate([bright, bright[: FAST_ARC - 1]], axis=0)
        dark = np.concatenate([dark, dark[: FAST_ARC - 1]], axis=0)
        sad = np.concatenate([sad, sad[: FAST_ARC - 1]], axis=0)
        score = np.zeros(len(cys), dtype=np.int32)
        for s in range(16):
            hit = bright[s : s + FAST_ARC].all(axis=0) | dark[s : s + FAST_ARC].all(
                axis=0
            )
            if hit.any():
                wsad = sad[s : s + FAST_ARC].sum(axis=0)
                score = np.where(hit, np.maximum(score, wsad), score)
        full[cys, cxs] = score
    return full


def detect_fast(img: np.ndarray, threshold: int = 20, nonmax: bool = True) -> list:
    """FAST-9 segment test with SAD score and 3x3 non-max suppression.

    A pixel is a corner when some 9 contiguous pixels of its radius-3
    circle are all brighter than center + threshold or all darker than
    center - threshold. The score is the best 9-window sum of absolute
    center differences. Returns keypoints in (y, x) raster order with
    level 0 and zero orientation.
    """
    full = fast_score_map(img, threshold)
    if nonmax:
        local_max = ndimage.maximum_filter(full, size=3, mode="constant")
        keep = (full == local_max) & (full > 0)
    else:
        keep = full > 0
    ys, xs = np.nonzero(keep)
    return [
        Keypoint(float(x), float(y), 0, 0.0, float(full[y, x]))
        for y, x in zip(ys, xs)
    ]


def refine_subpixel(score_map: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Quadratic peak interpolation of corner scores, one axis at a time.

    Returns refined (x, y) float arrays; offsets are clamped to half a
    pixel and applied only where the 1D curvature is negative.
    """
    s = score_map.astype(np.float64)
    h, w = s.shape
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    out_x = xs.astype(np.float64)
    out_y = ys.astype(np.float64)
    inner = (xs > 0) & (xs < w - 1) & (ys > 0) & (ys < h - 1)
    xi, yi = xs[inner], ys[inner]
    for axis, out in ((0, out_x), (1, out_y)):
        if axis == 0:
            lo, c, hi = s[yi, xi - 1], s[yi, xi], s[yi, xi + 1]
        else:
            lo, c, hi = s[yi - 1, xi], s[yi, xi], s[yi + 1, xi]
        denom = lo - 2.0 * c + hi
        ok = denom < -1e-12
        offset = np.zeros(len(xi))
        offset[ok] = 0.5 * (lo[ok] - hi[ok]) / denom[ok]
        out[inner] += np.clip(offset, -0.5, 0.5)
    return out_x, out_y


def orientations(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Intensity-centroid angles in [0, 2pi) for integer keypoint positions."""
    v = np.asarray(img, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    patch = v[ys[:, None] + PATCH_DY[None, :], xs[:, None] + PATCH_DX[None, :]]
    m10 = patch @ PATCH_DX.astype(np.float64)
    m01 = patch @ PATCH_DY.astype(np.float64)
    return np.mod(np.arctan2(m01, m10), 2.0 * np.pi)


def compute_orientation(img: np.ndarray, kp: Keypoint) -> float:
    """Orientation of one keypoint; its radius-15 patch must be inside the image."""
    h, w = img.shape
    x, y = int(round(kp.x)), int(round(kp.y))
    r = ORIENTATION_RADIUS
    if x - r < 0 or y - r < 0 or x + r >= w or y + r >= h:
        raise ValueError("orientation patch out of bounds")
    return float(orientations(img, np.array([x]), np.array([y]))[0])


def descriptors(img: np.ndarray, xs, ys, thetas) -> np.ndarray:
    """Rotated binary descriptors, packed to (n, 32) uint8.

    Bit i is [I(p_i) < I(q_i)] on a 5x5 box-smoothed image, with the pair
    offsets rotated by each keypoint's orientation and rounded.
    """
    sm = ndimage.uniform_filter(np.asarray(img, dtype=np.float32), size=5, mode="nearest")
    xs = np.asarray(xs, dtype=np.int64)[:, None]
    ys = np.asarray(ys, dtype=np.int64)[:, None]
    cos = np.cos(thetas)[:, None]
    sin = np.sin(thetas)[:, None]
    px, py, qx, qy = (BRIEF_PAIRS[:, i].astype(np.float64)[None, :] for i in range(4))
    rpx = np.rint(cos * px - sin * py).astype(np.int64)
    rpy = np.rint(sin * px + cos * py).astype(np.int64)
    rqx = np.rint(cos * qx - sin * qy).astype(np.int64)
    rqy = np.rint(sin * qx + cos * qy).astype(np.int64)
    vp = sm[ys + rpy, xs + rpx]
    vq = sm[ys + rqy, xs + rqx]
    return np.packbits(vp < vq, axis=1)


def compute_descriptor(img: np.ndarray, kp: Keypoint) -> np.ndarray:
    """Descriptor of one keypoint; its 37x37 patch must be inside the image."""
    h, w = img.shape
    x, y = int(round(kp.x)), int(round(kp.y))
    m = DESCRIPTOR_MARGIN
    if x - m < 0 or y - m < 0 or x + m >= w or y + m >= h:
        raise ValueError("descriptor patch out of bounds")
    return descriptors(img, [x], [y], np.array([kp.orientation]))[0]


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    return int(_POPCOUNT[np.bitwise_xor(a, b)].sum())


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n, m) table of pairwise Hamming distances between packed descriptors."""
    a = np.asarray(a, dtype=np.uint8).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.uint8).reshape(len(b), -1)
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int32)
    step = 256
    for i in range(0, a.shape[0], step):
        x = np.bitwise_xor(a[i : i + step, None, :], b[None, :, :])
        out[i : i + step] = _POPCOUNT[x].sum(axis=2, dtype=np.int32)
    return out


def distribute_grid(kps: list, img_dims, cell: int, max_per_cell: int) -> list:
    """Keep at most `max_per_cell` keypoints per grid cell, best score first.

    Output is grouped by cell in raster order; within a cell keypoints are
    sorted by descending score with input order breaking ties.
    """
    if cell < 8:
        raise ValueError("grid cell must be >= 8 px")
    w, h = img_dims
    cols = max(1, -(-w // cell))
    order = sorted(
        range(len(kps)),
        key=lambda i: (
            int(kps[i].y) // cell * cols + int(kps[i].x) // cell,
            -kps[i].score,
            i,
        ),
    )
    counts: dict = {}
    out = []
    for i in order:
        cid = int(kps[i].y) // cell * cols + int(kps[i].x) // cell
        n = counts.get(cid, 0)
        if n < max_per_cell:
            counts[cid] = n + 1
            out.append(kps[i])
    return out


def match_descriptors(
    a: np.ndarray,
    b: np.ndarray,
    ratio: float = 0.8,
    cross_check: bool = True,
) -> list:
    """Nearest-neighbor Hamming matching with Lowe ratio and mutual check.

    For each descriptor in `a` the nearest and second nearest in `b` are
    found; the match is kept when nearest < ratio * second-nearest (the
    ratio test is vacuous when `b` has a single descriptor). With
    cross_check the pairing must also be mutual, making the result
    one-to-one.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must be in (0, 1]")
    if len(a) == 0 or len(b) == 0:
        return []
    d = hamming_matrix(a, b)
    nearest = d.argmin(axis=1)
    idx = np.arange(len(a))
    d1 = d[idx, nearest]
    if d.shape[1] >= 2:
        d2 = np.partition(d, 1, axis=1)[:, 1]
        keep = d1 < ratio * d2
    else:
        keep = np.ones(len(a), dtype=bool)
    if cross_check:
        back = d.argmin(axis=0)
        keep &= back[nearest] == idx
    return [Match(int(i), int(nearest[i]), int(d1[i])) for i in idx[keep]]


def match_within_radius(
    pos_a: np.ndarray,
    desc_a: np.ndarray,
    pos_b: np.ndarray,
    desc_b: np.ndarray,
    radius: float,
    max_distance: int = 64,
    ratio: float | None = 0.8,
    cross_check: bool = True,
) -> list:
    """Descriptor matching restricted to a spatial search window.

    Candidates for each `a` entry are the `b` keypoints within `radius`
    pixels of its position; this mirrors the windowed search the tracker
    performs, so counts degrade as inter-frame displacement grows. The
    nearest candidate must pass the Hamming gate, the ratio test runs
    against the second-nearest candidate (vacuous with one candidate),
    and cross_check demands mutual nearest within the radius graph.
    """
    if len(pos_a) == 0 or len(pos_b) == 0:
        return []
    pos_a = np.asarray(pos_a, dtype=np.float64).reshape(-1, 2)
    pos_b = np.asarray(pos_b, dtype=np.float64).reshape(-1, 2)
    desc_a = np.asarray(desc_a, dtype=np.uint8).reshape(len(pos_a), -1)
    desc_b = np.asarray(desc_b, dtype=np.uint8).reshape(len(pos_b), -1)

    # Bucket b by grid cells of side `radius`; candidates come from the
    # 3x3 cell neighborhood, which covers every point within the radius.
    cell = max(radius, 1e-6)
    buckets: dict = {}
    keys_b = np.floor(pos_b / cell).astype(np.int64)
    for j, key in enumerate(map(tuple, keys_b)):
        buckets.setdefault(key, []).append(j)

    r2 = radius * radius
    best_b = np.full(len(pos_a), -1, dtype=np.int64)
    best_d = np.full(len(pos_a), 1 << 30, dtype=np.int64)
    second_d = np.full(len(pos_a), 1 << 30, dtype=np.int64)
    rev_best_a = np.full(len(pos_b), -1, dtype=np.int64)
    rev_best_d = np.full(len(pos_b), 1 << 30, dtype=np.int64)

    keys_a = np.floor(pos_a / cell).astype(np.int64)
    for i in range(len(pos_a)):
        kx, ky = keys_a[i]
        cand: list = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                cand.extend(buckets.get((kx + dx, ky + dy), ()))
        if not cand:
            continue
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        diff = pos_b[cand] - pos_a[i]
        cand = cand[(diff * diff).sum(axis=1) <= r2]
        if len(cand) == 0:
            continue
        d = _POPCOUNT[np.bitwise_xor(desc_a[i][None, :], desc_b[cand])].sum(
            axis=1, dtype=np.int64
        )
        order = np.argsort(d, kind="stable")
        best_b[i] = cand[order[0]]
        best_d[i] = d[order[0]]
        if len(order) > 1:
            second_d[i] = d[order[1]]
        better = d < rev_best_d[cand]
        rev_best_d[cand[better]] = d[better]
        rev_best_a[cand[better]] = i

    out = []
    for i in range(len(pos_a)):
        j = best_b[i]
        if j < 0 or best_d[i] > max_distance:
            continue
        if ratio is not None and second_d[i] < (1 << 30):
            if not best_d[i] < ratio * second_d[i]:
                continue
        if cross_check and rev_best_a[j] != i:
            continue
        out.append(Match(int(i), int(j), int(best_d[i])))
    return out


def filter_orientation_consistent(
    matches: list,
    thetas_a: np.ndarray,
    thetas_b: np.ndarray,
    n_bins: int = 30,
    keep_bins: int = 3,
) -> list:
    """Keep matches whose orientation change agrees with the majority.

    The histogram of keypoint-orientation differences is dominated by the
    true in-plane rotation; matches in other bins are mostly aliases
    (e.g. a different corner of the same repetitive structure).
    """
    if len(matches) < 3:
        return matches
    thetas_a = np.asarray(thetas_a, dtype=np.float64)
    thetas_b = np.asarray(thetas_b, dtype=np.float64)
    delta = np.array(
        [thetas_b[m.index_b] - thetas_a[m.index_a] for m in matches]
    ) % (2.0 * np.pi)
    bins = np.minimum((delta / (2.0 * np.pi) * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(bins, minlength=n_bins)
    top = np.argsort(counts, kind="stable")[::-1][:keep_bins]
    allowed = set(int(b) for b in top if counts[b] > 0)
    return [m for m, b in zip(matches, bins) if int(b) in allowed]


@dataclass
class FeatureConfig:
    n_features: int = 1000
    levels: int = 8
    scale_factor: float = 1.2
    fast_threshold: int = 20
    grid_cell: int = 32


def extract_features(img: np.ndarray, config: FeatureConfig | None = None):
    """Full frontend pass: pyramid, FAST, orientation, descriptors, grid budget.

    Returns (keypoints, descriptors) with keypoints in level-0 coordinates,
    ordered by (level, y, x), and descriptors as an aligned (n, 32) array.
    """
    cfg = config or FeatureConfig()
    img = validate_image(img)
    if img.ndim != 2:
        raise ValueError("extract_features expects a grayscale image")
    h, w = img.shape
    levels = cfg.levels
    while levels > 1 and min(
        pyramid_level_dims(h, w, levels, cfg.scale_factor)[-1]
    ) < max(MIN_PYRAMID_DIM, 2 * DESCRIPTOR_MARGIN + 1):
        levels -= 1
    pyr = build_pyramid(img, levels, cfg.scale_factor)

    kps: list = []
    descs: list = []
    for level, (level_img, scale) in enumerate(zip(pyr.levels, pyr.scales)):
        lh, lw = level_img.shape
        score_map = fast_score_map(level_img, cfg.fast_threshold)
        local_max = ndimage.maximum_filter(score_map, size=3, mode="constant")
        ys, xs = np.nonzero((score_map == local_max) & (score_map > 0))
        if len(xs) == 0:
            continue
        m = DESCRIPTOR_MARGIN
        ok = (xs >= m) & (ys >= m) & (xs < lw - m) & (ys < lh - m)
        if not ok.any():
            continue
        xs = xs[ok]
        ys = ys[ok]
        scores = score_map[ys, xs].astype(np.float64)
        thetas = orientations(level_img, xs, ys)
        d = descriptors(level_img, xs, ys, thetas)
        rx, ry = refine_subpixel(score_map, xs, ys)
        for i in range(len(xs)):
            kps.append(
                Keypoint(
                    float(rx[i]) * scale,
                    float(ry[i]) * scale,
                    level,
                    float(thetas[i]),
                    float(scores[i]),
                )
            )
        descs.append(d)
    if not kps:
        return [], np.zeros((0, 32), dtype=np.uint8)
    desc = np.concatenate(descs, axis=0)

    # Budget via per-cell capacity, then a global score cut.
    n_cells = max(1, -(-w // cfg.grid_cell)) * max(1, -(-h // cfg.grid_cell))
    max_per_cell = max(1, -(-cfg.n_features // n_cells))
    index_of = {id(k): i for i, k in enumerate(kps)}
    surviving = distribute_grid(kps, (w, h), cfg.grid_cell, max_per_cell)
    sel = [index_of[id(k)] for k in surviving]
    if len(sel) > cfg.n_features:
        sel.sort(key=lambda i: (-kps[i].score, i))
        sel = sel[: cfg.n_features]
    sel.sort(key=lambda i: (kps[i].level, kps[i].y, kps[i].x))
    return [kps[i] for i in sel], desc[sel]
