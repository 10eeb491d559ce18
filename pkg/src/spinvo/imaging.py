"""8-bit image buffers, grayscale conversion, pyramids, sampling, PNG I/O.

Images are plain numpy arrays: grayscale ``(h, w)`` or channel-interleaved
color ``(h, w, 3)``, dtype uint8. Depth maps are float arrays in meters,
with 0 marking invalid pixels. Filtering uses clamp-to-edge borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

MIN_PYRAMID_DIM = 16


def validate_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got dtype {img.dtype}")
    if img.ndim == 2:
        h, w = img.shape
    elif img.ndim == 3 and img.shape[2] == 3:
        h, w = img.shape[:2]
    else:
        raise ValueError(f"expected (h, w) or (h, w, 3) image, got shape {img.shape}")
    if h < 1 or w < 1:
        raise ValueError("image dimensions must be >= 1")
    return img


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Weighted RGB to gray: y = round(0.299 r + 0.587 g + 0.114 b)."""
    img = validate_image(img)
    if img.ndim != 3:
        raise ValueError("to_grayscale expects a 3-channel image")
    rgb = img.astype(np.float64)
    y = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


@dataclass
class Pyramid:
    """Multi-scale stack; level 0 is the source image."""

    levels: list = field(default_factory=list)
    scale_factor: float = 1.2

    @property
    def scales(self) -> list:
        """Level-k coordinates map to level 0 by multiplying with scales[k]."""
        return [self.scale_factor**k for k in range(len(self.levels))]

    def __len__(self):
        return len(self.levels)


def pyramid_level_dims(height: int, width: int, levels: int, scale_factor: float):
    return [
        (int(height / scale_factor**k), int(width / scale_factor**k))
        for k in range(levels)
    ]


def build_pyramid(img: np.ndarray, levels: int, scale_factor: float = 1.2) -> Pyramid:
    """Box-filter + bilinear downsampling pyramid.

    Level k has dimensions floor(dim0 / scale_factor**k) and is resampled
    from level k-1 with the origin anchored, so level-k pixel (x, y)
    corresponds to level-0 position (x * f**k, y * f**k).
    """
    img = validate_image(img)
    if img.ndim != 2:
        raise ValueError("pyramids are built from grayscale images")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if scale_factor <= 1.0:
        raise ValueError("scale_factor must be > 1")
    h, w = img.shape
    dims = pyramid_level_dims(h, w, levels, scale_factor)
    if min(dims[-1]) < MIN_PYRAMID_DIM:
        raise ValueError(
            f"pyramid level {levels - 1} would be {dims[-1]}, "
            f"below the {MIN_PYRAMID_DIM} px minimum"
        )
    out = [img]
    for k in range(1, levels):
        prev = out[-1].astype(np.float32)
        blurred = ndimage.uniform_filter(prev, size=3, mode="nearest")
        hk, wk = dims[k]
        ys = np.minimum(np.arange(hk) * scale_factor, prev.shape[0] - 1.0)
        xs = np.minimum(np.arange(wk) * scale_factor, prev.shape[1] - 1.0)
        grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
        level = ndimage.map_coordinates(blurred, [grid_y, grid_x], order=1, mode="nearest")
        out.append(np.clip(np.rint(level), 0, 255).astype(np.uint8))
    return Pyramid(out, scale_factor)


def bilinear_sample(img: np.ndarray, x, y):
    """Bilinear interpolation of the four neighbors at real (x, y).

    Accepts scalars or equally shaped arrays; coordinates must lie inside
    [0, w-1] x [0, h-1].
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("bilinear_sample expects a single-channel image")
    h, w = img.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x < 0) or np.any(x > w - 1) or np.any(y < 0) or np.any(y > h - 1):
        raise ValueError("sample coordinates out of range")
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    v = img.astype(np.float64)
    top = v[y0, x0] * (1 - fx) + v[y0, x1] * fx
    bot = v[y1, x0] * (1 - fx) + v[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    return float(out) if out.ndim == 0 else out


def sample_clamped(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sampling with clamp-to-edge for out-of-range coordinates."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None] if img.ndim == 3 else x - x0
    fy = (y - y0)[..., None] if img.ndim == 3 else y - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def load_png(path) -> np.ndarray:
    """8-bit RGB or grayscale PNG as (h, w, 3) or (h, w) uint8."""
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P"):
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
        if im.mode in ("L", "1"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        raise ValueError(f"unsupported PNG mode {im.mode!r} in {path}")


def save_png(path, img: np.ndarray) -> None:
    img = validate_image(img)
    Image.fromarray(img).save(path, format="PNG")


def load_depth_png(path, depth_scale: float = 5000.0) -> np.ndarray:
    """16-bit depth PNG to meters (value / depth_scale); 0 stays invalid."""
    with Image.open(path) as im:
        raw = np.asarray(im, dtype=np.float64)
    if raw.ndim != 2:
        raise ValueError(f"depth PNG must be single channel: {path}")
    return raw / depth_scale


def save_depth_png(path, depth: np.ndarray, depth_scale: float = 5000.0) -> None:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2 or np.any(depth < 0):
        raise ValueError("depth map must be a non-negative (h, w) array")
    raw = np.clip(np.rint(depth * depth_scale), 0, 65535).astype(np.uint16)
    Image.fromarray(raw).save(path, format="PNG")
