"""Mid-frame synthesis between two frames.

Backends share one capability: given frames A and B, produce the t = 0.5
intermediate frame with identical dimensions and channels. Built-ins are
a per-pixel blend, a coarse-to-fine Lucas-Kanade flow warper, and a
separable per-pixel kernel synthesizer; external backends are child
processes speaking the binary frame-exchange protocol on stdin/stdout.
"""

from __future__ import annotations

import os
import select
import shlex
import struct
import subprocess
import time
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BackendUnavailableError, ProtocolError
from .imaging import channels, sample_clamped, to_grayscale, validate_image

FB_CONSISTENCY_PX = 1.5
PROTOCOL_MAGIC = b"FIP1"
MODE_MIDFRAME = 1


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = validate_image(a)
    b = validate_image(b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def blend_midframe(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel rounded average of the two frames."""
    a, b = _check_pair(a, b)
    return ((a.astype(np.uint16) + b.astype(np.uint16) + 1) // 2).astype(np.uint8)


def global_shift(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dominant integer translation a -> b by phase correlation.

    Handles displacements far beyond the differential pull-in range of
    Lucas-Kanade; rotation about the view axis of a forward-facing camera
    is predominantly a large horizontal shift, which is the case that
    matters here.
    """
    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    fa = np.fft.fft2(af - af.mean())
    fb = np.fft.fft2(bf - bf.mean())
    cross = fa.conj() * fb
    denom = np.abs(cross)
    cross = cross / np.where(denom > 1e-9, denom, 1.0)
    corr = np.abs(np.fft.ifft2(cross))
    dy, dx = np.unravel_index(int(np.argmax(corr)), corr.shape)
    h, w = a.shape
    if dy > h // 2:
        dy -= h
    if dx > w // 2:
        dx -= w
    return np.array([float(dx), float(dy)])


def estimate_flow(
    a: np.ndarray,
    b: np.ndarray,
    levels: int = 5,
    window: int = 11,
    iterations: int = 4,
    eig_threshold: float = 25.0,
) -> np.ndarray:
    """Dense displacement field a -> b by coarse-to-fine Lucas-Kanade.

    Returns (h, w, 2) float32 with [dx, dy] per pixel, meaning pixel
    (x, y) of `a` appears near (x + dx, y + dy) in `b`. The coarsest
    level starts from the phase-correlation global shift; each pyramid
    level then runs `iterations` of windowed least squares, and pixels
    whose structure-tensor minimum eigenvalue falls below
    `eig_threshold` keep the flow inherited from the coarser level.
    """
    a, b = _check_pair(a, b)
    if a.ndim != 2:
        raise ValueError("estimate_flow expects grayscale frames")
    if window < 5 or window % 2 == 0:
        raise ValueError("window must be odd and >= 5")
    h, w = a.shape
    # Factor-2 pyramid, clamped so the coarsest level stays usable.
    sizes = [(h, w)]
    for _ in range(1, levels):
        nh, nw = sizes[-1][0] // 2, sizes[-1][1] // 2
        if min(nh, nw) < window:
            break
        sizes.append((nh, nw))

    def shrink(img, size):
        sh, sw = size
        blurred = ndimage.uniform_filter(img, size=3, mode="nearest")
        ys = np.linspace(0, img.shape[0] - 1, sh)
        xs = np.linspace(0, img.shape[1] - 1, sw)
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        return ndimage.map_coordinates(blurred, [gy, gx], order=1, mode="nearest")

    af = a.astype(np.float64)
    bf = b.astype(np.float64)
    pyr_a = [af]
    pyr_b = [bf]
    for size in sizes[1:]:
        pyr_a.append(shrink(pyr_a[-1], size))
        pyr_b.append(shrink(pyr_b[-1], size))

    flow = np.zeros(sizes[-1] + (2,), dtype=np.float64)
    flow[...] = global_shift(a, b) / 2.0 ** (len(sizes) - 1)
    for lvl in range(len(sizes) - 1, -1, -1):
        la, lb = pyr_a[lvl], pyr_b[lvl]
        lh, lw = la.shape
        if flow.shape[:2] != (lh, lw):
            scale_y = lh / flow.shape[0]
            scale_x = lw / flow.shape[1]
            ys = np.linspace(0, flow.shape[0] - 1, lh)
            xs = np.linspace(0, flow.shape[1] - 1, lw)
            gy, gx = np.meshgrid(ys, xs, indexing="ij")
            u = ndimage.map_coordinates(flow[..., 0], [gy, gx], order=1, mode="nearest") * scale_x
            v = ndimage.map_coordinates(flow[..., 1], [gy, gx], order=1, mode="nearest") * scale_y
            flow = np.stack([u, v], axis=-1)
        gy_a, gx_a = np.gradient(la)
        ygrid, xgrid = np.mgrid[0:lh, 0:lw].astype(np.float64)
        box = lambda img: ndimage.uniform_filter(img, size=window, mode="nearest")
        for _ in range(iterations):
            warped = sample_clamped(lb, xgrid + flow[..., 0], ygrid + flow[..., 1])
            gy_w, gx_w = np.gradient(warped)
            gx = 0.5 * (gx_a + gx_w)
            gy = 0.5 * (gy_a + gy_w)
            err = warped - la
            sxx = box(gx * gx)
            sxy = box(gx * gy)
            syy = box(gy * gy)
            disc = np.sqrt((sxx - syy) ** 2 + 4.0 * sxy**2)
            min_eig = 0.5 * (sxx + syy - disc)
            det = sxx * syy - sxy * sxy
            # Pixels below the texture threshold get no data update and
            # keep the flow inherited from the coarser level.
            good = (min_eig > eig_threshold) & (det > 1e-9)
            safe_det = np.where(good, det, 1.0)
            bx = box(gx * err)
            by = box(gy * err)
            du = np.where(good, -(syy * bx - sxy * by) / safe_det, 0.0)
            dv = np.where(good, -(sxx * by - sxy * bx) / safe_det, 0.0)
            # One linearization step is only trustworthy locally.
            step = 1.5
            flow[..., 0] += np.clip(du, -step, step)
            flow[..., 1] += np.clip(dv, -step, step)
            # Light spatial regularization; preserves constant and affine
            # fields exactly away from borders.
            flow[..., 0] = ndimage.uniform_filter(flow[..., 0], size=5, mode="nearest")
            flow[..., 1] = ndimage.uniform_filter(flow[..., 1], size=5, mode="nearest")
    return flow.astype(np.float32)


def _warp_half(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Pull the image halfway along the flow (backward sampling)."""
    h, w = img.shape[:2]
    ygrid, xgrid = np.mgrid[0:h, 0:w].astype(np.float64)
    return sample_clamped(
        img.astype(np.float64), xgrid - 0.5 * flow[..., 0], ygrid - 0.5 * flow[..., 1]
    )


def _consistency(f_fwd: np.ndarray, f_bwd: np.ndarray) -> np.ndarray:
    """Forward-backward error |f_fwd(x) + f_bwd(x + f_fwd(x))| per pixel."""
    h, w = f_fwd.shape[:2]
    ygrid, xgrid = np.mgrid[0:h, 0:w].astype(np.float64)
    bx = sample_clamped(f_bwd[..., 0], xgrid + f_fwd[..., 0], ygrid + f_fwd[..., 1])
    by = sample_clamped(f_bwd[..., 1], xgrid + f_fwd[..., 0], ygrid + f_fwd[..., 1])
    return np.hypot(f_fwd[..., 0] + bx, f_fwd[..., 1] + by)


def flow_midframe(a: np.ndarray, b: np.ndarray, **flow_kwargs) -> np.ndarray:
    """Mid-frame by symmetric half-flow warping with occlusion fallback.

    Both frames are warped half a step toward each other and averaged;
    pixels failing the 1.5 px forward-backward consistency check fall
    back to whichever side is self-consistent there.
    """
    a, b = _check_pair(a, b)
    ga = to_grayscale(a) if a.ndim == 3 else a
    gb = to_grayscale(b) if b.ndim == 3 else b
    f_ab = estimate_flow(ga, gb, **flow_kwargs).astype(np.float64)
    f_ba = estimate_flow(gb, ga, **flow_kwargs).astype(np.float64)
    warp_a = _warp_half(a, f_ab)
    warp_b = _warp_half(b, f_ba)
    c_a = _consistency(f_ab, f_ba)
    c_b = _consistency(f_ba, f_ab)
    consistent = c_a <= FB_CONSISTENCY_PX
    prefer_a = c_a <= c_b
    if a.ndim == 3:
        consistent = consistent[..., None]
        prefer_a = prefer_a[..., None]
    mid = np.where(consistent, 0.5 * (warp_a + warp_b), np.where(prefer_a, warp_a, warp_b))
    return np.clip(np.rint(mid), 0, 255).astype(np.uint8)


@dataclass
class SeparableKernelField:
    """Per-pixel 1D kernel quadruple (vertical/horizontal for each frame)."""

    k1v: np.ndarray
    k1h: np.ndarray
    k2v: np.ndarray
    k2h: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(k, dtype=np.float64) for k in (self.k1v, self.k1h, self.k2v, self.k2h)]
        shape = arrs[0].shape
        if len(shape) != 3:
            raise ValueError("kernel arrays must be (h, w, n)")
        for k in arrs:
            if k.shape != shape:
                raise ValueError("all four kernel arrays must share one shape")
            if not np.all(np.isfinite(k)):
                raise ValueError("kernel weights must be finite")
        if shape[2] % 2 == 0 or shape[2] < 1:
            raise ValueError("kernel length must be odd and >= 1")
        self.k1v, self.k1h, self.k2v, self.k2h = arrs

    @property
    def n(self) -> int:
        return self.k1v.shape[2]


def _sepconv_one(img: np.ndarray, kv: np.ndarray, kh: np.ndarray) -> np.ndarray:
    """Sum_i sum_j kv(i) kh(j) img(y+i-c, x+j-c) with edge clamping."""
    h, w = img.shape
    n = kv.shape[2]
    c = n // 2
    padded = np.pad(img.astype(np.float64), c, mode="edge")
    out = np.zeros((h, w))
    for i in range(n):
        row = np.zeros((h, w))
        for j in range(n):
            row += kh[:, :, j] * padded[i : i + h, j : j + w]
        out += kv[:, :, i] * row
    return out


def sepconv_synthesize(
    a: np.ndarray,
    b: np.ndarray,
    kernels: SeparableKernelField,
    rounded: bool = True,
) -> np.ndarray:
    """Per-pixel separable-kernel synthesis from both frames.

    Output(x, y) accumulates the outer product of the pixel's vertical and
    horizontal kernels over a patch of A plus the same over B. With
    rounded=False the raw float accumulation is returned (no clamping),
    which is linear in the kernel weights.
    """
    a, b = _check_pair(a, b)
    h, w = a.shape[:2]
    if kernels.k1v.shape[:2] != (h, w):
        raise ValueError("kernel field dimensions must match the frames")
    if a.ndim == 2:
        out = _sepconv_one(a, kernels.k1v, kernels.k1h) + _sepconv_one(
            b, kernels.k2v, kernels.k2h
        )
    else:
        out = np.stack(
            [
                _sepconv_one(a[..., ch], kernels.k1v, kernels.k1h)
                + _sepconv_one(b[..., ch], kernels.k2v, kernels.k2h)
                for ch in range(a.shape[2])
            ],
            axis=-1,
        )
    if not rounded:
        return out
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


class BlendBackend:
    """Baseline backend: plain per-pixel average."""

    name = "blend"

    def midframe(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return blend_midframe(a, b)

    def close(self):
        pass


class FlowBackend:
    """Classical optical-flow backend (the built-in default)."""

    name = "flow"

    def __init__(self, levels: int = 5, window: int = 11, iterations: int = 4):
        self.levels = levels
        self.window = window
        self.iterations = iterations

    def midframe(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return flow_midframe(
            a, b, levels=self.levels, window=self.window, iterations=self.iterations
        )

    def close(self):
        pass


def write_midframe_request(stream, a: np.ndarray, b: np.ndarray) -> None:
    a, b = _check_pair(a, b)
    h, w = a.shape[:2]
    c = channels(a)
    stream.write(PROTOCOL_MAGIC)
    stream.write(struct.pack("<BIIB", MODE_MIDFRAME, w, h, c))
    stream.write(a.tobytes())
    stream.write(b.tobytes())
    stream.flush()


class ExternalBackend:
    """Client for a child process speaking the frame-exchange protocol.

    Strictly one request in flight; callers needing concurrency run one
    process per caller.
    """

    name = "external"

    def __init__(self, command, timeout: float = 30.0):
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self.timeout = timeout
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                bufsize=0,
            )
        except OSError as exc:
            raise BackendUnavailableError(f"cannot start backend: {exc}") from exc

    def _read_exact(self, n: int, deadline: float) -> bytes:
        fd = self._proc.stdout.fileno()
        buf = bytearray()
        while len(buf) < n:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BackendUnavailableError(
                    f"backend timed out after {self.timeout:.1f}s"
                )
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, n - len(buf))
            if chunk == b"":
                code = self._proc.poll()
                raise BackendUnavailableError(
                    f"backend closed its stream mid-response (exit code {code})"
                )
            buf.extend(chunk)
        return bytes(buf)

    def midframe(self, a: np.ndarray, b: np.ndarray, timeout: float | None = None) -> np.ndarray:
        a, b = _check_pair(a, b)
        if self._proc.poll() is not None:
            raise BackendUnavailableError(
                f"backend already exited with code {self._proc.returncode}"
            )
        deadline = time.monotonic() + (timeout if timeout is not None else self.timeout)
        try:
            write_midframe_request(self._proc.stdin, a, b)
        except (BrokenPipeError, OSError) as exc:
            raise BackendUnavailableError(f"backend pipe closed: {exc}") from exc
        magic = self._read_exact(4, deadline)
        if magic != PROTOCOL_MAGIC:
            raise ProtocolError(f"bad response magic {magic!r}")
        (status,) = struct.unpack("<B", self._read_exact(1, deadline))
        if status == 1:
            (msg_len,) = struct.unpack("<I", self._read_exact(4, deadline))
            msg = self._read_exact(msg_len, deadline).decode("utf-8", "replace")
            raise BackendUnavailableError(f"backend reported an error: {msg}")
        if status != 0:
            raise ProtocolError(f"unknown response status {status}")
        w, h, c = struct.unpack("<IIB", self._read_exact(9, deadline))
        eh, ew = a.shape[:2]
        if (w, h, c) != (ew, eh, channels(a)):
            raise ProtocolError(
                f"response dims {w}x{h}x{c} do not match request {ew}x{eh}x{channels(a)}"
            )
        data = self._read_exact(w * h * c, deadline)
        frame = np.frombuffer(data, dtype=np.uint8)
        return frame.reshape((h, w) if c == 1 else (h, w, c)).copy()

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def external_midframe(
    a: np.ndarray, b: np.ndarray, backend: ExternalBackend, timeout: float | None = None
) -> np.ndarray:
    """One protocol round trip against an already-running backend process."""
    return backend.midframe(a, b, timeout=timeout)
