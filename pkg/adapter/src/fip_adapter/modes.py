"""Mid-frame synthesis modes: dependency-free mocks plus model inference."""

from __future__ import annotations

import numpy as np

MODEL_STRIDE = 32  # inputs are padded to this multiple before inference


def echo_midframe(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a


def blend_midframe(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rounded per-pixel average; byte-compatible with the tracker's blend."""
    return ((a.astype(np.uint16) + b.astype(np.uint16) + 1) // 2).astype(np.uint8)


class ModelBackend:
    """TorchScript separable-convolution interpolator.

    The module must map two (1, c, h, w) float tensors in [0, 1] to one
    such tensor. Inputs are replicate-padded to the model's stride
    multiple and the output is cropped back, so arbitrary frame sizes
    work with encoder-decoder checkpoints.
    """

    def __init__(self, weights_path: str, device: str = "cpu"):
        import torch  # model mode only; mocks stay dependency-free

        self._torch = torch
        self.device = torch.device(device)
        self.module = torch.jit.load(weights_path, map_location=self.device)
        self.module.eval()

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        torch = self._torch
        squeeze = a.ndim == 2
        if squeeze:
            a = a[..., None]
            b = b[..., None]
        h, w = a.shape[:2]
        pad_h = (-h) % MODEL_STRIDE
        pad_w = (-w) % MODEL_STRIDE

        def prep(img):
            t = torch.from_numpy(img.astype(np.float32) / 255.0)
            t = t.permute(2, 0, 1).unsqueeze(0).to(self.device)
            if pad_h or pad_w:
                t = torch.nn.functional.pad(t, (0, pad_w, 0, pad_h), mode="replicate")
            return t

        with torch.no_grad():
            out = self.module(prep(a), prep(b))
        out = out[0, :, :h, :w].permute(1, 2, 0).cpu().numpy()
        out = np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8)
        return out[..., 0] if squeeze else out
