#!/usr/bin/env python3
"""Regenerate the shared frame-exchange fixture suite.

Requests are produced by the tracker-side protocol writer; the expected
responses encode what a conforming backend must reply in each mock mode.
Both the tracker's client tests and the adapter's server tests consume
these files, pinning the wire format from both ends.
"""

import io
import struct
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from spinvo.interp import PROTOCOL_MAGIC, write_midframe_request  # noqa: E402

OUT = Path(__file__).resolve().parent.parent / "protocol_fixtures"


def frame_response(frame: np.ndarray) -> bytes:
    h, w = frame.shape[:2]
    ch = 1 if frame.ndim == 2 else frame.shape[2]
    return PROTOCOL_MAGIC + struct.pack("<BIIB", 0, w, h, ch) + frame.tobytes()


def blend(a, b):
    return ((a.astype(np.uint16) + b.astype(np.uint16) + 1) // 2).astype(np.uint8)


def main():
    OUT.mkdir(exist_ok=True)
    rng = np.random.default_rng(0xF1B)
    cases = [
        ("gray_small", rng.integers(0, 256, size=(6, 8)).astype(np.uint8),
         rng.integers(0, 256, size=(6, 8)).astype(np.uint8)),
        ("rgb_small", rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8),
         rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)),
        ("gray_odd", rng.integers(0, 256, size=(17, 13)).astype(np.uint8),
         rng.integers(0, 256, size=(17, 13)).astype(np.uint8)),
        ("rgb_larger", rng.integers(0, 256, size=(24, 32, 3)).astype(np.uint8),
         rng.integers(0, 256, size=(24, 32, 3)).astype(np.uint8)),
    ]
    for name, a, b in cases:
        buf = io.BytesIO()
        write_midframe_request(buf, a, b)
        (OUT / f"{name}_request.bin").write_bytes(buf.getvalue())
        (OUT / f"{name}_echo_response.bin").write_bytes(frame_response(a))
        (OUT / f"{name}_blend_response.bin").write_bytes(frame_response(blend(a, b)))
        print(f"wrote {name}: {len(buf.getvalue())} request bytes")


if __name__ == "__main__":
    main()
