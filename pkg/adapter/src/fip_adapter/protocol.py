"""Binary frame-exchange framing (little-endian, stdin/stdout).

Request:  magic "FIP1" | mode u8 (1 = mid-frame) | width u32 | height u32 |
          channels u8 | frame A bytes | frame B bytes.
Response: magic "FIP1" | status u8 | on 0: width u32 | height u32 |
          channels u8 | frame bytes; on 1: message length u32 | UTF-8 text.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"FIP1"
MODE_MIDFRAME = 1
HEADER = struct.Struct("<BIIB")


class TruncatedRequest(Exception):
    """The stream ended inside a request."""


class BadRequest(Exception):
    """Framing is intact but the request is invalid (mode, dims)."""


@dataclass
class Request:
    mode: int
    frame_a: np.ndarray
    frame_b: np.ndarray


def read_exact(stream, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise TruncatedRequest(f"stream ended after {len(buf)} of {n} bytes")
        buf += chunk
    return buf


def read_request(stream) -> Request | None:
    """One request from the stream; None on clean EOF before any byte."""
    first = stream.read(1)
    if not first:
        return None
    magic = first + read_exact(stream, 3)
    if magic != MAGIC:
        raise BadRequest(f"bad request magic {magic!r}")
    mode, width, height, ch = HEADER.unpack(read_exact(stream, HEADER.size))
    if ch not in (1, 3):
        raise BadRequest(f"unsupported channel count {ch}")
    if width < 1 or height < 1 or width * height > 64_000_000:
        raise BadRequest(f"implausible dimensions {width}x{height}")
    n = width * height * ch
    shape = (height, width) if ch == 1 else (height, width, ch)
    a = np.frombuffer(read_exact(stream, n), dtype=np.uint8).reshape(shape)
    b = np.frombuffer(read_exact(stream, n), dtype=np.uint8).reshape(shape)
    if mode != MODE_MIDFRAME:
        raise BadRequest(f"unknown mode {mode}")
    return Request(mode, a, b)


def write_frame_response(stream, frame: np.ndarray) -> None:
    h, w = frame.shape[:2]
    ch = 1 if frame.ndim == 2 else frame.shape[2]
    stream.write(MAGIC)
    stream.write(HEADER.pack(0, w, h, ch))
    stream.write(frame.tobytes())
    stream.flush()


def write_error_response(stream, message: str) -> None:
    data = message.encode("utf-8")
    stream.write(MAGIC)
    stream.write(struct.pack("<BI", 1, len(data)))
    stream.write(data)
    stream.flush()
