import io
import struct
from pathlib import Path

import numpy as np
import pytest

from fip_adapter.protocol import (
    HEADER,
    MAGIC,
    MODE_MIDFRAME,
    read_request,
    write_frame_response,
)
from fip_adapter.server import MODES, AdapterConfig, serve

FIXTURES = Path(__file__).resolve().parents[2] / "protocol_fixtures"


def make_request(a: np.ndarray, b: np.ndarray, mode: int = MODE_MIDFRAME) -> bytes:
    h, w = a.shape[:2]
    ch = 1 if a.ndim == 2 else a.shape[2]
    return MAGIC + HEADER.pack(mode, w, h, ch) + a.tobytes() + b.tobytes()


def run_serve(mode: str, payload: bytes, **cfg) -> bytes:
    out = io.BytesIO()
    serve(AdapterConfig(mode=mode, **cfg), io.BytesIO(payload), out)
    return out.getvalue()


def parse_frame_response(data: bytes):
    assert data[:4] == MAGIC
    status = data[4]
    assert status == 0, data[4:]
    w, h, ch = struct.unpack("<IIB", data[5:14])
    frame = np.frombuffer(data[14 : 14 + w * h * ch], dtype=np.uint8)
    return frame.reshape((h, w) if ch == 1 else (h, w, ch)), data[14 + w * h * ch :]


def parse_error_response(data: bytes):
    assert data[:4] == MAGIC
    assert data[4] == 1
    (n,) = struct.unpack("<I", data[5:9])
    return data[9 : 9 + n].decode("utf-8"), data[9 + n :]


class TestMockModes:
    def test_echo_returns_frame_a_exactly(self, rng):
        a = rng.integers(0, 256, size=(9, 11)).astype(np.uint8)
        b = rng.integers(0, 256, size=(9, 11)).astype(np.uint8)
        frame, rest = parse_frame_response(run_serve("mock-echo", make_request(a, b)))
        assert rest == b""
        assert np.array_equal(frame, a)

    def test_blend_average(self, rng):
        a = rng.integers(0, 256, size=(6, 4, 3)).astype(np.uint8)
        b = rng.integers(0, 256, size=(6, 4, 3)).astype(np.uint8)
        frame, _ = parse_frame_response(run_serve("mock-blend", make_request(a, b)))
        expected = ((a.astype(int) + b.astype(int) + 1) // 2).astype(np.uint8)
        assert np.array_equal(frame, expected)

    def test_multiple_requests_in_order(self, rng):
        frames = [rng.integers(0, 256, size=(5, 5)).astype(np.uint8) for _ in range(6)]
        payload = b"".join(
            make_request(frames[i], frames[i + 1]) for i in range(0, 6, 2)
        )
        data = run_serve("mock-echo", payload)
        for i in range(0, 6, 2):
            frame, data = parse_frame_response(data)
            assert np.array_equal(frame, frames[i])
        assert data == b""

    def test_clean_eof_no_output(self):
        assert run_serve("mock-echo", b"") == b""


class TestFaults:
    def test_truncated_request_error_response(self, rng):
        a = rng.integers(0, 256, size=(8, 8)).astype(np.uint8)
        payload = make_request(a, a)[:-17]
        msg, rest = parse_error_response(run_serve("mock-echo", payload))
        assert "truncated" in msg
        assert rest == b""

    def test_unknown_mode_error_then_continue(self, rng):
        a = rng.integers(0, 256, size=(4, 4)).astype(np.uint8)
        payload = make_request(a, a, mode=9) + make_request(a, a)
        data = run_serve("mock-echo", payload)
        msg, rest = parse_error_response(data)
        assert "mode" in msg
        frame, rest = parse_frame_response(rest)
        assert np.array_equal(frame, a)

    def test_bad_magic_error_response(self, rng):
        a = rng.integers(0, 256, size=(4, 4)).astype(np.uint8)
        payload = b"JUNK" + make_request(a, a)[4:]
        msg, _ = parse_error_response(run_serve("mock-echo", payload))
        assert "magic" in msg

    def test_implausible_dims_rejected(self):
        payload = MAGIC + HEADER.pack(MODE_MIDFRAME, 2**31, 2**31, 1)
        msg, _ = parse_error_response(run_serve("mock-echo", payload))
        assert "dimensions" in msg or "truncated" in msg


class TestConfig:
    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            AdapterConfig(mode="nope")

    def test_model_requires_weights(self):
        with pytest.raises(ValueError):
            AdapterConfig(mode="model")

    def test_modes_list(self):
        assert set(MODES) == {"mock-echo", "mock-blend", "model"}


class TestSharedFixtures:
    """The shared binary suite pins the wire format from both ends."""

    @pytest.mark.parametrize("mode,suffix", [("mock-echo", "echo"), ("mock-blend", "blend")])
    def test_expected_responses(self, mode, suffix):
        requests = sorted(FIXTURES.glob("*_request.bin"))
        assert requests, "fixture suite missing"
        for req in requests:
            expected = req.with_name(req.name.replace("_request.bin", f"_{suffix}_response.bin"))
            got = run_serve(mode, req.read_bytes())
            assert got == expected.read_bytes(), req.name

    def test_round_trip_through_own_writer(self, rng):
        a = rng.integers(0, 256, size=(7, 9)).astype(np.uint8)
        buf = io.BytesIO()
        write_frame_response(buf, a)
        frame, rest = parse_frame_response(buf.getvalue())
        assert np.array_equal(frame, a) and rest == b""

    def test_request_parser_round_trip(self, rng):
        a = rng.integers(0, 256, size=(7, 9, 3)).astype(np.uint8)
        b = rng.integers(0, 256, size=(7, 9, 3)).astype(np.uint8)
        req = read_request(io.BytesIO(make_request(a, b)))
        assert np.array_equal(req.frame_a, a)
        assert np.array_equal(req.frame_b, b)


class TestModelMode:
    def test_tiny_torchscript_module(self, tmp_path, rng):
        torch = pytest.importorskip("torch")

        class Avg(torch.nn.Module):
            def forward(self, a, b):
                return (a + b) / 2.0

        path = tmp_path / "avg.pt"
        torch.jit.script(Avg()).save(str(path))
        a = rng.integers(0, 256, size=(20, 30, 3)).astype(np.uint8)
        b = rng.integers(0, 256, size=(20, 30, 3)).astype(np.uint8)
        data = run_serve("model", make_request(a, b), weights=str(path))
        frame, rest = parse_frame_response(data)
        assert rest == b""
        assert frame.shape == a.shape
        expected = np.clip(
            np.rint((a.astype(np.float64) + b.astype(np.float64)) / 2.0), 0, 255
        )
        assert np.abs(frame.astype(int) - expected).max() <= 1
