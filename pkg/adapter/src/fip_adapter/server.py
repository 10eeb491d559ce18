"""Request loop: one response per request, in order, until stdin closes."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

from . import modes
from .protocol import (
    BadRequest,
    TruncatedRequest,
    read_request,
    write_error_response,
    write_frame_response,
)

MODES = ("mock-echo", "mock-blend", "model")


@dataclass
class AdapterConfig:
    mode: str = "mock-echo"
    weights: str | None = None
    device: str = "cpu"
    die_mid_response: bool = False  # protocol fault-injection hook for tests

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "model" and not self.weights:
            raise ValueError("model mode requires --weights")


def build_synthesizer(config: AdapterConfig):
    if config.mode == "mock-echo":
        return modes.echo_midframe
    if config.mode == "mock-blend":
        return modes.blend_midframe
    return modes.ModelBackend(config.weights, config.device)


def serve(config: AdapterConfig, stdin, stdout) -> int:
    """Process requests until EOF; malformed requests get error responses."""
    synthesize = build_synthesizer(config)
    while True:
        try:
            request = read_request(stdin)
        except TruncatedRequest as exc:
            write_error_response(stdout, f"truncated request: {exc}")
            return 0
        except BadRequest as exc:
            write_error_response(stdout, str(exc))
            continue
        if request is None:
            return 0
        try:
            frame = synthesize(request.frame_a, request.frame_b)
        except Exception as exc:  # report, keep serving
            write_error_response(stdout, f"synthesis failed: {exc}")
            continue
        if config.die_mid_response:
            data = frame.tobytes()
            h, w = frame.shape[:2]
            ch = 1 if frame.ndim == 2 else frame.shape[2]
            from .protocol import HEADER, MAGIC

            stdout.write(MAGIC + HEADER.pack(0, w, h, ch) + data[: len(data) // 2])
            stdout.flush()
            return 1
        write_frame_response(stdout, frame)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fip-adapter",
        description="Frame-exchange interpolation backend (child process)",
    )
    parser.add_argument("--mode", choices=MODES, default="mock-echo")
    parser.add_argument("--weights", help="TorchScript checkpoint for model mode")
    parser.add_argument("--device", default="cpu")
    parser.add_argument(
        "--die-mid-response",
        action="store_true",
        help=argparse.SUPPRESS,  # fault-injection hook for protocol tests
    )
    args = parser.parse_args(argv)
    try:
        config = AdapterConfig(args.mode, args.weights, args.device, args.die_mid_response)
        return serve(config, sys.stdin.buffer, sys.stdout.buffer)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
