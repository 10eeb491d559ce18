"""Frame-interpolation backend adapter speaking the binary frame-exchange
protocol on stdin/stdout. Mock modes (echo, blend) are dependency-free;
model mode wraps a TorchScript mid-frame interpolator."""

__version__ = "0.1.0"

from .protocol import MAGIC, MODE_MIDFRAME  # noqa: F401
from .server import AdapterConfig, serve  # noqa: F401
