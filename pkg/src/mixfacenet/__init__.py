"""MixFaceNet: mixed-kernel face embedding networks on a small numpy engine."""

__version__ = "0.1.0"

from .config import NetworkConfig, preset, PRESETS
from .network import Network, build, forward, load_checkpoint, save_checkpoint, compare
from .complexity import cost_report, count_flops, count_macs, count_params
from .tensor import GradTape, Tensor

__all__ = [
    "NetworkConfig", "preset", "PRESETS", "Network", "build", "forward", "load_checkpoint",
    "save_checkpoint", "compare", "cost_report", "count_flops", "count_macs", "count_params",
    "GradTape", "Tensor", "__version__",
]
