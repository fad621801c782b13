"""Efficiency-aware filter pruning with weight-dependent gates."""

from gatecrush._core import (
    LpNet,
    binary_activation,
    encoding_length,
    flops_breakdown,
    flops_network,
    full_width_encoding,
    geometry,
    measure_latency,
    presets,
    read_checkpoint,
    run,
    sample_encodings,
    surrogate_grad,
    surrogate_lambda,
    __version__,
)

__all__ = [
    "LpNet",
    "binary_activation",
    "encoding_length",
    "flops_breakdown",
    "flops_network",
    "full_width_encoding",
    "geometry",
    "measure_latency",
    "presets",
    "read_checkpoint",
    "run",
    "sample_encodings",
    "surrogate_grad",
    "surrogate_lambda",
    "__version__",
]
