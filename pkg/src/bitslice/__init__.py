"""Bit-slice sparsity for dynamic fixed-point networks on ReRAM crossbars."""

from .estimator import BitSliceMLPClassifier
from .exceptions import DegenerateRangeError, DivergenceError, FormatError, ShapeError
from .quant import QuantConfig, QuantizedLayer, dequantize, dynamic_range, quantize_layer
from .slicekit import (
    BitSlicedLayer,
    SparsityReport,
    bit_slice,
    bl1_gradient,
    bl1_penalty,
    l1_penalty_and_gradient,
    sparsity_report,
)

__version__ = "0.1.0"

__all__ = [
    "BitSliceMLPClassifier",
    "BitSlicedLayer",
    "DegenerateRangeError",
    "DivergenceError",
    "FormatError",
    "QuantConfig",
    "QuantizedLayer",
    "ShapeError",
    "SparsityReport",
    "bit_slice",
    "bl1_gradient",
    "bl1_penalty",
    "dequantize",
    "dynamic_range",
    "l1_penalty_and_gradient",
    "quantize_layer",
    "sparsity_report",
]
