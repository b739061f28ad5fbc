"""Per-layer dynamic fixed-point quantization of weight magnitudes."""

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateRangeError


@dataclass(frozen=True)
class QuantConfig:
    """Bit width of a code and how it splits into crossbar slices."""

    n_bits: int = 8
    slice_width: int = 2

    def __post_init__(self):
        if not 1 <= self.slice_width <= self.n_bits:
            raise ValueError("need 1 <= slice_width <= n_bits")
        if self.n_bits % self.slice_width:
            raise ValueError(f"slice_width {self.slice_width} does not divide n_bits {self.n_bits}")

    @property
    def num_slices(self):
        return self.n_bits // self.slice_width

    @property
    def max_code(self):
        return (1 << self.n_bits) - 1

    @property
    def radix(self):
        return 1 << self.slice_width


DEFAULT_CONFIG = QuantConfig()


@dataclass(frozen=True)
class QuantizedLayer:
    """Unsigned codes plus a separate sign mask and the layer scale exponent.

    ``codes`` is an int64 array in ``[0, 2**n_bits - 1]``; ``signs`` is an
    int8 array of +1/-1 with +1 wherever the code is zero.
    """

    codes: np.ndarray
    signs: np.ndarray
    scale_exp: int
    config: QuantConfig = DEFAULT_CONFIG

    @property
    def q_step(self):
        return math.ldexp(1.0, self.scale_exp - self.config.n_bits)

    @property
    def shape(self):
        return self.codes.shape


def _ceil_log2(m):
    # m = mant * 2**e with mant in [0.5, 1); m is a power of two iff mant == 0.5
    mant, e = math.frexp(m)
    return e - 1 if mant == 0.5 else e


def dynamic_range(W):
    """Smallest integer ``S`` with ``max|w| <= 2**S``.

    Computed from the float exponent, so powers of two are exact.

    >>> dynamic_range(np.array([[0.9, -0.2]]))
    0
    >>> dynamic_range(np.array([[2.5]]))
    2
    """
    W = np.asarray(W)
    if W.size == 0:
        raise DegenerateRangeError("layer has no elements")
    m = float(np.max(np.abs(W)))
    if m == 0.0:
        raise DegenerateRangeError("all-zero layer has no dynamic range")
    if not math.isfinite(m):
        raise ValueError("layer contains non-finite values")
    return _ceil_log2(m)


def quantize_layer(W, config=DEFAULT_CONFIG, *, allow_degenerate=False, scale_exp=None):
    """Quantize a weight matrix to ``n_bits`` unsigned codes.

    ``code = floor(|w| / q_step)`` with ``q_step = 2**(S - n_bits)``, clamped
    to the top code (a weight equal to ``2**S`` would otherwise overflow).

    With ``allow_degenerate=True`` an all-zero layer maps to ``S = 0`` and all
    codes zero instead of raising :class:`DegenerateRangeError`.

    ``scale_exp`` holds the range exponent fixed instead of recomputing it.
    Re-quantizing dequantized values at their own exponent is exact; with a
    recomputed exponent a layer whose largest code is ``2**(n_bits-1)``
    dequantizes to exactly half its range, drops one exponent, and its
    largest element clamps.
    """
    W = np.asarray(W)
    if scale_exp is not None:
        S = int(scale_exp)
    else:
        try:
            S = dynamic_range(W)
        except DegenerateRangeError:
            if not allow_degenerate or W.size == 0:
                raise
            S = 0
    mag = np.ldexp(np.abs(W).astype(np.float64), config.n_bits - S)
    codes = np.minimum(np.floor(mag), config.max_code).astype(np.int64)
    signs = np.where((W < 0) & (codes > 0), -1, 1).astype(np.int8)
    return QuantizedLayer(codes=codes, signs=signs, scale_exp=S, config=config)


def dequantize(q, dtype=np.float64):
    """Recover ``sign * code * q_step``; exact in binary floating point."""
    vals = np.ldexp(q.codes.astype(np.float64), q.scale_exp - q.config.n_bits)
    return (q.signs * vals).astype(dtype)


def fake_quantize(W, config=DEFAULT_CONFIG):
    """``dequantize(quantize_layer(W))`` that tolerates all-zero layers, in ``W``'s dtype."""
    W = np.asarray(W)
    q = quantize_layer(W, config, allow_degenerate=True)
    return dequantize(q, dtype=W.dtype), q
