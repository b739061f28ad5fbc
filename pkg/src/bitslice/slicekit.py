"""Bit-slicing of quantized codes, the bit-slice L1 penalty and sparsity statistics.

Slices are indexed by significance: ``slices[k]`` holds digit ``k`` of each
code in radix ``2**slice_width``, so ``slices[0]`` is the LSB slice and
``slices[-1]`` the MSB slice. Reports list ratios MSB first.
"""

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .quant import QuantConfig, QuantizedLayer


@dataclass(frozen=True)
class BitSlicedLayer:
    slices: np.ndarray  # (num_slices, *codes.shape), LSB first
    signs: np.ndarray
    scale_exp: int
    config: QuantConfig

    def msb_first(self):
        return self.slices[::-1]

    def reconstruct(self):
        radix = self.config.radix
        codes = np.zeros(self.slices.shape[1:], dtype=np.int64)
        for k in range(self.config.num_slices - 1, -1, -1):
            codes = codes * radix + self.slices[k]
        return codes


def slice_codes(codes, config):
    """Digits of ``codes`` in radix ``2**slice_width``, LSB first."""
    codes = np.asarray(codes, dtype=np.int64)
    mask = config.radix - 1
    return np.stack([(codes >> (config.slice_width * k)) & mask for k in range(config.num_slices)])


def bit_slice(q: QuantizedLayer) -> BitSlicedLayer:
    return BitSlicedLayer(slice_codes(q.codes, q.config), q.signs, q.scale_exp, q.config)


def digit_sum(codes, config):
    """Sum of the radix-``2**slice_width`` digits of each code."""
    return slice_codes(codes, config).sum(axis=0)


def digit_sum_table(config):
    """Digit sum of every code ``0 .. 2**n_bits - 1`` as a lookup table."""
    return digit_sum(np.arange(config.max_code + 1), config)


def digit_sum_slope(codes, config):
    """Per-unit-code slope of the piecewise-linear digit-sum relaxation at ``codes``.

    Uses the segment to the right of each code, ``ds(c+1) - ds(c)``, except at
    the top code where only the left segment exists.
    """
    codes = np.asarray(codes, dtype=np.int64)
    table = digit_sum_table(config)
    top = config.max_code
    right = np.minimum(codes + 1, top)
    left = np.minimum(codes, top)
    slope = table[right] - table[left]
    at_top = codes >= top
    if np.any(at_top):
        slope = np.where(at_top, table[top] - table[top - 1], slope)
    return slope


def bl1_penalty(q: QuantizedLayer) -> float:
    """Total digit sum over every element and slice of the layer."""
    return float(digit_sum(q.codes, q.config).sum())


def bl1_gradient(q: QuantizedLayer, estimator="relaxation"):
    """Gradient of :func:`bl1_penalty` with respect to the recovered weights.

    The digit sum is piecewise constant, so a surrogate is used.

    ``"relaxation"``
        slope of the linear interpolation of the digit sum between adjacent
        codes, ``sign * (ds(c+1) - ds(c)) / q_step``. Carries give negative
        values (63 -> 64 is -8 per code).
    ``"ste"``
        straight-through through every slice, ``sign * sum_k radix**-k / q_step``.
    """
    cfg = q.config
    if estimator == "relaxation":
        per_code = digit_sum_slope(q.codes, cfg).astype(np.float64)
    elif estimator == "ste":
        per_code = np.full(q.codes.shape, sum(float(cfg.radix) ** -k for k in range(cfg.num_slices)))
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    return q.signs * per_code / q.q_step


def l1_penalty_and_gradient(W):
    """Plain L1 penalty ``sum|w|`` and its subgradient ``sign(w)`` (0 at 0)."""
    W = np.asarray(W)
    return float(np.abs(W).sum()), np.sign(W)


@dataclass
class SparsityReport:
    """Model-wide nonzero ratio of each slice, MSB first, with mean and population std."""

    slice_ratios: list
    mean: float
    std: float
    accuracy: Optional[float] = None
    counts: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_ratios(cls, ratios: Sequence[float], accuracy=None):
        r = np.asarray(ratios, dtype=np.float64)
        if r.ndim != 1 or r.size == 0:
            raise ValueError("need a non-empty list of slice ratios")
        if np.any((r < 0) | (r > 1)):
            raise ValueError("slice ratios must lie in [0, 1]")
        return cls([float(v) for v in r], float(r.mean()), float(r.std()), accuracy)

    def to_dict(self):
        return {
            "slice_ratios": list(self.slice_ratios),
            "mean": self.mean,
            "std": self.std,
            "accuracy": self.accuracy,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        rep = cls.from_ratios(d["slice_ratios"], d.get("accuracy"))
        return rep

    def summary(self):
        """``mean±std`` in percent with two decimals."""
        return f"{100 * self.mean:.2f}±{100 * self.std:.2f}%"


def sparsity_report(layers: Sequence[QuantizedLayer], accuracy=None) -> SparsityReport:
    """Per-slice nonzero ratios pooled over every weight of every layer."""
    layers = list(layers)
    if not layers:
        raise ValueError("sparsity_report needs at least one layer")
    cfg = layers[0].config
    if any(q.config != cfg for q in layers):
        raise ValueError("all layers must share one QuantConfig")
    nonzero = np.zeros(cfg.num_slices, dtype=np.int64)
    total = 0
    for q in layers:
        nonzero += np.count_nonzero(slice_codes(q.codes, cfg), axis=tuple(range(1, q.codes.ndim + 1)))
        total += q.codes.size
    if total == 0:
        raise ValueError("model has no weights")
    rep = SparsityReport.from_ratios(nonzero[::-1] / total, accuracy)
    rep.counts = {"nonzero": nonzero[::-1].tolist(), "total": int(total)}
    return rep
