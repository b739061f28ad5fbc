"""Digital-functional model of bit-sliced weights on ReRAM crossbars.

Each slice group ``k`` (``XB_k``) holds digit ``k`` of every weight code.
Positive and negative weights go to separate tile sets. Weight rows drive
wordlines and columns drive bitlines. A bitline's accumulation for a 0/1
input bit plane is the integer proxy for its analog current, and it sets the
ADC resolution that group needs.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exceptions import ShapeError
from .quant import QuantizedLayer
from .slicekit import BitSlicedLayer, bit_slice

TILE = 128
BASELINE_BITS = 8
# published ADC resolution per slice group for bit-slice sparse models
TARGET_BITS = {3: 1, 2: 3, 1: 3, 0: 3}


def _ceil_div(a, b):
    return -(-a // b)


@dataclass
class CrossbarMapping:
    """Tiled cell values for every (layer, slice group, sign) triple.

    ``tiles[layer][group][sign]`` is an int array of shape
    ``(tile_rows, tile_cols, tile, tile)``; ``sign`` is 0 for the positive
    set and 1 for the negative set.
    """

    tiles: list
    layer_shapes: list
    q_steps: list
    num_groups: int
    radix: int
    signs: list
    tile: int = TILE

    def tile_count(self, layer):
        r, c = self.layer_shapes[layer]
        return _ceil_div(r, self.tile) * _ceil_div(c, self.tile)

    def locate(self, layer, row, col):
        """Where weight ``(row, col)`` of ``layer`` lives: ``(tile_row, tile_col, cell_row, cell_col)``.

        The same position is used in every slice group; the sign class is
        chosen by the weight's sign.
        """
        rows, cols = self.layer_shapes[layer]
        if not (0 <= row < rows and 0 <= col < cols):
            raise IndexError(f"({row}, {col}) outside layer {layer} of shape {(rows, cols)}")
        return row // self.tile, col // self.tile, row % self.tile, col % self.tile

    def provenance(self, layer, row, col):
        """``[(group, sign, tile_index, (cell_row, cell_col)), ...]`` for each slice group."""
        tr, tc, r, c = self.locate(layer, row, col)
        ntc = self.tiles[layer][0][0].shape[1]
        sign = int(self.signs[layer][row, col] < 0)
        return [(g, sign, tr * ntc + tc, (r, c)) for g in range(self.num_groups)]

    def nonzero_cells(self, group):
        return sum(int(np.count_nonzero(t)) for layer in self.tiles for t in layer[group])

    def weight_count(self):
        return sum(r * c for r, c in self.layer_shapes)

    def nonzero_cell_fraction(self, group):
        """Nonzero cells of a group over the number of weights (padding excluded)."""
        return self.nonzero_cells(group) / self.weight_count()

    def matvec(self, layer, x_bits):
        """Signed shift-and-add of bitline sums for one 0/1 input plane, in weight units."""
        x = _pad_inputs(np.asarray(x_bits), self.layer_shapes[layer][0], self.tile)
        _, cols = self.layer_shapes[layer]
        total = np.zeros(cols, dtype=np.int64)
        for g in range(self.num_groups):
            pos, neg = self.tiles[layer][g]
            diff = _bitline_sums(pos, x) - _bitline_sums(neg, x)
            total += (self.radix**g) * diff.sum(axis=0)[:cols]
        return total * self.q_steps[layer]


def _pad_inputs(x, rows, tile):
    if x.shape[-1] != rows:
        raise ShapeError(f"input length {x.shape[-1]} does not match {rows} wordlines")
    if np.any((x != 0) & (x != 1)):
        raise ValueError("inputs must be 0/1 bit planes")
    padded = np.zeros(x.shape[:-1] + (_ceil_div(rows, tile) * tile,), dtype=np.int64)
    padded[..., :rows] = x
    return padded


def _bitline_sums(tiles, x):
    """Per-tile bitline accumulations for one input vector.

    Returns shape ``(tile_rows, tile_cols * tile)``.
    """
    tr, tc, t, _ = tiles.shape
    xs = x.reshape(tr, t)
    sums = np.einsum("ir,ijrc->ijc", xs, tiles)
    return sums.reshape(tr, tc * t)


def map_model(layers: Sequence, tile=TILE) -> CrossbarMapping:
    """Tile every layer's slices into ``tile x tile`` crossbars.

    Accepts :class:`QuantizedLayer` or :class:`BitSlicedLayer` items; all must
    share one quantization config.
    """
    sliced = [bit_slice(q) if isinstance(q, QuantizedLayer) else q for q in layers]
    if not sliced:
        raise ValueError("map_model needs at least one layer")
    cfg = sliced[0].config
    if any(s.config != cfg for s in sliced):
        raise ValueError("all layers must be sliced with the same config")
    all_tiles, shapes, steps, signs = [], [], [], []
    for s in sliced:
        rows, cols = s.slices.shape[1:]
        tr, tc = _ceil_div(rows, tile), _ceil_div(cols, tile)
        negative = s.signs < 0
        groups = []
        for g in range(cfg.num_slices):
            pair = []
            for neg in (False, True):
                grid = np.zeros((tr * tile, tc * tile), dtype=np.int64)
                grid[:rows, :cols] = np.where(negative == neg, s.slices[g], 0)
                pair.append(grid.reshape(tr, tile, tc, tile).transpose(0, 2, 1, 3).copy())
            groups.append(tuple(pair))
        all_tiles.append(groups)
        shapes.append((rows, cols))
        steps.append(math.ldexp(1.0, s.scale_exp - cfg.n_bits))
        signs.append(s.signs)
    return CrossbarMapping(all_tiles, shapes, steps, cfg.num_slices, cfg.radix, signs, tile)


@dataclass
class BitlineProfile:
    """Per slice group: worst bitline accumulation, histogram of accumulations,
    and nonzero-cell count of each bitline."""

    max_accumulation: list
    histograms: list
    nonzero_per_bitline: list
    empirical: bool = False


def bitline_profile(mapping: CrossbarMapping, inputs: Optional[dict] = None) -> BitlineProfile:
    """Accumulate every bitline of every tile.

    ``inputs`` maps layer index to an ``(n_planes, rows)`` 0/1 array of
    input bit planes. Layers without an entry (or all layers, when
    ``inputs`` is None) use the all-ones worst case.
    """
    inputs = inputs or {}
    for layer in inputs:
        if not 0 <= layer < len(mapping.layer_shapes):
            raise ShapeError(f"no layer {layer} in mapping")
    maxima, hists, nnz = [], [], []
    for g in range(mapping.num_groups):
        best = 0
        hist = np.zeros(1, dtype=np.int64)
        counts = []
        for layer, groups in enumerate(mapping.tiles):
            rows = mapping.layer_shapes[layer][0]
            for tiles in groups[g]:
                tr, tc, t, _ = tiles.shape
                counts.append(np.count_nonzero(tiles, axis=2).reshape(-1))
                if layer in inputs:
                    planes = _pad_inputs(np.atleast_2d(np.asarray(inputs[layer])), rows, mapping.tile)
                    xs = planes.reshape(len(planes), tr, t).astype(np.float64)
                    # float matmul is exact here: sums stay far below 2**53
                    acc = np.concatenate(
                        [(xs[:, i, :] @ tiles[i].transpose(1, 0, 2).reshape(t, tc * t)).reshape(-1) for i in range(tr)]
                    ).astype(np.int64)
                else:
                    acc = tiles.sum(axis=2).reshape(-1)
                if acc.size:
                    best = max(best, int(acc.max()))
                    h = np.bincount(acc)
                    if len(h) > len(hist):
                        hist = np.pad(hist, (0, len(h) - len(hist)))
                    hist[: len(h)] += h
        maxima.append(best)
        hists.append(hist)
        nnz.append(np.concatenate(counts) if counts else np.zeros(0, dtype=np.int64))
    return BitlineProfile(maxima, hists, nnz, empirical=bool(inputs))


def bits_for(max_accumulation):
    """``max(1, ceil(log2(max_accumulation + 1)))`` computed on integers."""
    return max(1, int(max_accumulation).bit_length())


def required_adc_bits(profile: BitlineProfile):
    """Resolution each slice group's ADCs need to read its worst bitline exactly."""
    return [bits_for(m) for m in profile.max_accumulation]


def input_bit_planes(model, X, n_bits=8, config=None):
    """0/1 input planes for every layer of ``model`` driven by samples ``X``.

    Layer inputs are non-negative (pixels, then ReLU outputs). Each layer's
    inputs are quantized to ``n_bits`` unsigned codes with their own dynamic
    range and split into ``n_bits`` planes, as in bit-serial input streaming.
    """
    from .quant import QuantConfig, fake_quantize, quantize_layer
    from .trainkit import forward

    config = config or QuantConfig()
    qweights = [fake_quantize(w, config)[0] for w in model.weights]
    _, acts = forward(qweights, model.biases, np.asarray(X, dtype=model.dtype))
    planes = {}
    act_cfg = QuantConfig(n_bits, n_bits)
    for layer, a in enumerate(acts):
        codes = quantize_layer(a, act_cfg, allow_degenerate=True).codes
        bits = [(codes >> b) & 1 for b in range(n_bits)]
        planes[layer] = np.concatenate(bits, axis=0)
    return planes


@dataclass(frozen=True)
class AdcSpec:
    """Relative cost of an ``resolution``-bit ADC."""

    resolution: int

    def __post_init__(self):
        if self.resolution < 1:
            raise ValueError("ADC resolution must be >= 1 bit")

    @property
    def relative_power(self):
        n = self.resolution
        return 2.0**n / (n + 1)

    @property
    def relative_sensing_time(self):
        return float(self.resolution)

    @property
    def relative_area(self):
        # roughly flat below 6 bits; a 6-bit ADC is about half an 8-bit one
        return 0.5 if self.resolution <= 6 else 1.0


@dataclass
class GroupOverhead:
    group: int
    resolution: int
    energy_saving: float
    speedup: float
    area_saving: float

    def to_dict(self):
        return {
            "group": self.group,
            "resolution": self.resolution,
            "energy_saving": self.energy_saving,
            "speedup": self.speedup,
            "area_saving": self.area_saving,
        }


@dataclass
class OverheadReport:
    baseline: int
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {"baseline": self.baseline, "rows": [r.to_dict() for r in self.rows]}


def overhead_report(resolutions, baseline=BASELINE_BITS) -> OverheadReport:
    """Savings of each group's ADC relative to a ``baseline``-bit ADC.

    ``resolutions`` is a sequence indexed by slice group (LSB group first) or
    a ``{group: bits}`` mapping.
    """
    if not isinstance(resolutions, dict):
        resolutions = dict(enumerate(resolutions))
    base = AdcSpec(baseline)
    rows = []
    for g in sorted(resolutions, reverse=True):
        n = int(resolutions[g])
        if n > baseline:
            raise ValueError(f"group {g}: resolution {n} exceeds baseline {baseline}")
        adc = AdcSpec(n)
        rows.append(
            GroupOverhead(
                group=g,
                resolution=n,
                energy_saving=base.relative_power / adc.relative_power,
                speedup=base.relative_sensing_time / adc.relative_sensing_time,
                area_saving=base.relative_area / adc.relative_area,
            )
        )
    return OverheadReport(baseline, rows)


def mapping_summary(mapping: CrossbarMapping, profile: BitlineProfile):
    """Per-group JSON-ready summary, MSB group first."""
    bits = required_adc_bits(profile)
    out = []
    for g in range(mapping.num_groups - 1, -1, -1):
        n_tiles = sum(mapping.tile_count(layer) for layer in range(len(mapping.layer_shapes)))
        out.append(
            {
                "group": g,
                "tile_count_pos": n_tiles,
                "tile_count_neg": n_tiles,
                "nonzero_cell_fraction": mapping.nonzero_cell_fraction(g),
                "max_accumulation": profile.max_accumulation[g],
                "required_bits": bits[g],
                "target_bits": TARGET_BITS.get(g),
            }
        )
    return out
