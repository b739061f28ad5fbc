"""Checkpoint files: magic, JSON header, then little-endian raw parameters.

Layout::

    b"BSLCKPT1" | uint64 LE header length | UTF-8 JSON header | payload

The payload holds, per layer, the weight then the bias in the header's
``dtype`` (``<f4`` by default), followed by one uint8 mask per layer when
``has_masks`` is true.
"""

import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import FormatError
from .trainkit import MlpModel

MAGIC = b"BSLCKPT1"
VERSION = 1


@dataclass
class Checkpoint:
    model: MlpModel
    config: dict = field(default_factory=dict)
    epoch: int = 0
    seed: Optional[int] = None
    rng_state: Optional[dict] = None


def save_checkpoint(path, ckpt: Checkpoint):
    model = ckpt.model
    dtype = np.dtype(model.dtype).newbyteorder("<")
    header = {
        "format": "bitslice-checkpoint",
        "version": VERSION,
        "dtype": dtype.str,
        "layers": [{"weight_shape": list(w.shape), "bias_shape": list(b.shape)} for w, b in zip(model.weights, model.biases)],
        "has_masks": model.masks is not None,
        "config": ckpt.config,
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "rng_state": ckpt.rng_state,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype=dtype).tobytes())
            fh.write(np.ascontiguousarray(b, dtype=dtype).tobytes())
        if model.masks is not None:
            for m in model.masks:
                fh.write(np.ascontiguousarray(m, dtype=np.uint8).tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC or len(raw) < 16:
        raise FormatError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
        dtype = np.dtype(header["dtype"])
        layers = header["layers"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    if header.get("version") != VERSION:
        raise FormatError(f"{path}: unsupported version {header.get('version')}")
    offset = 16 + hlen

    def take(shape, dt):
        nonlocal offset
        n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        if offset + n > len(raw):
            raise FormatError(f"{path}: truncated payload")
        arr = np.frombuffer(raw, dtype=dt, count=n // dt.itemsize, offset=offset).reshape(shape)
        offset += n
        return arr.astype(dt.newbyteorder("="))

    weights, biases = [], []
    for spec in layers:
        weights.append(take(tuple(spec["weight_shape"]), dtype))
        biases.append(take(tuple(spec["bias_shape"]), dtype))
    masks = None
    if header.get("has_masks"):
        masks = [take(w.shape, np.dtype(np.uint8)).astype(bool) for w in weights]
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    try:
        model = MlpModel(weights, biases, masks)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return Checkpoint(model, header.get("config") or {}, int(header.get("epoch", 0)), header.get("seed"), header.get("rng_state"))
