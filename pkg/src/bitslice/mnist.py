"""Reader for the MNIST IDX files (optionally gzip-compressed)."""

import gzip
import os
import struct
from typing import NamedTuple

import numpy as np

from .exceptions import FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class MnistData(NamedTuple):
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


def read_idx(path, magic):
    """Parse one IDX file whose header must carry ``magic``; returns a uint8 array."""
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as fh:
            raw = fh.read()
    except (OSError, EOFError) as exc:  # includes bad gzip streams
        raise FormatError(f"{path}: {exc}") from exc
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic number 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header < count:
        raise FormatError(f"{path}: truncated payload, expected {count} bytes after header")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def _find(directory, stem):
    for name in (stem, stem + ".gz"):
        p = os.path.join(directory, name)
        if os.path.exists(p):
            return p
    raise FormatError(f"{directory}: missing {stem}[.gz]")


def load_images(path):
    images = read_idx(path, IMAGES_MAGIC)
    return (images.reshape(len(images), -1) / np.float32(255.0)).astype(np.float32)


def load_labels(path):
    return read_idx(path, LABELS_MAGIC).astype(np.int64)


def load_mnist(directory):
    """Load the four standard MNIST files from ``directory``.

    Images come back as float32 rows of 784 pixels scaled to [0, 1].
    """
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    X_train = load_images(_find(directory, FILES["train_images"]))
    y_train = load_labels(_find(directory, FILES["train_labels"]))
    X_test = load_images(_find(directory, FILES["test_images"]))
    y_test = load_labels(_find(directory, FILES["test_labels"]))
    if len(X_train) != len(y_train) or len(X_test) != len(y_test):
        raise FormatError(f"{directory}: image and label counts differ")
    return MnistData(X_train, y_train, X_test, y_test)
