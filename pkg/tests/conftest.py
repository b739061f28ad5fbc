import gzip
import os
import struct

import numpy as np
import pytest

MNIST_DIR = os.environ.get("BITSLICE_MNIST", "/root/data/mnist")

_CRITERIA = {}


def record_criterion(number, ok, detail):
    _CRITERIA[number] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def mnist_dir():
    if not os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte")):
        pytest.skip(f"MNIST not found in {MNIST_DIR} (set BITSLICE_MNIST)")
    return MNIST_DIR


def write_idx(path, array, magic, compress=False):
    array = np.asarray(array, dtype=np.uint8)
    blob = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    opener = gzip.open if compress else open
    with opener(path, "wb") as fh:
        fh.write(blob)


def make_fake_mnist(directory, n_train=300, n_test=100, seed=0, compress=False):
    """Tiny IDX dataset whose label is readable from a bright block of pixels."""
    rng = np.random.default_rng(seed)
    os.makedirs(directory, exist_ok=True)
    sfx = ".gz" if compress else ""
    for split, n in (("train", n_train), ("t10k", n_test)):
        labels = rng.integers(0, 10, n)
        images = rng.integers(0, 40, (n, 28, 28))
        for i, lab in enumerate(labels):
            images[i, 2 * lab : 2 * lab + 2, :] = 255
        write_idx(os.path.join(directory, f"{split}-images-idx3-ubyte{sfx}"), images, 0x803, compress)
        write_idx(os.path.join(directory, f"{split}-labels-idx1-ubyte{sfx}"), labels, 0x801, compress)
    return directory


@pytest.fixture
def fake_mnist(tmp_path):
    return make_fake_mnist(str(tmp_path / "mnist"))
