"""Dense-matrix primitives used by the trainer.

Matrices are plain 2-D ``numpy`` arrays. Every function here is pure: inputs
are never modified in place.
"""

import numpy as np

from .exceptions import ShapeError


def as_matrix(a, name="matrix", dtype=None):
    """Return ``a`` as a finite 2-D array, raising on bad shape or NaN/Inf."""
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def make_rng(seed):
    """Counter-based Philox generator; the same seed gives the same stream everywhere."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def rng_state(rng):
    """JSON-serialisable snapshot of a generator made by :func:`make_rng`."""
    return _to_builtin(rng.bit_generator.state)


def restore_rng(state):
    rng = np.random.Generator(np.random.Philox())
    st = dict(state)
    st["state"] = {k: np.asarray(v, dtype=np.uint64) for k, v in st["state"].items()}
    st["buffer"] = np.asarray(st["buffer"], dtype=np.uint64)
    rng.bit_generator.state = st
    return rng


def _to_builtin(obj):
    if isinstance(obj, dict):
        return {k: _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return [int(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def matmul(a, b):
    """Matrix product ``a @ b`` with an explicit shape check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy over a batch and its gradient w.r.t. the logits.

    Parameters
    ----------
    logits : array of shape (batch, classes)
    labels : integer array of shape (batch,)

    Returns
    -------
    loss : float
    grad : array like ``logits``
        ``(softmax(logits) - onehot(labels)) / batch``.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-D, got shape {logits.shape}")
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"labels must lie in [0, {c})")
    rows = np.arange(n)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(log_norm - z[rows, labels]))
    grad = np.exp(z - log_norm[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def relu_forward_backward(x, upstream):
    """ReLU output and the gradient routed back through it."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {upstream.shape}")
    active = x > 0
    return np.where(active, x, 0).astype(x.dtype), np.where(active, upstream, 0).astype(upstream.dtype)
