"""Dynamic fixed-point training of a two-layer MLP with L1 / bit-slice L1 penalties.

Each step quantizes every weight matrix, runs the forward pass on the
quantized weights only, and applies

    w <- base - lr * (dCE/dq + alpha * dPenalty/dq)

where ``base`` is the full-precision shadow weight (``update="shadow"``) or
the quantized weight itself (``update="replace"``). Biases are never
quantized or penalised.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from typing import Optional

import numpy as np

from . import numkit
from .exceptions import DivergenceError, ShapeError
from .quant import QuantConfig, fake_quantize
from .slicekit import bl1_gradient, bl1_penalty, digit_sum_slope, digit_sum_table, sparsity_report

logger = logging.getLogger(__name__)

MODES = ("none", "l1", "bl1")
UPDATES = ("shadow", "replace")
ESTIMATORS = ("relaxation", "ste")


@dataclass
class MlpModel:
    """Weights are stored ``(fan_in, fan_out)`` so rows are crossbar wordlines."""

    weights: list
    biases: list
    masks: Optional[list] = None  # bool, False = pruned and frozen at zero

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")
        if self.masks is not None and [m.shape for m in self.masks] != [w.shape for w in self.weights]:
            raise ShapeError("mask shapes must match weight shapes")

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def copy(self):
        return MlpModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            None if self.masks is None else [m.copy() for m in self.masks],
        )

    def quantize(self, config: QuantConfig = QuantConfig()):
        """Quantized layers (codes, signs, scale) for every weight matrix."""
        return [fake_quantize(w, config)[1] for w in self.weights]


def init_mlp(sizes=(784, 128, 10), seed=0, dtype=np.float32):
    """He-normal weights, zero biases."""
    rng = numkit.make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append((rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(weights, biases)


@dataclass
class TrainingConfig:
    lr: float = 0.1
    alpha: float = 0.0
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    mode: str = "none"
    hidden: int = 128
    n_bits: int = 8
    slice_width: int = 2
    update: str = "shadow"
    estimator: str = "relaxation"
    warm_start: Optional[str] = None
    prune_threshold: Optional[float] = None

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.update not in UPDATES:
            raise ValueError(f"update must be one of {UPDATES}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.prune_threshold is not None and self.prune_threshold < 0:
            raise ValueError("prune_threshold must be >= 0")
        self.quant_config  # validates the bit layout

    @property
    def quant_config(self):
        return QuantConfig(self.n_bits, self.slice_width)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def forward(qweights, biases, X):
    """Logits and activation cache. Only ever called with quantized weights."""
    acts = [X]
    h = X
    for i, (w, b) in enumerate(zip(qweights, biases)):
        z = h @ w + b
        if i < len(qweights) - 1:
            h = np.maximum(z, 0)
            acts.append(h)
        else:
            h = z
    return h, acts


def loss_and_grads(qweights, biases, X, y):
    """Mean cross-entropy at the given (quantized) weights and its gradients."""
    logits, acts = forward(qweights, biases, X)
    loss, g = numkit.softmax_cross_entropy(logits, y)
    g = g.astype(logits.dtype, copy=False)
    gw = [None] * len(qweights)
    gb = [None] * len(qweights)
    for i in range(len(qweights) - 1, -1, -1):
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        if i:
            g = g @ qweights[i].T
            g = np.where(acts[i] > 0, g, 0).astype(g.dtype, copy=False)
    return loss, gw, gb


@lru_cache(maxsize=None)
def _relaxation_minima(config: QuantConfig):
    """For each code, the nearest local minimum of the digit-sum relaxation at or below it and above it."""
    table = digit_sum_table(config)
    top = config.max_code
    is_min = np.zeros(top + 2, dtype=bool)
    is_min[0] = True
    is_min[1 : top + 1] = table[1:] < table[:-1]
    is_min[top + 1] = True  # sentinel: never reached by an upward step on a real code
    idx = np.arange(top + 2)
    below = np.maximum.accumulate(np.where(is_min, idx, 0))
    above = np.minimum.accumulate(np.where(is_min, idx, top + 1)[::-1])[::-1]
    # a step up from [c, c+1) stops at the first minimum >= c + 1
    return below[: top + 1], above[1 : top + 2]


def penalty_step(base, q, cfg: TrainingConfig):
    """``lr * alpha * dPenalty/dq``, clipped so it never carries a weight past a
    local minimum of the penalty.

    For L1 (and the straight-through digit-sum gradient) the only minimum is
    zero. For the digit-sum relaxation every carry boundary (a multiple of
    ``2**slice_width`` in code units) is a local minimum as well. The step
    also never pulls a weight down to half the layer range, which would
    shrink the scale exponent and double every code.
    """
    if cfg.mode == "none" or cfg.alpha == 0:
        return np.zeros_like(base)
    qstep = q.q_step
    sign = np.sign(base)
    if cfg.mode == "l1":
        grad = np.where(q.codes > 0, sign, 0)
    elif cfg.estimator == "ste":
        grad = sign * np.abs(bl1_gradient(q, "ste"))
    else:
        grad = sign * digit_sum_slope(q.codes, q.config) / qstep
    step = (cfg.lr * cfg.alpha) * grad
    mag = np.abs(base)
    target = mag - sign * step
    lower = np.zeros_like(mag)
    upper = np.full_like(mag, np.inf)
    if cfg.mode == "bl1" and cfg.estimator == "relaxation":
        below, above = _relaxation_minima(q.config)
        c = np.minimum(np.floor(mag / qstep), q.config.max_code).astype(np.int64)
        lower = (below[c] * qstep).astype(mag.dtype)
        upper = (above[c] * qstep).astype(mag.dtype)
        half = mag.dtype.type(math.ldexp(1.0, q.scale_exp - 1))
        lower = np.where(mag > half, np.maximum(lower, np.nextafter(half, mag.dtype.type(np.inf))), lower)
    clipped = np.clip(target, lower, upper)
    hit = clipped != target
    if np.any(hit):
        step = np.where(hit, base - sign * clipped, step)
    return step.astype(base.dtype, copy=False)


def model_penalty(layers, mode):
    if mode == "bl1":
        return sum(bl1_penalty(q) for q in layers)
    if mode == "l1":
        return float(sum(np.sum(q.codes) * q.q_step for q in layers))
    return 0.0


def train_step(model: MlpModel, X, y, cfg: TrainingConfig, step=0):
    """One update on a batch; returns ``(new_model, loss, penalty)``.

    ``penalty`` is the unweighted penalty of the quantized weights the step
    was computed at (0 for ``mode="none"``).
    """
    qcfg = cfg.quant_config
    quantized = [fake_quantize(w, qcfg) for w in model.weights]
    qweights = [qw for qw, _ in quantized]
    layers = [ql for _, ql in quantized]
    loss, gw, gb = loss_and_grads(qweights, model.biases, X, y)
    if not math.isfinite(loss):
        raise DivergenceError(step, loss)
    new_w, new_b = [], []
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        base = w if cfg.update == "shadow" else qweights[i]
        nw = base - cfg.lr * gw[i] - penalty_step(base, layers[i], cfg)
        if model.masks is not None:
            nw = np.where(model.masks[i], nw, 0).astype(w.dtype)
        new_w.append(nw.astype(w.dtype, copy=False))
        new_b.append((b - cfg.lr * gb[i]).astype(b.dtype, copy=False))
    if not all(np.all(np.isfinite(nw)) for nw in new_w):
        raise DivergenceError(step, loss)
    masks = None if model.masks is None else [m.copy() for m in model.masks]
    return MlpModel(new_w, new_b, masks), loss, model_penalty(layers, cfg.mode)


def predict_logits(model: MlpModel, X, config: QuantConfig = QuantConfig(), batch_size=10000):
    qweights = [fake_quantize(w, config)[0] for w in model.weights]
    X = np.asarray(X, dtype=model.dtype)
    out = [forward(qweights, model.biases, X[i : i + batch_size])[0] for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, model.sizes[-1]), dtype=model.dtype)


def evaluate(model: MlpModel, X, y, config: QuantConfig = QuantConfig(), batch_size=10000):
    """Top-1 accuracy of the quantized model."""
    y = np.asarray(y)
    if len(y) == 0:
        return float("nan")
    return float(np.mean(predict_logits(model, X, config, batch_size).argmax(axis=1) == y))


@dataclass
class EpochRecord:
    epoch: int
    test_accuracy: Optional[float]
    slice_ratios: list
    mean: float
    std: float
    loss: float
    penalty: float

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainState:
    """What a checkpoint needs to resume a run exactly."""

    model: MlpModel
    rng: np.random.Generator
    epoch: int = 0
    history: list = field(default_factory=list)


def train(model: MlpModel, X, y, cfg: TrainingConfig, X_test=None, y_test=None, *, state=None, callback=None):
    """Run ``cfg.epochs`` epochs of minibatch training.

    Returns ``(model, history)`` where history holds one :class:`EpochRecord`
    per epoch. Pass ``state`` (a :class:`TrainState`) to continue a previous
    run with its generator and epoch counter; it is updated in place.
    """
    if state is None:
        state = TrainState(model.copy(), numkit.make_rng(cfg.seed))
    else:
        state.model = model.copy()
    X = np.asarray(X, dtype=model.dtype)
    y = np.asarray(y)
    n = len(X)
    qcfg = cfg.quant_config
    history = []
    for _ in range(cfg.epochs):
        perm = state.rng.permutation(n)
        losses, penalty = [], 0.0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start : start + cfg.batch_size]
            state.model, loss, penalty = train_step(state.model, X[idx], y[idx], cfg, step=step)
            losses.append(loss)
        state.epoch += 1
        acc = evaluate(state.model, X_test, y_test, qcfg) if X_test is not None else None
        rep = sparsity_report(state.model.quantize(qcfg), acc)
        rec = EpochRecord(
            epoch=state.epoch,
            test_accuracy=acc,
            slice_ratios=rep.slice_ratios,
            mean=rep.mean,
            std=rep.std,
            loss=float(np.mean(losses)) if losses else float("nan"),
            penalty=penalty,
        )
        history.append(rec)
        state.history.append(rec)
        logger.info("epoch %d acc=%s mean=%.4f", rec.epoch, acc, rec.mean)
        if callback is not None:
            callback(rec, state)
    return state.model, history


def magnitude_prune(model: MlpModel, threshold):
    """Zero every weight with ``|w| < threshold`` and freeze it through later training."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    out = model.copy()
    masks = []
    for i, w in enumerate(out.weights):
        keep = np.abs(w) >= threshold
        if out.masks is not None:
            keep &= out.masks[i]
        out.weights[i] = np.where(keep, w, 0).astype(w.dtype)
        masks.append(keep)
    out.masks = masks
    return out
