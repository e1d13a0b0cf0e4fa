"""Small differentiable classifiers used as the on-device model.

Two architectures share one flat parameter layout:

* ``hidden_dim == 0``: multinomial logistic regression,
  layout ``[W (input_dim x num_classes), b (num_classes)]``.
* ``hidden_dim > 0``: one tanh hidden layer,
  layout ``[W1 (input_dim x hidden), b1 (hidden), W2 (hidden x num_classes), b2]``.

Weight decay is decoupled for both optimisers: the step subtracts
``lr * weight_decay * params`` in addition to the gradient (SGD) or the
bias-corrected moment ratio (Adam, i.e. the AdamW form). ``forward_loss``
therefore reports the plain data loss unless an explicit ``l2`` is given.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NumericError, RejectedInput

SGD = "sgd"
ADAM = "adam"

# Two weight-decay values appear for the same optimiser; both are kept.
WEIGHT_DECAY_PRESETS = {"setup": 1e-3, "results": 1e-5}
DEFAULT_WEIGHT_DECAY = WEIGHT_DECAY_PRESETS["results"]
DEFAULT_BATCH_SIZE = 128


@dataclass(frozen=True)
class ModelShape:
    input_dim: int
    num_classes: int
    hidden_dim: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise RejectedInput("input_dim must be positive")
        if self.num_classes < 2:
            raise RejectedInput("num_classes must be at least 2")
        if self.hidden_dim < 0:
            raise RejectedInput("hidden_dim must be non-negative")

    @property
    def param_count(self) -> int:
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c

    def unpack(self, values: np.ndarray) -> list[np.ndarray]:
        """Views into ``values`` in layer order (weights, bias, ...)."""
        if values.shape != (self.param_count,):
            raise RejectedInput(
                f"parameter vector has length {values.size}, shape expects {self.param_count}"
            )
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        dims = [(d, c), (c,)] if h == 0 else [(d, h), (h,), (h, c), (c,)]
        out, start = [], 0
        for dim in dims:
            size = int(np.prod(dim))
            out.append(values[start:start + size].reshape(dim))
            start += size
        return out


@dataclass
class ParamVector:
    """Flat parameters plus the number of samples that produced them."""

    values: np.ndarray
    sample_count: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.values)):
            raise NumericError("parameter vector contains non-finite entries")
        if self.sample_count < 0:
            raise RejectedInput("sample_count must be non-negative")
        self.sample_count = int(self.sample_count)

    def __len__(self):
        return self.values.size

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.sample_count)

    @classmethod
    def zeros(cls, shape: ModelShape) -> "ParamVector":
        return cls(np.zeros(shape.param_count), 0)

    @classmethod
    def initial(cls, shape: ModelShape, rng: np.random.Generator, scale: float = 0.01) -> "ParamVector":
        values = np.zeros(shape.param_count)
        layers = shape.unpack(values)
        for w in layers[::2]:
            w[...] = rng.normal(0.0, scale, size=w.shape)
        return cls(values, 0)


@dataclass
class OptimiserState:
    kind: str = ADAM
    learning_rate: float = 1e-3
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        if self.kind not in (SGD, ADAM):
            raise RejectedInput(f"unknown optimiser {self.kind!r}")
        if self.learning_rate <= 0:
            raise RejectedInput("learning_rate must be positive")
        if self.weight_decay < 0:
            raise RejectedInput("weight_decay must be non-negative")

    def reset(self) -> "OptimiserState":
        return dataclasses.replace(self, m=None, v=None, step=0)


class EvalResult(NamedTuple):
    accuracy: float
    macro_f1: float
    loss: float


def _check_batch(shape: ModelShape, features, labels):
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise RejectedInput("batch must be a non-empty 2-D feature array")
    if X.shape[1] != shape.input_dim:
        raise RejectedInput(f"feature dimension {X.shape[1]} != input_dim {shape.input_dim}")
    if y.shape != (X.shape[0],):
        raise RejectedInput("labels must be a 1-D array matching the batch size")
    if y.size and (y.min() < 0 or y.max() >= shape.num_classes):
        raise RejectedInput("labels outside [0, num_classes)")
    return X, y.astype(np.int64)


def _finite(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value in forward pass", layer=layer)


def _logits(shape: ModelShape, values: np.ndarray, X: np.ndarray):
    # overflow is reported through NumericError instead of a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _raw_logits(shape, values, X)


def _raw_logits(shape: ModelShape, values: np.ndarray, X: np.ndarray):
    layers = shape.unpack(values)
    if shape.hidden_dim == 0:
        W, b = layers
        z = X @ W + b
        _finite(z, "output")
        return z, None
    W1, b1, W2, b2 = layers
    H = np.tanh(X @ W1 + b1)
    _finite(H, "hidden")
    z = H @ W2 + b2
    _finite(z, "output")
    return z, H


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_loss(params: ParamVector, shape: ModelShape, features, labels, l2: float = 0.0):
    """Mean cross-entropy over the batch and its analytic gradient.

    ``l2`` adds ``0.5 * l2 * ||params||^2`` to the loss (and ``l2 * params``
    to the gradient). Training leaves it at zero because decay is applied
    by the optimiser.
    """
    X, y = _check_batch(shape, features, labels)
    values = params.values
    B = X.shape[0]
    z, H = _logits(shape, values, X)
    logp = _log_softmax(z)
    loss = -logp[np.arange(B), y].mean()
    _finite(loss, "loss")

    dz = np.exp(logp)
    dz[np.arange(B), y] -= 1.0
    dz /= B

    grad = np.empty_like(values)
    glayers = shape.unpack(grad)
    if shape.hidden_dim == 0:
        glayers[0][...] = X.T @ dz
        glayers[1][...] = dz.sum(axis=0)
    else:
        W2 = shape.unpack(values)[2]
        glayers[2][...] = H.T @ dz
        glayers[3][...] = dz.sum(axis=0)
        dpre = (dz @ W2.T) * (1.0 - H * H)
        glayers[0][...] = X.T @ dpre
        glayers[1][...] = dpre.sum(axis=0)

    if l2:
        loss += 0.5 * l2 * float(values @ values)
        grad += l2 * values
    _finite(grad, "gradient")
    return float(loss), grad


def optimiser_step(params: ParamVector, grad, opt: OptimiserState):
    """One update; returns new ``(ParamVector, OptimiserState)``."""
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != params.values.shape:
        raise RejectedInput("gradient length does not match parameters")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient", layer="gradient")
    p = params.values
    lr, wd = opt.learning_rate, opt.weight_decay

    if opt.kind == SGD:
        new = p - lr * (g + wd * p)
        return ParamVector(new, params.sample_count), dataclasses.replace(opt, step=opt.step + 1)

    m = np.zeros_like(p) if opt.m is None else opt.m
    v = np.zeros_like(p) if opt.v is None else opt.v
    t = opt.step + 1
    m = opt.beta1 * m + (1.0 - opt.beta1) * g
    v = opt.beta2 * v + (1.0 - opt.beta2) * (g * g)
    m_hat = m / (1.0 - opt.beta1 ** t)
    v_hat = v / (1.0 - opt.beta2 ** t)
    new = p - lr * (m_hat / (np.sqrt(v_hat) + opt.eps) + wd * p)
    return ParamVector(new, params.sample_count), dataclasses.replace(opt, m=m, v=v, step=t)


def train_local(device, epochs: int, batch_size: int = DEFAULT_BATCH_SIZE, track_loss: bool = False):
    """Run ``epochs`` shuffled mini-batch passes over ``device.shard``.

    The device is updated in place and returned. A device with an empty
    shard is left untouched and flagged via ``device.skipped_training``.
    With ``track_loss`` the full-shard loss after every epoch is stored in
    ``device.epoch_losses``.
    """
    if epochs < 0 or batch_size < 1:
        raise RejectedInput("epochs must be >= 0 and batch_size >= 1")
    shard = device.shard
    n = len(shard)
    device.epoch_losses = []
    if n == 0:
        device.skipped_training = True
        return device
    device.skipped_training = False
    if epochs == 0:
        return device

    X, y = shard.features, shard.labels
    bs = min(batch_size, n)
    params, opt = device.params, device.opt
    for _ in range(epochs):
        order = device.rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grad = forward_loss(params, device.shape, X[idx], y[idx])
            params, opt = optimiser_step(params, grad, opt)
        if track_loss:
            device.epoch_losses.append(forward_loss(params, device.shape, X, y)[0])
    params.sample_count = n
    device.params, device.opt = params, opt
    return device


def predict(params: ParamVector, shape: ModelShape, features) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    X = np.asarray(features, dtype=np.float64)
    z, _ = _logits(shape, params.values, X)
    return np.argmax(z, axis=1)


def macro_f1(y_true, y_pred, num_classes: int) -> float:
    """Unweighted mean of per-class F1 over all ``num_classes``.

    A class that is neither present nor predicted scores 0.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    scores = []
    for c in range(num_classes):
        tp = np.sum((y_pred == c) & (y_true == c))
        denom = np.sum(y_pred == c) + np.sum(y_true == c)
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def evaluate(params: ParamVector, shape: ModelShape, features, labels) -> EvalResult:
    X, y = _check_batch(shape, features, labels)
    z, _ = _logits(shape, params.values, X)
    pred = np.argmax(z, axis=1)
    logp = _log_softmax(z)
    loss = -logp[np.arange(y.size), y].mean()
    return EvalResult(
        accuracy=float(np.mean(pred == y)),
        macro_f1=macro_f1(y, pred, shape.num_classes),
        loss=float(loss),
    )


@dataclass(frozen=True)
class TrainingConfig:
    """Local-training settings shared by every method."""

    optimiser: str = ADAM
    learning_rate: float = 1e-3
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    local_epochs: int = 2
    batch_size: int = DEFAULT_BATCH_SIZE
    # fresh optimiser moments at the start of every round's local training
    reset_optimiser: bool = True
    init_scale: float = 0.01

    def __post_init__(self):
        OptimiserState(self.optimiser, self.learning_rate, self.weight_decay)
        if self.local_epochs < 0 or self.batch_size < 1:
            raise RejectedInput("local_epochs must be >= 0 and batch_size >= 1")

    def new_optimiser(self) -> OptimiserState:
        return OptimiserState(self.optimiser, self.learning_rate, self.weight_decay)
