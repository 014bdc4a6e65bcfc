"""Minimal numpy neural-network engine.

Supports the five layer kinds needed by the classifier models (valid-padding
stride-1 convolution, max pooling with stride equal to the pool size, flatten,
dense) with ReLU or linear activations. Everything runs in float64 so that
input gradients can be checked against central finite differences.

Batched arrays are channels-last: ``(N, H, W, C)`` for images and ``(N, D)``
for vectors. Public helpers that take a single example accept it without the
batch axis.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("relu", "linear")
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Conv2D:
    filters: int
    kernel: tuple[int, int] = (3, 3)
    activation: str = "relu"

    def __post_init__(self):
        if self.filters < 1 or min(self.kernel) < 1:
            raise ValueError(f"invalid Conv2D spec {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class MaxPool2D:
    pool: tuple[int, int] = (2, 2)

    def __post_init__(self):
        if min(self.pool) < 1:
            raise ValueError(f"invalid MaxPool2D spec {self}")


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    size: int
    activation: str = "linear"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"invalid Dense spec {self}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


LayerSpec = Union[Conv2D, MaxPool2D, Flatten, Dense]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 1
    batch_size: int = 32
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")


def layer_output_shape(layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape (without batch axis) produced by ``layer`` for an input of ``shape``."""
    if isinstance(layer, Conv2D):
        if len(shape) != 3:
            raise ValueError(f"Conv2D expects (H, W, C) input, got {shape}")
        h, w, _ = shape
        kh, kw = layer.kernel
        if h < kh or w < kw:
            raise ValueError(f"input {shape} smaller than kernel {layer.kernel}")
        return (h - kh + 1, w - kw + 1, layer.filters)
    if isinstance(layer, MaxPool2D):
        if len(shape) != 3:
            raise ValueError(f"MaxPool2D expects (H, W, C) input, got {shape}")
        h, w, c = shape
        ph, pw = layer.pool
        if h < ph or w < pw:
            raise ValueError(f"input {shape} smaller than pool {layer.pool}")
        return (h // ph, w // pw, c)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, Dense):
        if len(shape) != 1:
            raise ValueError(f"Dense expects a flat input, got {shape}")
        return (layer.size,)
    raise TypeError(f"unknown layer {layer!r}")


def _param_shapes(layer: LayerSpec, in_shape: tuple[int, ...]):
    if isinstance(layer, Conv2D):
        kh, kw = layer.kernel
        return (kh, kw, in_shape[2], layer.filters), (layer.filters,)
    if isinstance(layer, Dense):
        return (in_shape[0], layer.size), (layer.size,)
    return None


# -- layer kernels -----------------------------------------------------------

def _conv_forward(x, W, b):
    kh, kw, c, f = W.shape
    n, h, w, _ = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    # patch rows ordered (kh, kw, C) to match W's layout
    cols = (sliding_window_view(x, (kh, kw), axis=(1, 2))
            .transpose(0, 1, 2, 4, 5, 3)
            .reshape(n * ho * wo, kh * kw * c))
    out = cols @ W.reshape(kh * kw * c, f) + b
    return out.reshape(n, ho, wo, f), cols


def _conv_backward(dout, x_shape, cols, W, need_dx=True, need_dw=True):
    kh, kw, c, f = W.shape
    n, h, w, _ = x_shape
    ho, wo = h - kh + 1, w - kw + 1
    d2 = dout.reshape(-1, f)
    dW = (cols.T @ d2).reshape(W.shape) if need_dw else None
    db = d2.sum(axis=0) if need_dw else None
    if not need_dx:
        return None, dW, db
    if c < 4:
        dcols = (d2 @ W.reshape(kh * kw * c, f).T).reshape(n, ho, wo, kh, kw, c)
        dx = np.zeros(x_shape)
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + ho, j:j + wo, :] += dcols[:, :, :, i, j, :]
    else:
        # full correlation of the padded output gradient with the flipped kernel
        padded = np.pad(dout, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
        flipped = W[::-1, ::-1].transpose(0, 1, 3, 2)
        dx, _ = _conv_forward(padded, flipped, 0.0)
    return dx, dW, db


def _pool_forward(x, pool):
    ph, pw = pool
    n, h, w, c = x.shape
    ho, wo = h // ph, w // pw
    win = x[:, :ho * ph, :wo * pw, :].reshape(n, ho, ph, wo, pw, c)
    out = win.max(axis=(2, 4))
    # route each window's gradient to its first maximum only
    hit = win == out[:, :, None, :, None, :]
    taken = np.zeros_like(out, dtype=bool)
    for i in range(ph):
        for j in range(pw):
            hit[:, :, i, :, j, :] &= ~taken
            taken |= hit[:, :, i, :, j, :]
    return out, hit


def _pool_backward(dout, x_shape, hit, pool):
    ph, pw = pool
    n, h, w, c = x_shape
    ho, wo = h // ph, w // pw
    dx = np.zeros(x_shape)
    dx[:, :ho * ph, :wo * pw, :] = (hit * dout[:, :, None, :, None, :]).reshape(n, ho * ph, wo * pw, c)
    return dx


# -- model --------------------------------------------------------------------

@dataclass
class Model:
    """Ordered layer list plus parameters.

    ``params[i]`` is ``(W, b)`` for Conv2D/Dense layers and ``None`` otherwise.
    Treat instances as immutable once built or trained; training returns a copy.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    params: list = field(default_factory=list)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.input_shape = tuple(int(s) for s in self.input_shape)
        shapes = self.shapes()
        if len(self.params) != len(self.layers):
            raise ValueError("one params entry per layer required")
        for layer, in_shape, p in zip(self.layers, shapes[:-1], self.params):
            expected = _param_shapes(layer, in_shape)
            if expected is None:
                if p is not None:
                    raise ValueError(f"{layer} takes no parameters")
                continue
            if p is None or tuple(p[0].shape) != expected[0] or tuple(p[1].shape) != expected[1]:
                raise ValueError(f"parameter shapes do not match {layer}")

    def shapes(self) -> list[tuple[int, ...]]:
        """Input shape followed by the output shape of every layer."""
        out = [self.input_shape]
        for layer in self.layers:
            out.append(layer_output_shape(layer, out[-1]))
        return out

    @property
    def num_classes(self) -> int:
        return self.shapes()[-1][0]

    def param_count(self) -> int:
        return sum(p[0].size + p[1].size for p in self.params if p is not None)

    def layer_param_counts(self) -> list[int]:
        return [p[0].size + p[1].size for p in self.params if p is not None]

    def param_bytes(self) -> bytes:
        return b"".join(p[0].tobytes() + p[1].tobytes() for p in self.params if p is not None)

    def copy(self) -> "Model":
        return Model(self.layers, self.input_shape, copy.deepcopy(self.params))

    def same_architecture(self, other: "Model") -> bool:
        return self.layers == other.layers and self.input_shape == other.input_shape

    def _batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.input_shape:
            return x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape} does not match model input {self.input_shape}")
        return x

    def forward(self, x, keep_cache: bool = False):
        """Logits for a batch (or a single example). Optionally returns the backward cache."""
        single = np.shape(x) == self.input_shape
        a = self._batch(x)
        caches = []
        for layer, p in zip(self.layers, self.params):
            in_shape = a.shape
            if isinstance(layer, Conv2D):
                a, cols = _conv_forward(a, p[0], p[1])
                cache = (in_shape, cols)
            elif isinstance(layer, Dense):
                cache = (in_shape, a)
                a = a @ p[0] + p[1]
            elif isinstance(layer, MaxPool2D):
                a, arg = _pool_forward(a, layer.pool)
                cache = (in_shape, arg)
            else:
                a = a.reshape(a.shape[0], -1)
                cache = (in_shape, None)
            if getattr(layer, "activation", "linear") == "relu":
                mask = a > 0
                a = a * mask
                cache = cache + (mask,)
            caches.append(cache)
        if single and not keep_cache:
            return a[0]
        return (a, caches) if keep_cache else a

    def backward(self, dlogits: np.ndarray, caches, need_input_grad: bool = True,
                 need_param_grads: bool = True) -> tuple[np.ndarray, list]:
        """Backpropagate ``dlogits`` (batched). Returns input gradient and per-layer grads
        (the latter all ``None`` when ``need_param_grads`` is false)."""
        grads: list = [None] * len(self.layers)
        d = dlogits
        for idx in range(len(self.layers) - 1, -1, -1):
            layer, p, cache = self.layers[idx], self.params[idx], caches[idx]
            if getattr(layer, "activation", "linear") == "relu":
                d = d * cache[-1]
            in_shape = cache[0]
            if isinstance(layer, Conv2D):
                d, dW, db = _conv_backward(d, in_shape, cache[1], p[0], need_input_grad or idx > 0,
                                           need_param_grads)
                grads[idx] = (dW, db) if need_param_grads else None
            elif isinstance(layer, Dense):
                a_in = cache[1]
                if need_param_grads:
                    grads[idx] = (a_in.T @ d, d.sum(axis=0))
                d = d @ p[0].T
            elif isinstance(layer, MaxPool2D):
                d = _pool_backward(d, in_shape, cache[1], layer.pool)
            else:
                d = d.reshape(in_shape)
        return d, grads


def init_model(layers: Sequence[LayerSpec], input_shape: Sequence[int], seed: int) -> Model:
    """Seeded Kaiming-uniform weights (fan-in scaling), zero biases."""
    rng = np.random.default_rng(seed)
    layers = tuple(layers)
    shape = tuple(input_shape)
    params = []
    for layer in layers:
        ps = _param_shapes(layer, shape)
        if ps is None:
            params.append(None)
        else:
            wshape, bshape = ps
            fan_in = int(np.prod(wshape[:-1]))
            gain = 6.0 if layer.activation == "relu" else 3.0
            limit = np.sqrt(gain / fan_in)
            params.append((rng.uniform(-limit, limit, size=wshape), np.zeros(bshape)))
        shape = layer_output_shape(layer, shape)
    return Model(layers, tuple(input_shape), params)


# -- losses -------------------------------------------------------------------

def _check_temperature(T):
    if not (np.isfinite(T) and T > 0):
        raise ValueError(f"temperature must be positive and finite, got {T}")


def softmax_t(logits, T: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, max-subtracted for stability."""
    _check_temperature(T)
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[-1] < 2:
        raise ValueError("need at least two classes")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    s = z / T
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_t(logits, T: float = 1.0) -> np.ndarray:
    _check_temperature(T)
    s = np.asarray(logits, dtype=np.float64) / T
    s = s - s.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def cross_entropy_t(logits, label: int, T: float = 1.0) -> float:
    """``-log P(label, T)`` for a single logit vector."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < z.shape[-1]:
        raise ValueError(f"label {label} out of range for {z.shape[-1]} classes")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return float(-log_softmax_t(z, T)[label])


def kl_loss(teacher_probs, student_probs) -> float:
    """KL(teacher || student) for two probability vectors with strictly positive entries."""
    p = np.asarray(teacher_probs, dtype=np.float64)
    q = np.asarray(student_probs, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("probability vectors differ in shape")
    if np.any(p <= 0) or np.any(q <= 0):
        raise ValueError("probabilities must be strictly positive (clamp at 1e-12)")
    return float(np.sum(p * (np.log(p) - np.log(q))))


def ce_batch(logits: np.ndarray, labels: np.ndarray, T: float = 1.0):
    """Mean cross-entropy at temperature ``T`` and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("label out of range")
    logp = log_softmax_t(logits, T)
    loss = -logp[np.arange(n), labels].mean()
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return float(loss), d / (T * n)


# -- gradients w.r.t. the input -------------------------------------------------

def grad_input(model: Model, x, label: int, T: float = 1.0) -> np.ndarray:
    """Gradient of ``cross_entropy_t(model(x), label, T)`` with respect to ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ValueError(f"input shape {x.shape} does not match model input {model.input_shape}")
    return grad_input_batch(model, x[None], np.array([label]), T)[0]


def grad_input_batch(model: Model, X, labels, T: float = 1.0, prob_floor: float | None = None,
                     return_logits: bool = False):
    """Per-example input gradients of the cross-entropy loss for a batch.

    With ``prob_floor`` set, the loss is ``-log(clip(p_label, prob_floor, 1))`` on the
    model's T-softmax output, whose gradient is exactly zero wherever the clip is
    active. Without it, the exact logit-space cross-entropy is differentiated.
    """
    X = model._batch(X)
    labels = np.asarray(labels)
    logits, caches = model.forward(X, keep_cache=True)
    _, d = ce_batch(logits, labels, T)
    d = d * len(X)  # per-example, not mean
    if prob_floor is not None:
        p = softmax_t(logits, T)[np.arange(len(X)), labels]
        d[p < prob_floor] = 0.0
    dx, _ = model.backward(d, caches, need_param_grads=False)
    return (dx, logits) if return_logits else dx


def finite_diff_check(model: Model, x, label: int, T: float = 1.0, h: float = 1e-5,
                      coords: np.ndarray | None = None, one_sided_at_kinks: bool = False,
                      details: bool = False):
    """Max relative error between analytic and central-difference input gradients.

    ``coords`` restricts the comparison to the given flat indices; by default every
    input element is checked. Denominator is ``max(|a|, |b|, 1e-8)``.

    ReLU and max-pool make the loss piecewise smooth. When a kink lies within
    ``h`` of ``x`` the central difference averages two different slopes and
    matches neither. With ``one_sided_at_kinks`` such coordinates (forward and
    backward differences disagree by more than 1e-3 relative) are compared
    against the nearer one-sided difference instead, since a correct backward
    pass returns the slope of one side. ``details=True`` returns
    ``(max_error, n_kinks)``.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = grad_input(model, x, label, T).ravel()
    idx = np.arange(x.size) if coords is None else np.asarray(coords).ravel()
    flat = x.ravel()
    shape = (1,) + model.input_shape

    def loss_at(v: np.ndarray) -> float:
        # one row per call: batched rows may round differently in the last bit,
        # which shows up as spurious slope where the true gradient is exactly 0
        return float(-log_softmax_t(model.forward(v.reshape(shape)), T)[0, label])

    f_plus = np.empty(len(idx))
    f_minus = np.empty(len(idx))
    for j, i in enumerate(idx):
        v = flat.copy()
        v[i] += h
        f_plus[j] = loss_at(v)
        v[i] = flat[i] - h
        f_minus[j] = loss_at(v)

    def rel(a, b):
        return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)

    a = analytic[idx]
    err = rel(a, (f_plus - f_minus) / (2 * h))
    n_kinks = 0
    if one_sided_at_kinks:
        f0 = loss_at(flat)
        fwd, bwd = (f_plus - f0) / h, (f0 - f_minus) / h
        kink = rel(fwd, bwd) > 1e-3
        n_kinks = int(kink.sum())
        err = np.where(kink, np.minimum(rel(a, fwd), rel(a, bwd)), err)
    worst = float(np.max(err))
    return (worst, n_kinks) if details else worst


# -- training -------------------------------------------------------------------

LossFn = Callable[[np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]


def fit(model: Model, X: np.ndarray, loss_fn: LossFn, cfg: TrainConfig,
        on_epoch: Callable[[int, float], None] | None = None) -> Model:
    """Minibatch SGD on a copy of ``model``.

    ``loss_fn(logits, idx)`` returns the mean loss over the batch rows ``idx`` and
    its gradient w.r.t. ``logits``. Shuffling uses ``cfg.seed`` only, so runs are
    bit-reproducible.
    """
    if len(X) == 0:
        raise ValueError("empty dataset")
    out = model.copy()
    rng = np.random.default_rng(cfg.seed)
    n = len(X)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits, caches = out.forward(X[idx], keep_cache=True)
            loss, dlogits = loss_fn(logits, idx)
            total += loss * len(idx)
            if cfg.learning_rate == 0:
                continue
            _, grads = out.backward(dlogits, caches, need_input_grad=False)
            for p, g in zip(out.params, grads):
                if p is not None:
                    w, b = p
                    w -= cfg.learning_rate * g[0]
                    b -= cfg.learning_rate * g[1]
        if on_epoch is not None:
            on_epoch(epoch, total / n)
    return out


def train(model: Model, X, y, cfg: TrainConfig, **kwargs) -> Model:
    """Train with cross-entropy at ``cfg.temperature``; returns a new model."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("dataset must be non-empty with one label per example")
    if y.min() < 0 or y.max() >= model.num_classes:
        raise ValueError("label out of range")
    return fit(model, X, lambda logits, idx: ce_batch(logits, y[idx], cfg.temperature), cfg, **kwargs)


def mean_loss(model: Model, X, y, T: float = 1.0, batch_size: int = 256) -> float:
    X = np.asarray(X, dtype=np.float64)
    total = 0.0
    for s in range(0, len(X), batch_size):
        loss, _ = ce_batch(model.forward(model._batch(X[s:s + batch_size])), np.asarray(y[s:s + batch_size]), T)
        total += loss * len(X[s:s + batch_size])
    return total / len(X)


def logits_batched(model: Model, X, batch_size: int = 256) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return np.concatenate([model.forward(model._batch(X[s:s + batch_size]))
                           for s in range(0, len(X), batch_size)])
