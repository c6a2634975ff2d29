"""Minimal dense network engine: layers with explicit backward passes,
losses, and Adam with gradient clipping and per-unit max-norm weights.

Everything is float64 numpy. Layers cache forward state only in training
mode; a backward call consumes the most recent training forward. Gradients
accumulate into Parameter.grad until zero_grads(), so several loss branches
can be backpropagated into one parameter set before an optimizer step.
"""

import numpy as np

from .errors import BatchError, InputError, LabelError, NumericError, ShapeError, StateError


class Parameter:
    """Named tensor with an accumulated gradient.

    row_norm_capped marks dense weight matrices whose rows (the incoming
    weights of one unit) are subject to the optimizer's max-norm projection.
    """

    __slots__ = ("name", "value", "grad", "row_norm_capped")

    def __init__(self, name: str, value: np.ndarray, row_norm_capped: bool = False):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.row_norm_capped = row_norm_capped

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a 2-d batch, got shape {x.shape}")
    return x


class Dense:
    """Affine layer: y = x W^T + b, weights shaped (out_units, in_units)."""

    def __init__(self, in_units: int, out_units: int, rng: np.random.Generator, name: str = "dense"):
        limit = np.sqrt(6.0 / (in_units + out_units))
        w = rng.uniform(-limit, limit, size=(out_units, in_units))
        self.in_units = in_units
        self.out_units = out_units
        self.weights = Parameter(f"{name}.weights", w, row_norm_capped=True)
        self.bias = Parameter(f"{name}.bias", np.zeros(out_units))
        self._x = None

    def forward(self, x, train: bool = False, rng=None, update_stats: bool = True) -> np.ndarray:
        x = _as_matrix(x)
        if x.shape[1] != self.in_units:
            raise ShapeError(
                f"{self.weights.name}: input has {x.shape[1]} features, layer expects {self.in_units}"
            )
        self._x = x if train else None
        return x @ self.weights.value.T + self.bias.value

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise StateError(f"{self.weights.name}: backward without a training-mode forward")
        upstream = _as_matrix(upstream)
        self.weights.grad += upstream.T @ self._x
        self.bias.grad += upstream.sum(axis=0)
        return upstream @ self.weights.value

    def params(self):
        return [self.weights, self.bias]

    def state(self):
        return []


class BatchNorm:
    """Batch normalization with running statistics for inference."""

    def __init__(self, units: int, momentum: float = 0.99, eps: float = 1e-5, name: str = "bn"):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.scale = Parameter(f"{name}.scale", np.ones(units))
        self.shift = Parameter(f"{name}.shift", np.zeros(units))
        self.running_mean = np.zeros(units)
        self.running_var = np.ones(units)
        self.momentum = momentum
        self.eps = eps
        self.name = name
        self._cache = None

    def forward(self, x, train: bool = False, rng=None, update_stats: bool = True) -> np.ndarray:
        x = _as_matrix(x)
        if train:
            if x.shape[0] < 2:
                raise BatchError(f"{self.name}: training batch must have >= 2 rows, got {x.shape[0]}")
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            if update_stats:
                self.running_mean *= self.momentum
                self.running_mean += (1.0 - self.momentum) * mu
                self.running_var *= self.momentum
                self.running_var += (1.0 - self.momentum) * var
            inv_std = 1.0 / np.sqrt(var + self.eps)
            centered = x - mu
            xhat = centered * inv_std
            self._cache = (centered, inv_std, xhat)
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
            self._cache = None
        return self.scale.value * xhat + self.shift.value

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise StateError(f"{self.name}: backward without a training-mode forward")
        centered, inv_std, xhat = self._cache
        n = upstream.shape[0]
        self.scale.grad += (upstream * xhat).sum(axis=0)
        self.shift.grad += upstream.sum(axis=0)
        dxhat = upstream * self.scale.value
        # gradient through the batch mean and variance
        dvar = (dxhat * centered).sum(axis=0) * (-0.5) * inv_std**3
        dmu = -(dxhat.sum(axis=0)) * inv_std + dvar * (-2.0 / n) * centered.sum(axis=0)
        return dxhat * inv_std + dvar * 2.0 * centered / n + dmu / n

    def params(self):
        return [self.scale, self.shift]

    def state(self):
        return [(f"{self.name}.running_mean", self.running_mean), (f"{self.name}.running_var", self.running_var)]


class Relu:
    def __init__(self):
        self._mask = None

    def forward(self, x, train: bool = False, rng=None, update_stats: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if train:
            self._mask = x > 0
        return np.maximum(x, 0.0)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise StateError("relu: backward without a training-mode forward")
        return upstream * self._mask

    def params(self):
        return []

    def state(self):
        return []


class Dropout:
    """Inverted dropout: survivors scaled by 1/(1-rate), inference is identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.mask = None

    def forward(self, x, train: bool = False, rng=None, update_stats: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not train or self.rate == 0.0:
            self.mask = None
            return x
        if rng is None:
            raise StateError("dropout: training-mode forward requires an rng")
        self.mask = rng.random(x.shape) >= self.rate
        return x * self.mask / (1.0 - self.rate)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self.mask is None:
            return upstream
        return upstream * self.mask / (1.0 - self.rate)

    def params(self):
        return []

    def state(self):
        return []


class Stack:
    """Sequential container sharing the forward/backward layer protocol."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train: bool = False, rng=None, update_stats: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng, update_stats=update_stats)
        return x

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            upstream = layer.backward(upstream)
        return upstream

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def state(self):
        out = []
        for layer in self.layers:
            out.extend(layer.state())
        return out


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = _as_matrix(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if pred.size == 0:
        raise InputError("mse_loss: empty input")
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    grad = 2.0 * diff / pred.size
    return loss, grad


def crossentropy_loss(logits, onehot):
    """Softmax cross-entropy (mean over rows) and its gradient w.r.t. logits."""
    logits = _as_matrix(logits)
    onehot = _as_matrix(onehot)
    if logits.shape != onehot.shape:
        raise ShapeError(f"crossentropy_loss: shapes differ, {logits.shape} vs {onehot.shape}")
    if np.any(onehot < 0.0) or np.any(np.abs(onehot.sum(axis=1) - 1.0) > 1e-9):
        raise LabelError("crossentropy_loss: each label row must be nonnegative and sum to 1")
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1)) + logits.max(axis=1)
    loss = float(np.mean(logsumexp - (onehot * logits).sum(axis=1)))
    grad = (softmax(logits) - onehot) / n
    return loss, grad


class Adam:
    """Adam over a fixed parameter list, with global gradient-norm clipping
    before the update and per-unit max-norm weight projection after it.

    step() raises NumericError and leaves everything untouched when any
    gradient is non-finite.
    """

    def __init__(
        self,
        params,
        learning_rate: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        max_norm: float | None = 4.0,
        clip_norm: float | None = 10.0,
    ):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_norm = max_norm
        self.clip_norm = clip_norm
        self.step_count = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grads(self):
        for p in self.params:
            p.grad[...] = 0.0

    def global_grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def step(self):
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient in {p.name}")
        scale = 1.0
        if self.clip_norm is not None:
            norm = self.global_grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.max_norm is not None and p.row_norm_capped:
                self._project_rows(p)

    def _project_rows(self, p: Parameter):
        norms = np.sqrt((p.value * p.value).sum(axis=1))
        over = norms > self.max_norm
        if np.any(over):
            p.value[over] *= (self.max_norm / norms[over])[:, None]
