"""Small float64 numeric core: layers with explicit backward passes, AdamW, schedules.

Every layer caches what it needs during ``forward`` and consumes that cache in
``backward``. Networks are plain sequential stacks, so a list of layers is the
whole "tape".
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "philox4x64"
BCE_CLAMP = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; identical streams on every platform for a given seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent child streams derived from one root seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")
    return arr


class Layer:
    """Base class. Subclasses fill ``params`` and ``grads`` with matching keys."""

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Linear(Layer):
    def __init__(self, d_in: int, d_out: int, bias: bool = True,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng if rng is not None else make_rng(0)
        bound = 1.0 / math.sqrt(d_in)
        self.params["W"] = rng.uniform(-bound, bound, size=(d_out, d_in))
        if bias:
            self.params["b"] = rng.uniform(-bound, bound, size=d_out)
        self.zero_grad()
        self.input_grad = True
        self._x: np.ndarray | None = None

    @property
    def d_in(self) -> int:
        return self.params["W"].shape[1]

    @property
    def d_out(self) -> int:
        return self.params["W"].shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return linear_forward(x, self.params["W"], self.params.get("b"))

    def backward(self, grad: np.ndarray) -> np.ndarray:
        self.grads["W"] += grad.T @ self._x
        if "b" in self.params:
            self.grads["b"] += grad.sum(axis=0)
        if not self.input_grad:
            return None
        return grad @ self.params["W"]


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.01) -> None:
        super().__init__()
        if not 0.0 < slope < 1.0:
            raise ValueError(f"slope must lie in (0, 1), got {slope}")
        self.slope = slope
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x >= 0
        return leaky_relu(x, self.slope)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return np.where(self._mask, grad, self.slope * grad)


class LayerNorm(Layer):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.params["gain"] = np.ones(dim)
        self.params["offset"] = np.zeros(dim)
        self.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=1, keepdims=True)
        xc = x - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + self.eps)
        xhat = xc * inv
        self._xhat, self._inv = xhat, inv
        return xhat * self.params["gain"] + self.params["offset"]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        xhat, inv = self._xhat, self._inv
        self.grads["gain"] += (grad * xhat).sum(axis=0)
        self.grads["offset"] += grad.sum(axis=0)
        g = grad * self.params["gain"]
        return inv * (g - g.mean(axis=1, keepdims=True)
                      - xhat * (g * xhat).mean(axis=1, keepdims=True))


class Dropout(Layer):
    """Inverted dropout; identity when ``training`` is False."""

    def __init__(self, rate: float, rng: np.random.Generator) -> None:
        super().__init__()
        self.rate = rate
        self.rng = rng
        self.training = True
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if not self.training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad if self._mask is None else grad * self._mask


class Sequential(Layer):
    def __init__(self, layers: list[Layer]) -> None:
        super().__init__()
        self.layers = layers

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                yield f"{i}.{k}", layer, k

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
            if grad is None:
                break
        return grad

    def set_training(self, flag: bool) -> None:
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.training = flag


# -- functional forms -------------------------------------------------------

def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"shape mismatch: input {x.shape}, weights {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match {W.shape[0]} outputs")
    out = x @ W.T
    if b is not None:
        out = out + b
    return out


def leaky_relu(x: np.ndarray, slope: float = 0.01) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def layer_norm(x: np.ndarray, gain: np.ndarray, offset: np.ndarray,
               eps: float = 1e-5) -> np.ndarray:
    if gain.shape != (x.shape[1],) or offset.shape != (x.shape[1],):
        raise ValueError("gain/offset length must equal the number of columns")
    xc = x - x.mean(axis=1, keepdims=True)
    return xc / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps) * gain + offset


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Two-branch form never exponentiates a positive number.
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def bce_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d(bce)/d(pred) for the mean-reduced loss."""
    p = np.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return (p - target) / (p * (1.0 - p)) / pred.size


def bce_with_logits(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean BCE of sigmoid(logits) and its gradient w.r.t. the logits.

    Computed in log-sum-exp form, so saturated logits lose no precision.
    """
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch: {logits.shape} vs {target.shape}")
    # -[t log s(x) + (1-t) log(1-s(x))] = softplus(x) - t x
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    loss = float(np.mean(softplus - target * logits))
    grad = (sigmoid(logits) - target) / logits.size
    return loss, grad


# -- optimisation -----------------------------------------------------------

@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: AdamWState) -> None:
    """In-place decoupled-weight-decay Adam update (same rule as torch.optim.AdamW)."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        if m.shape != p.shape:
            raise ValueError(f"optimizer state for {k} has shape {m.shape}, param {p.shape}")
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class Schedule:
    kind: str  # "cosine" or "exponential"
    base: float
    t_max: int = 1000
    eta_min: float = 0.0
    decay: float = 1.0

    def __call__(self, epoch: int) -> float:
        return schedule_value(self, epoch)


def schedule_value(s: Schedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if s.kind == "cosine":
        return s.eta_min + (s.base - s.eta_min) * (1.0 + math.cos(math.pi * epoch / s.t_max)) / 2.0
    if s.kind == "exponential":
        return s.base * s.decay ** epoch
    raise ValueError(f"unknown schedule kind {s.kind!r}")
