"""WTA predictor: MLP encoder, multi-WTA bottleneck and a bias-free linear readout."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import LayerNorm, LeakyReLU, Linear, Sequential, check_finite, make_rng, sigmoid

NOISE_CLAMP = 1e-12


@dataclass(frozen=True)
class WtaHeadConfig:
    sizes: tuple[int, ...]
    tau: float = 6.0
    tau_decay: float = 0.999
    noise: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if any(s < 2 for s in self.sizes):
            raise ValueError("every WTA head needs at least two outputs")
        if self.tau <= 0:
            raise ValueError("temperature must be positive")

    @property
    def width(self) -> int:
        return sum(self.sizes)

    def blocks(self) -> list[slice]:
        out, start = [], 0
        for s in self.sizes:
            out.append(slice(start, start + s))
            start += s
        return out

    def tau_at(self, epoch: int) -> float:
        return self.tau * self.tau_decay ** epoch


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.random(shape), NOISE_CLAMP, 1.0 - NOISE_CLAMP)
    return -np.log(-np.log(u))


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _onehot_argmax(v: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest index.
    out = np.zeros_like(v)
    np.put_along_axis(out, v.argmax(axis=-1)[..., None], 1.0, axis=-1)
    return out


def gumbel_st_forward(a_block: np.ndarray, tau: float, rng: np.random.Generator | None,
                      noise: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Hard one-hot sample and its tempered softmax relaxation for one head.

    Works on a single vector or on a batch (last axis is the head).
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    a_block = np.asarray(a_block, dtype=np.float64)
    if a_block.shape[-1] < 2:
        raise ValueError("a WTA head needs at least two inputs")
    perturbed = a_block + gumbel_noise(a_block.shape, rng) if noise else a_block
    return _onehot_argmax(perturbed), _softmax(perturbed / tau)


def gumbel_st_backward(upstream: np.ndarray, soft: np.ndarray, tau: float) -> np.ndarray:
    """Straight-through gradient: the hard sample is treated as the soft one."""
    inner = (upstream * soft).sum(axis=-1, keepdims=True)
    return soft * (upstream - inner) / tau


@dataclass
class ForwardTrace:
    a: np.ndarray
    soft: list[np.ndarray]
    z_hat: np.ndarray
    z_out: np.ndarray
    y_hat: np.ndarray
    tau: float
    mode: str
    relaxed: bool = False


@dataclass
class PredictorConfig:
    d_in: int
    hidden: tuple[int, ...]
    heads: WtaHeadConfig
    n_tasks: int
    slope: float = 0.01
    ln_eps: float = 1e-5
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["heads"]["sizes"] = list(self.heads.sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        d = dict(d)
        d["heads"] = WtaHeadConfig(**{**d["heads"], "sizes": tuple(d["heads"]["sizes"])})
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


class WtaPredictor:
    """``x -> a -> z_hat (one-hot per head) -> sigmoid(W_out z_hat)``.

    The encoder is ``[Linear, LeakyReLU] * len(hidden)``, a layer norm, then a
    final linear layer producing one logit per WTA output.
    """

    def __init__(self, config: PredictorConfig) -> None:
        self.config = config
        rng = make_rng(config.seed)
        dims = (config.d_in, *config.hidden)
        layers = []
        for a, b in zip(dims[:-1], dims[1:]):
            layers += [Linear(a, b, rng=rng), LeakyReLU(config.slope)]
        layers += [LayerNorm(dims[-1], config.ln_eps), Linear(dims[-1], config.heads.width, rng=rng)]
        layers[0].input_grad = False
        self.encoder = Sequential(layers)
        self.readout = Linear(config.heads.width, config.n_tasks, bias=False, rng=rng)
        self.mode = "train"

    @property
    def heads(self) -> WtaHeadConfig:
        return self.config.heads

    def train(self) -> "WtaPredictor":
        self.mode = "train"
        return self

    def eval(self) -> "WtaPredictor":
        self.mode = "eval"
        return self

    def named_params(self):
        for name, layer, key in self.encoder.named_params():
            yield f"encoder.{name}", layer, key
        yield "readout.W", self.readout, "W"

    def param_dict(self) -> dict[str, np.ndarray]:
        return {name: layer.params[key] for name, layer, key in self.named_params()}

    def grad_dict(self) -> dict[str, np.ndarray]:
        return {name: layer.grads[key] for name, layer, key in self.named_params()}

    def zero_grad(self) -> None:
        self.encoder.zero_grad()
        self.readout.zero_grad()

    @property
    def W_out(self) -> np.ndarray:
        return self.readout.params["W"]

    def forward(self, x: np.ndarray, epoch: int = 0, rng: np.random.Generator | None = None,
                relaxed: bool = False) -> ForwardTrace:
        """Run the predictor.

        Train mode samples Gumbel noise (if enabled) at the epoch's
        temperature; eval mode takes the plain argmax of ``a``. With
        ``relaxed`` the soft distributions are fed to the readout instead of
        the hard one-hots, which makes the whole map differentiable.
        """
        if x.ndim != 2 or x.shape[1] != self.config.d_in:
            raise ValueError(f"expected inputs of width {self.config.d_in}, got {x.shape}")
        a = check_finite(self.encoder.forward(x), "encoder output")
        tau = self.heads.tau_at(epoch)
        noise = self.mode == "train" and self.heads.noise
        if noise and rng is None:
            raise ValueError("train-mode forward with noise needs an rng")
        z_hat = np.empty_like(a)
        softs = []
        for blk in self.heads.blocks():
            hard, soft = gumbel_st_forward(a[:, blk], tau, rng, noise)
            z_hat[:, blk] = soft if relaxed else hard
            softs.append(soft)
        z_out = self.readout.forward(z_hat)
        return ForwardTrace(a, softs, z_hat, z_out, sigmoid(z_out), tau, self.mode, relaxed)

    def backward(self, trace: ForwardTrace, grad_z_out: np.ndarray) -> None:
        """Accumulate parameter gradients given d(loss)/d(readout logits)."""
        grad_z = self.readout.backward(grad_z_out)
        grad_a = np.empty_like(trace.a)
        for blk, soft in zip(self.heads.blocks(), trace.soft):
            grad_a[:, blk] = gumbel_st_backward(grad_z[:, blk], soft, trace.tau)
        self.encoder.backward(grad_a)

    def encode(self, x: np.ndarray, batch: int = 4096) -> np.ndarray:
        """Deterministic eval-mode bottleneck code for a batch of inputs."""
        prev = self.mode
        self.eval()
        try:
            parts = [self.forward(x[i:i + batch]).z_hat for i in range(0, len(x), batch)]
        finally:
            self.mode = prev
        return np.concatenate(parts) if parts else np.zeros((0, self.heads.width))

    def predict(self, x: np.ndarray, batch: int = 4096) -> np.ndarray:
        prev = self.mode
        self.eval()
        try:
            parts = [self.forward(x[i:i + batch]).y_hat for i in range(0, len(x), batch)]
        finally:
            self.mode = prev
        return np.concatenate(parts)

    def logits_for_codes(self, z_hat: np.ndarray) -> np.ndarray:
        return z_hat @ self.W_out.T


def predictor_forward(model: WtaPredictor, x: np.ndarray, epoch: int = 0,
                      rng: np.random.Generator | None = None) -> ForwardTrace:
    return model.forward(x, epoch, rng)


def predictor_backward(model: WtaPredictor, trace: ForwardTrace,
                       grad_z_out: np.ndarray) -> dict[str, np.ndarray]:
    model.zero_grad()
    model.backward(trace, grad_z_out)
    return {k: v.copy() for k, v in model.grad_dict().items()}


# -- checkpoints ------------------------------------------------------------
# magic, u16 version, u32 header length, JSON header, then float64 blobs in
# header["params"] order.

CKPT_MAGIC = b"WTAC"
CKPT_VERSION = 1


def save_checkpoint(model: WtaPredictor, path: str | Path, extra: dict | None = None) -> None:
    params = model.param_dict()
    header = {
        "config": model.config.to_dict(),
        "params": [[k, list(v.shape)] for k, v in params.items()],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(blob)) + blob)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[WtaPredictor, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    version, hlen = struct.unpack_from("<HI", raw, 4)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[10:10 + hlen])
    model = WtaPredictor(PredictorConfig.from_dict(header["config"]))
    pos = 10 + hlen
    targets = dict((name, (layer, key)) for name, layer, key in model.named_params())
    for name, shape in header["params"]:
        size = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape)
        layer, key = targets[name]
        layer.params[key][...] = arr
        pos += 8 * size
    model.eval()
    return model, header.get("extra", {})
