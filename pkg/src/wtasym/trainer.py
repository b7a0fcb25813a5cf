"""Multi-task training of the WTA predictor, plus MAE and AUC metrics."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .model import WtaPredictor
from .nn import AdamWState, Schedule, adamw_step, bce_with_logits, make_rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 256
    lr: float = 0.008
    eta_min: float = 1e-6
    t_max: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    l1_readout: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.t_max < 1:
            raise ValueError(f"invalid training configuration: {self}")
        if self.weight_decay < 0 or self.l1_readout < 0:
            raise ValueError("penalty coefficients must be non-negative")

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    seed: int
    config_hash: str
    train_loss: list[float] = field(default_factory=list)
    test_mae: float | None = None
    test_auc: list[float | None] = field(default_factory=list)
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    def write_loss_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for e, v in enumerate(self.train_loss):
                w.writerow([e, repr(v)])


def train(model: WtaPredictor, x: np.ndarray, targets: np.ndarray, config: TrainConfig,
          x_test: np.ndarray | None = None, targets_test: np.ndarray | None = None,
          callback=None) -> RunRecord:
    """Minibatch BCE training with AdamW, cosine learning rate and decaying temperature.

    ``targets`` are posterior probabilities, one column per task. The
    learning rate and the Gumbel temperature change once per epoch.
    """
    if x.shape[0] != targets.shape[0] or targets.shape[1] != model.config.n_tasks:
        raise ValueError("inputs and targets do not match the model")
    rng = make_rng(config.seed)
    lr_schedule = Schedule("cosine", config.lr, config.t_max, config.eta_min)
    opt = AdamWState(lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                     weight_decay=config.weight_decay)
    record = RunRecord(seed=config.seed, config_hash=config.config_hash())
    model.train()
    start = time.perf_counter()
    n = x.shape[0]
    for epoch in range(config.epochs):
        opt.lr = lr_schedule(epoch)
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            model.zero_grad()
            trace = model.forward(x[idx], epoch, rng)
            loss, grad = bce_with_logits(trace.z_out, targets[idx])
            if config.l1_readout:
                loss += config.l1_readout * float(np.abs(model.W_out).sum())
            if not np.isfinite(loss):
                raise FloatingPointError(f"loss diverged at epoch {epoch}, batch {i // config.batch_size}")
            model.backward(trace, grad)
            if config.l1_readout:
                model.readout.grads["W"] += config.l1_readout * np.sign(model.W_out)
            adamw_step(model.param_dict(), model.grad_dict(), opt)
            total += loss * len(idx)
        record.train_loss.append(total / n)
        if callback is not None:
            callback(epoch, model, record)
    record.wall_time = time.perf_counter() - start
    model.eval()
    if x_test is not None and targets_test is not None:
        pred = model.predict(x_test)
        record.test_mae = mae(pred, targets_test)
        record.test_auc = [_safe_auc(pred[:, j], targets_test[:, j]) for j in range(pred.shape[1])]
    return record


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


class UndefinedAUC(ValueError):
    """Raised when the labels contain a single class."""


def dichotomize(target: np.ndarray) -> np.ndarray:
    return (np.asarray(target) >= 0.5).astype(np.int64)


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-sum ROC AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC("AUC needs both classes")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    # Average 1-based rank of each run of equal scores.
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], scores.size]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _safe_auc(scores: np.ndarray, target: np.ndarray) -> float | None:
    try:
        return auc(scores, dichotomize(target))
    except UndefinedAUC:
        return None
