"""Downstream generalisation benchmark: MLP on observations vs. MLP on the WTA code.

Both readout MLPs get the same random hyperparameter search (validation
BCE picks the winner) and are scored by test AUC on a held-out part of the
latent space.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .latents import EntanglementMap, LatentStructure, entangle, enumerate_categories
from .nn import (AdamWState, Dropout, LayerNorm, LeakyReLU, Linear, Sequential, adamw_step,
                 bce_with_logits, sigmoid, spawn_rngs)
from .tasks import TaskBank, TaskSpec, label_dataset, sample_task
from .trainer import UndefinedAUC, auc, dichotomize

log = logging.getLogger(__name__)

SPLIT_KINDS = ("random", "pair-of-categories", "constant-category", "vision")


@dataclass(frozen=True)
class SplitSpec:
    kind: str
    val_size: int = 500
    test_size: int = 500
    # (factor, category) selectors; pair split uses the first two of each list.
    test_select: tuple[tuple[int, int], ...] = ((0, 0), (1, 0))
    val_select: tuple[tuple[int, int], ...] = ((0, 1), (1, 1))
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SPLIT_KINDS:
            raise ValueError(f"unknown split kind {self.kind!r}")


def _matches(cats: np.ndarray, select) -> np.ndarray:
    mask = np.ones(len(cats), dtype=bool)
    for f, c in select:
        mask &= cats[:, f] == c
    return mask


def make_split(structure: LatentStructure, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partition all latent category tuples into (train, val, test)."""
    cats = enumerate_categories(structure)
    if spec.kind == "vision":
        from .sprites import STRUCTURE, make_vision_split
        if structure != STRUCTURE:
            raise ValueError("the vision split is defined for the sprite latent structure only")
        return tuple(cats[p] for p in make_vision_split(cats))
    if spec.kind == "random":
        if spec.val_size + spec.test_size >= len(cats):
            raise ValueError("structure too small for the requested split sizes")
        order = np.random.Generator(np.random.Philox(spec.seed)).permutation(len(cats))
        val = order[:spec.val_size]
        test = order[spec.val_size:spec.val_size + spec.test_size]
        train = order[spec.val_size + spec.test_size:]
        parts = [np.sort(train), np.sort(val), np.sort(test)]
    else:
        for f, c in spec.test_select + spec.val_select:
            if f >= structure.m or c >= structure.counts[f]:
                raise ValueError(f"selector ({f}, {c}) does not exist in {structure.counts}")
        if spec.kind == "pair-of-categories":
            if structure.m < 2:
                raise ValueError("pair-of-categories split needs two factors")
            test = _matches(cats, spec.test_select[:2])
            val = _matches(cats, spec.val_select[:2]) & ~test
            train = ~(test | val)
        else:
            train = _matches(cats, spec.test_select[:1])
            val = _matches(cats, spec.val_select[:1]) & ~train
            test = ~(train | val)
        parts = [np.flatnonzero(train), np.flatnonzero(val), np.flatnonzero(test)]
    if any(len(p) == 0 for p in parts):
        raise ValueError("split produced an empty part")
    return tuple(cats[p] for p in parts)


# -- readout MLP ------------------------------------------------------------

@dataclass(frozen=True)
class HpoSpace:
    hidden_dims: tuple[int, ...] = (16, 32, 64, 128, 256)
    layers: tuple[int, ...] = (1, 2, 3, 4, 5)
    dropout: tuple[float, ...] = (0.0, 0.1, 0.2)
    layernorm: tuple[bool, ...] = (True, False)
    lr: tuple[float, float] = (1e-4, 1e-1)
    weight_decay: tuple[float, float] = (1e-6, 1e-2)
    batch_sizes: tuple[int, ...] = (16, 32, 64, 128, 256)
    trials: int = 20
    max_epochs: int = 500
    patience: int = 10

    def sample(self, rng: np.random.Generator) -> dict:
        def log_uniform(lo, hi):
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        return {
            "hidden_dim": int(rng.choice(self.hidden_dims)),
            "layers": int(rng.choice(self.layers)),
            "dropout": float(rng.choice(self.dropout)),
            "layernorm": bool(rng.choice(self.layernorm)),
            "lr": log_uniform(*self.lr),
            "weight_decay": log_uniform(*self.weight_decay),
            "batch_size": int(rng.choice(self.batch_sizes)),
        }


def build_readout_mlp(d_in: int, hp: dict, rng: np.random.Generator, slope: float = 0.01) -> Sequential:
    layers = [LayerNorm(d_in)] if hp["layernorm"] else []
    width = d_in
    for _ in range(hp["layers"]):
        layers += [Linear(width, hp["hidden_dim"], rng=rng), LeakyReLU(slope)]
        if hp["dropout"] > 0:
            layers.append(Dropout(hp["dropout"], rng))
        width = hp["hidden_dim"]
    layers.append(Linear(width, 1, rng=rng))
    return Sequential(layers)


def _mlp_logits(net: Sequential, x: np.ndarray) -> np.ndarray:
    net.set_training(False)
    return net.forward(x)


@dataclass
class FitResult:
    net: Sequential
    val_loss: float
    epochs: int


def fit_readout(hp: dict, x: np.ndarray, y: np.ndarray, x_val: np.ndarray, y_val: np.ndarray,
                rng: np.random.Generator, max_epochs: int = 500, patience: int = 10) -> FitResult:
    """Train with AdamW; stop once validation BCE has not improved for ``patience`` epochs.

    The returned network carries the weights of the best validation epoch.
    """
    net = build_readout_mlp(x.shape[1], hp, rng)
    opt = AdamWState(lr=hp["lr"], weight_decay=hp["weight_decay"])
    params = {f"{n}": layer.params[k] for n, layer, k in net.named_params()}
    y = y.reshape(-1, 1)
    y_val = y_val.reshape(-1, 1)
    best = (np.inf, None, 0)
    stale = 0
    epoch = 0
    for epoch in range(max_epochs):
        net.set_training(True)
        order = rng.permutation(len(x))
        for i in range(0, len(x), hp["batch_size"]):
            idx = order[i:i + hp["batch_size"]]
            net.zero_grad()
            _, g = bce_with_logits(net.forward(x[idx]), y[idx])
            net.backward(g)
            grads = {f"{n}": layer.grads[k] for n, layer, k in net.named_params()}
            adamw_step(params, grads, opt)
        val_loss, _ = bce_with_logits(_mlp_logits(net, x_val), y_val)
        if not np.isfinite(val_loss):
            break
        if val_loss < best[0] - 1e-12:
            best = (val_loss, {k: v.copy() for k, v in params.items()}, epoch + 1)
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    if best[1] is not None:
        for k, v in best[1].items():
            params[k][...] = v
    return FitResult(net, float(best[0]), best[2])


def hpo_search(space: HpoSpace, train: tuple[np.ndarray, np.ndarray],
               val: tuple[np.ndarray, np.ndarray], rng: np.random.Generator) -> tuple[dict, list[dict]]:
    """Uniform random search; returns the best configuration and the trial log."""
    if len(train[0]) == 0 or len(val[0]) == 0:
        raise ValueError("training and validation sets must be non-empty")
    trials = []
    best_hp, best_loss = None, np.inf
    for t in range(space.trials):
        hp = space.sample(rng)
        fit = fit_readout(hp, *train, *val, rng, space.max_epochs, space.patience)
        trials.append({"trial": t, **hp, "val_bce": fit.val_loss, "epochs": fit.epochs})
        if fit.val_loss < best_loss or best_hp is None:
            best_hp, best_loss = hp, fit.val_loss
    return best_hp, trials


# -- comparison -------------------------------------------------------------

Encoder = Callable[[np.ndarray, np.ndarray], np.ndarray]


def ideal_encoder(structure: LatentStructure) -> Encoder:
    """``z_hat = z``: the perfectly symbolic code."""
    def encode(cats: np.ndarray, x: np.ndarray) -> np.ndarray:
        return structure.onehot(cats).reshape(len(cats), structure.l)
    return encode


def model_encoder(model) -> Encoder:
    def encode(cats: np.ndarray, x: np.ndarray) -> np.ndarray:
        return model.encode(x)
    return encode


@dataclass
class ComparisonRow:
    size: int
    train_auc: dict[str, list[float]] = field(default_factory=lambda: {"x": [], "z": []})
    test_auc: dict[str, list[float]] = field(default_factory=lambda: {"x": [], "z": []})

    def stats(self, which: str, rep: str) -> tuple[float, float]:
        vals = np.asarray((self.train_auc if which == "train" else self.test_auc)[rep])
        if vals.size == 0:
            return float("nan"), float("nan")
        return float(vals.mean()), float(vals.std())


@dataclass
class ComparisonReport:
    split: str
    seeds: list[int]
    rows: list[ComparisonRow]
    trials: list[dict] = field(default_factory=list)

    HEADER = ["train_samples",
              "train_mean_x", "train_sd_x", "train_mean_zhat", "train_sd_zhat",
              "test_mean_x", "test_sd_x", "test_mean_zhat", "test_sd_zhat"]

    def table(self) -> list[list]:
        out = []
        for r in self.rows:
            line = [r.size]
            for which in ("train", "test"):
                for rep in ("x", "z"):
                    line += list(r.stats(which, rep))
            out.append(line)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.HEADER)
            for line in self.table():
                w.writerow([line[0]] + [f"{v:.6f}" for v in line[1:]])

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({
            "split": self.split, "seeds": self.seeds,
            "rows": [asdict(r) for r in self.rows], "trials": self.trials,
        }, indent=1))

    def curve(self, rep: str = "z") -> list[tuple[int, float, float]]:
        """(size, mean, sd) of test AUC, ready for plotting."""
        return [(r.size, *r.stats("test", rep)) for r in self.rows]


def sample_downstream_task(structure: LatentStructure, rng: np.random.Generator,
                           ignore_factor: int | None = None) -> TaskSpec:
    """A fresh linear task; ``ignore_factor`` gets p = q so it cannot affect the posterior."""
    task = sample_task(structure, rng)
    if ignore_factor is None:
        return task
    blk = structure.blocks()[ignore_factor]
    q = task.q.copy()
    q[blk] = task.p[blk]
    return TaskSpec(task.p, q, task.prior)


def _both_classes(*targets: np.ndarray) -> bool:
    return all(0 < dichotomize(t).sum() < len(t) for t in targets)


def run_comparison(structure: LatentStructure, phi: EntanglementMap | Callable, encoder: Encoder,
                   split: SplitSpec, sizes: list[int], seeds: list[int],
                   space: HpoSpace | None = None, representations=("x", "z"),
                   max_task_draws: int = 100) -> ComparisonReport:
    """Train ``MLP_x`` and ``MLP_zhat`` on a new task for every (size, seed) and score test AUC.

    Training sets larger than the train part of the split are drawn with
    replacement; otherwise without. ``phi`` is either an entanglement map or
    any callable mapping category tuples to observations (e.g. a renderer).
    """
    space = space or HpoSpace()
    train_c, val_c, test_c = make_split(structure, split)
    if isinstance(phi, EntanglementMap):
        def observe(c):
            return entangle(phi, structure.onehot(c).reshape(len(c), -1))
    else:
        observe = phi
    x_of = {name: observe(c)
            for name, c in (("train", train_c), ("val", val_c), ("test", test_c))}
    rep_of = {
        "x": {k: v for k, v in x_of.items()},
        "z": {name: encoder(c, x_of[name])
              for name, c in (("train", train_c), ("val", val_c), ("test", test_c))},
    }
    ignore = 0 if split.kind == "constant-category" else None
    rows = [ComparisonRow(s) for s in sizes]
    report = ComparisonReport(split.kind, list(seeds), rows)
    for seed in seeds:
        task_rng, sub_rng, fit_rng = spawn_rngs(seed, 3)
        for _ in range(max_task_draws):
            bank = TaskBank(structure, [sample_downstream_task(structure, task_rng, ignore)])
            y = {name: label_dataset(bank, structure.onehot(c).reshape(len(c), -1))[:, 0]
                 for name, c in (("train", train_c), ("val", val_c), ("test", test_c))}
            if _both_classes(y["train"], y["test"]):
                break
        else:
            raise RuntimeError("could not draw a task with both classes present")
        for row in rows:
            replace = row.size > len(train_c)
            idx = sub_rng.choice(len(train_c), size=row.size, replace=replace)
            if not _both_classes(y["train"][idx]):
                idx = np.r_[idx[:-2], np.argmax(y["train"]), np.argmin(y["train"])]
            for rep in representations:
                data = rep_of[rep]
                tr = (data["train"][idx], y["train"][idx])
                hp, trials = hpo_search(space, tr, (data["val"], y["val"]), fit_rng)
                fit = fit_readout(hp, *tr, data["val"], y["val"], fit_rng,
                                  space.max_epochs, space.patience)
                score_tr = sigmoid(_mlp_logits(fit.net, tr[0]))[:, 0]
                score_te = sigmoid(_mlp_logits(fit.net, data["test"]))[:, 0]
                row.train_auc[rep].append(_auc_or_nan(score_tr, tr[1]))
                row.test_auc[rep].append(_auc_or_nan(score_te, y["test"]))
                report.trials.append({"seed": seed, "size": row.size, "representation": rep,
                                      "best": hp, "trials": trials})
                log.info("seed %d size %d %s: test AUC %.4f", seed, row.size, rep,
                         row.test_auc[rep][-1])
    return report


def _auc_or_nan(scores: np.ndarray, target: np.ndarray) -> float:
    try:
        return auc(scores, dichotomize(target))
    except UndefinedAUC:
        return float("nan")
