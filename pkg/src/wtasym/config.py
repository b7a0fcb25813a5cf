"""Experiment configuration: one JSON document per experiment, plus bundled presets.

All randomness of a run is derived from a single root seed through
``derive_seeds``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .latents import LatentStructure
from .trainer import TrainConfig

SETUPS = ("matched", "unmatched", "confounding", "dsprites", "custom")
SPRITE_INPUT_DIM = 64 * 64 * 3
SEED_STREAMS = ("phi", "tasks", "data", "init", "shuffle")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent experiment configs."""


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 1000
    batch_size: int = 256
    lr: float = 0.008
    eta_min: float = 1e-6
    t_max: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    l1_readout: float = 0.0

    def to_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **asdict(self))


@dataclass(frozen=True)
class GeneralizationSettings:
    splits: tuple[str, ...] = ("pair-of-categories",)
    sizes: tuple[int, ...] = (100,)
    seeds: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    setup: str
    counts: tuple[int, ...]
    head_sizes: tuple[int, ...]
    encoder_dims: tuple[int, ...]
    n_tasks: int
    tau: float
    tau_decay: float
    train: TrainSettings
    phi_dims: tuple[int, ...] | None = None
    confounders: tuple[int, ...] | None = None
    train_size: int | None = None
    test_size: int | None = None
    mae_threshold: float = 1e-6
    generalization: GeneralizationSettings = field(default_factory=GeneralizationSettings)
    seeds: tuple[int, ...] = (0,)

    @property
    def structure(self) -> LatentStructure:
        return LatentStructure(self.counts)

    @property
    def confounder_structure(self) -> LatentStructure | None:
        return LatentStructure(self.confounders) if self.confounders else None

    @property
    def is_vision(self) -> bool:
        return self.setup == "dsprites"

    def validate(self) -> "ExperimentConfig":
        """Reject every cross-field inconsistency; returns self for chaining."""
        errors = []
        try:
            structure = self.structure
        except ValueError as exc:
            raise ConfigError(f"counts: {exc}") from None
        if self.setup not in SETUPS:
            errors.append(f"setup must be one of {SETUPS}, got {self.setup!r}")
        if any(h < 2 for h in self.head_sizes) or not self.head_sizes:
            errors.append("every WTA head needs at least two outputs")
        if len(self.encoder_dims) < 2 or any(d < 1 for d in self.encoder_dims):
            errors.append("encoder_dims needs an input and an output width, all positive")
        elif self.encoder_dims[-1] != sum(self.head_sizes):
            errors.append(f"encoder output {self.encoder_dims[-1]} != sum of head sizes "
                          f"{sum(self.head_sizes)}")
        if self.is_vision:
            if self.counts != (3, 8, 8, 10):
                errors.append("dsprites setup needs counts [3, 8, 8, 10]")
            if self.encoder_dims and self.encoder_dims[0] != SPRITE_INPUT_DIM:
                errors.append(f"dsprites encoder input must be {SPRITE_INPUT_DIM}")
            if self.phi_dims or self.confounders:
                errors.append("dsprites setup takes no entanglement map or confounders")
        else:
            if not self.phi_dims or len(self.phi_dims) < 2:
                errors.append("phi_dims must list at least input and output widths")
            else:
                conf = self.confounder_structure.l if self.confounders else 0
                if self.phi_dims[0] != structure.l + conf:
                    errors.append(f"phi input {self.phi_dims[0]} != latent length "
                                  f"{structure.l + conf} (including confounders)")
                if self.encoder_dims and self.encoder_dims[0] != self.phi_dims[-1]:
                    errors.append(f"encoder input {self.encoder_dims[0]} != phi output "
                                  f"{self.phi_dims[-1]}")
            for key in ("train_size", "test_size"):
                v = getattr(self, key)
                if v is None or v < 1:
                    errors.append(f"{key} must be a positive integer")
        if self.confounders is not None:
            try:
                LatentStructure(self.confounders)
            except ValueError as exc:
                errors.append(f"confounders: {exc}")
        if self.n_tasks < 1:
            errors.append("n_tasks must be positive")
        if self.tau <= 0 or not 0 < self.tau_decay <= 1:
            errors.append("tau must be positive and tau_decay in (0, 1]")
        t = self.train
        if t.epochs < 0 or t.batch_size < 1 or t.lr <= 0 or t.t_max < 1:
            errors.append("train: epochs >= 0, batch_size >= 1, lr > 0, t_max >= 1 required")
        if t.weight_decay < 0 or t.l1_readout < 0:
            errors.append("train: weight_decay and l1_readout must be non-negative")
        for kind in self.generalization.splits:
            if kind not in ("random", "pair-of-categories", "constant-category", "vision"):
                errors.append(f"unknown split kind {kind!r}")
        if any(s < 1 for s in self.generalization.sizes):
            errors.append("generalization sizes must be positive")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["generalization"] = {k: list(v) for k, v in d["generalization"].items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes).validate()


def _tuple(v):
    return None if v is None else tuple(v)


def config_from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        train = TrainSettings(**d.pop("train", {}))
        gen = d.pop("generalization", None) or {}
        gen = GeneralizationSettings(**{k: tuple(v) for k, v in gen.items()})
        for key in ("counts", "head_sizes", "encoder_dims", "phi_dims", "confounders", "seeds"):
            if key in d:
                d[key] = _tuple(d[key])
        cfg = ExperimentConfig(train=train, generalization=gen, **d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def preset_names() -> list[str]:
    root = resources.files(__package__) / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    path = resources.files(__package__) / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return config_from_dict(json.loads(path.read_text()))


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def derive_seeds(root: int) -> dict[str, int]:
    """Independent integer seeds for each random stream of a run."""
    children = np.random.SeedSequence(int(root)).spawn(len(SEED_STREAMS))
    return {name: int(c.generate_state(1, np.uint32)[0]) for name, c in zip(SEED_STREAMS, children)}
