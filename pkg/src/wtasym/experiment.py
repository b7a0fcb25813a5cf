"""End-to-end runs: build data and tasks from a config, train, evaluate the code."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, derive_seeds
from .latents import (ENUMERATION_CAP, Dataset, EntanglementMap, build_entanglement,
                      enumerate_categories, load_dataset, make_dataset, save_dataset)
from .model import PredictorConfig, WtaHeadConfig, WtaPredictor
from .nn import make_rng
from .sprites import make_vision_split, render_corpus
from .symbolic import (ActivationTable, SymbolicVerdict, build_activation_table, check_symbolic,
                       readout_consistency, recover_structured_permutation)
from .tasks import TaskBank, label_dataset
from .theory import StructuredPermutation
from .trainer import RunRecord, mae, train


@dataclass
class RunData:
    config: ExperimentConfig
    seed: int
    seeds: dict[str, int]
    bank: TaskBank
    train: Dataset
    test: Dataset
    phi: EntanglementMap | None = None

    @property
    def structure(self):
        return self.config.structure


def build_phi(config: ExperimentConfig, seed: int) -> EntanglementMap | None:
    if config.is_vision:
        return None
    return build_entanglement(config.structure, tuple(config.phi_dims[1:]),
                              seed=derive_seeds(seed)["phi"],
                              confounders=config.confounder_structure)


def build_bank(config: ExperimentConfig, seed: int) -> TaskBank:
    return TaskBank.sample(config.structure, config.n_tasks, make_rng(derive_seeds(seed)["tasks"]))


def generate_data(config: ExperimentConfig, seed: int) -> RunData:
    """Datasets and task bank for one seed.

    Vision runs train on the training part of the sprite split and test on
    the held-out remainder; synthetic runs draw i.i.d. latents.
    """
    seeds = derive_seeds(seed)
    bank = build_bank(config, seed)
    if config.is_vision:
        cats, x = render_corpus()
        tr, val, te = make_vision_split(cats)
        held = np.sort(np.concatenate([val, te]))
        structure = config.structure
        return RunData(config, seed, seeds, bank,
                       Dataset(structure, cats[tr], x[tr]), Dataset(structure, cats[held], x[held]))
    phi = build_phi(config, seed)
    rng = make_rng(seeds["data"])
    conf = config.confounder_structure
    train_ds = make_dataset(config.structure, phi, config.train_size, rng, conf)
    test_ds = make_dataset(config.structure, phi, config.test_size, rng, conf)
    return RunData(config, seed, seeds, bank, train_ds, test_ds, phi)


def build_model(config: ExperimentConfig, seed: int) -> WtaPredictor:
    dims = config.encoder_dims
    heads = WtaHeadConfig(config.head_sizes, tau=config.tau, tau_decay=config.tau_decay)
    return WtaPredictor(PredictorConfig(dims[0], tuple(dims[1:-1]), heads, config.n_tasks,
                                        seed=derive_seeds(seed)["init"]))


def train_run(data: RunData, model: WtaPredictor | None = None,
              callback=None) -> tuple[WtaPredictor, RunRecord]:
    config = data.config
    model = model if model is not None else build_model(config, data.seed)
    targets = label_dataset(data.bank, data.train.z)
    test_targets = label_dataset(data.bank, data.test.z)
    record = train(model, data.train.x, targets, config.train.to_train_config(data.seeds["shuffle"]),
                   data.test.x, test_targets, callback=callback)
    record.seed = data.seed
    return model, record


@dataclass
class EvalResult:
    test_mae: float
    solved: bool
    verdict: SymbolicVerdict
    table: ActivationTable
    permutation: StructuredPermutation | None = None
    readout_error: float | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "test_mae": self.test_mae,
            "solved": self.solved,
            "verdict": self.verdict.to_dict(),
            "structured_permutation": None,
            "readout_error": self.readout_error,
            "notes": self.notes,
        }
        if self.permutation is not None:
            out["structured_permutation"] = {
                "factor_map": list(self.permutation.factor_map),
                "within": [list(w) for w in self.permutation.within],
            }
        return out


def evaluation_inputs(data: RunData) -> tuple[np.ndarray, np.ndarray, bool]:
    """(z, x, exact): every latent vector when that is possible, else the test set.

    With confounders the code depends on more than ``z``, so only the
    empirical test-set check applies.
    """
    config = data.config
    structure = data.structure
    if config.is_vision:
        cats, x = render_corpus()
        return structure.onehot(cats).reshape(len(cats), -1), x, True
    if config.confounders is None and structure.p <= ENUMERATION_CAP:
        cats = enumerate_categories(structure)
        z = structure.onehot(cats).reshape(len(cats), -1)
        return z, data.phi(z), True
    return data.test.z, data.test.x, False


def evaluate(data: RunData, model: WtaPredictor) -> EvalResult:
    config = data.config
    model.eval()
    test_targets = label_dataset(data.bank, data.test.z)
    test_mae = mae(model.predict(data.test.x), test_targets)
    z, x, exact = evaluation_inputs(data)
    z_hat = model.encode(x)
    verdict = check_symbolic(z, z_hat, data.structure, config.head_sizes, exact=exact)
    result = EvalResult(test_mae, test_mae < config.mae_threshold, verdict,
                        build_activation_table(z, z_hat))
    if exact and tuple(config.head_sizes) == tuple(config.counts):
        result.permutation = recover_structured_permutation(z, z_hat, data.structure)
        result.readout_error = readout_consistency(data.bank.W_folded, model.W_out, z, z_hat)
    elif exact:
        result.notes.append("head sizes differ from the latent structure; "
                            "no structured permutation is defined")
    else:
        result.notes.append("verdict is empirical (test set), not exhaustive")
    return result


# -- run directories --------------------------------------------------------

DATA_FILES = {"train": "train.wtad", "test": "test.wtad"}
CORPUS_FILE = "corpus.wtad"
TASKS_FILE = "tasks.json"


def save_run_data(data: RunData, directory) -> list[str]:
    """Write datasets and the task bank; returns the file names written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if data.config.is_vision:
        cats, x = render_corpus()
        save_dataset(Dataset(data.structure, cats, x), directory / CORPUS_FILE)
        written = [CORPUS_FILE]
    else:
        save_dataset(data.train, directory / DATA_FILES["train"])
        save_dataset(data.test, directory / DATA_FILES["test"])
        written = list(DATA_FILES.values())
    data.bank.save(directory / TASKS_FILE)
    return written + [TASKS_FILE]


def load_run_data(directory, config: ExperimentConfig, seed: int) -> RunData:
    directory = Path(directory)
    needed = [CORPUS_FILE] if config.is_vision else list(DATA_FILES.values())
    missing = [n for n in needed + [TASKS_FILE] if not (directory / n).is_file()]
    if missing:
        raise FileNotFoundError(f"{directory}: missing {', '.join(missing)} (run gen-data first)")
    bank = TaskBank.load(directory / TASKS_FILE)
    if bank.structure != config.structure or bank.n != config.n_tasks:
        raise ValueError("task bank on disk does not match the config")
    if config.is_vision:
        corpus = load_dataset(directory / CORPUS_FILE)
        tr, val, te = make_vision_split(corpus.categories)
        held = np.sort(np.concatenate([val, te]))
        return RunData(config, seed, derive_seeds(seed), bank, corpus.subset(tr), corpus.subset(held))
    train_ds = load_dataset(directory / DATA_FILES["train"])
    test_ds = load_dataset(directory / DATA_FILES["test"])
    if train_ds.structure != config.structure:
        raise ValueError("dataset on disk does not match the config")
    return RunData(config, seed, derive_seeds(seed), bank, train_ds, test_ds, build_phi(config, seed))
