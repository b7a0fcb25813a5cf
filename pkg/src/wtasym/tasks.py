"""Linear binary tasks over categorical latents and their exact posteriors."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .latents import LatentStructure
from .nn import sigmoid

RANK_TOL = 1e-8
MIN_COMPONENT = 1e-12


@dataclass(frozen=True)
class TaskSpec:
    """Class-conditional categorical parameters ``p`` (A=1) and ``q`` (A=0), and P(A=1)."""

    p: np.ndarray
    q: np.ndarray
    prior: float

    def validate(self, structure: LatentStructure, tol: float = 1e-9) -> None:
        if not 0.0 < self.prior < 1.0:
            raise ValueError("prior must lie in (0, 1)")
        for vec in (self.p, self.q):
            if vec.shape != (structure.l,) or np.any(vec <= 0):
                raise ValueError("task parameters must be positive with length l")
            for b in structure.blocks():
                if abs(vec[b].sum() - 1.0) > tol:
                    raise ValueError("every block of p and q must sum to 1")


def _dirichlet_ones(k: int, rng: np.random.Generator) -> np.ndarray:
    # Normalised unit-rate exponentials = Dirichlet(1, ..., 1).
    while True:
        e = rng.standard_exponential(k)
        v = e / e.sum()
        if v.min() >= MIN_COMPONENT:
            return v


def sample_task(structure: LatentStructure, rng: np.random.Generator) -> TaskSpec:
    p = np.concatenate([_dirichlet_ones(c, rng) for c in structure.counts])
    q = np.concatenate([_dirichlet_ones(c, rng) for c in structure.counts])
    prior = 0.0
    while not MIN_COMPONENT <= prior <= 1.0 - MIN_COMPONENT:
        prior = float(rng.random())
    return TaskSpec(p, q, prior)


def fold_bias(W_unf: np.ndarray, b: np.ndarray, m: int) -> np.ndarray:
    """Absorb the log prior odds into every weight of the task's row.

    Exact for valid latents because each of them has exactly ``m`` ones.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (W_unf.shape[0],):
        raise ValueError("bias length must equal the number of rows of W")
    return W_unf + (b / m)[:, None]


def matrix_rank(A: np.ndarray, tol: float = RANK_TOL) -> int:
    """Rank by Gaussian elimination with complete pivoting."""
    M = np.array(A, dtype=np.float64)
    rows, cols = M.shape
    rank = 0
    for _ in range(min(rows, cols)):
        sub = np.abs(M[rank:, rank:])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        if sub[i, j] <= tol:
            break
        i += rank
        j += rank
        M[[rank, i]] = M[[i, rank]]
        M[:, [rank, j]] = M[:, [j, rank]]
        M[rank + 1:] -= np.outer(M[rank + 1:, rank] / M[rank, rank], M[rank])
        rank += 1
    return rank


class TaskBank:
    """A fixed set of tasks with their unfolded and folded weight matrices."""

    def __init__(self, structure: LatentStructure, tasks: list[TaskSpec]) -> None:
        for t in tasks:
            t.validate(structure)
        self.structure = structure
        self.tasks = list(tasks)
        P = np.stack([t.p for t in tasks])
        Q = np.stack([t.q for t in tasks])
        priors = np.array([t.prior for t in tasks])
        self.W_unf = np.log(P) - np.log(Q)
        self.b = np.log(priors) - np.log1p(-priors)
        self.W_folded = fold_bias(self.W_unf, self.b, structure.m)
        self.rank = matrix_rank(self.W_folded)

    @property
    def n(self) -> int:
        return len(self.tasks)

    @property
    def full_rank(self) -> bool:
        return self.rank == self.structure.l

    @classmethod
    def sample(cls, structure: LatentStructure, n: int, rng: np.random.Generator) -> "TaskBank":
        return cls(structure, [sample_task(structure, rng) for _ in range(n)])

    def logits(self, z: np.ndarray) -> np.ndarray:
        return np.atleast_2d(z) @ self.W_folded.T

    def to_json(self) -> str:
        return json.dumps({
            "format": "wtasym.taskbank",
            "version": 1,
            "counts": list(self.structure.counts),
            "tasks": [{"p": t.p.tolist(), "q": t.q.tolist(), "prior": t.prior} for t in self.tasks],
            "W_unf": self.W_unf.tolist(),
            "b": self.b.tolist(),
            "W_folded": self.W_folded.tolist(),
            "rank": self.rank,
        }, indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "TaskBank":
        data = json.loads(Path(path).read_text())
        if data.get("format") != "wtasym.taskbank" or data.get("version") != 1:
            raise ValueError(f"{path}: not a version-1 task bank")
        structure = LatentStructure(tuple(data["counts"]))
        tasks = [TaskSpec(np.array(t["p"]), np.array(t["q"]), float(t["prior"]))
                 for t in data["tasks"]]
        return cls(structure, tasks)


def posterior(bank: TaskBank, z: np.ndarray) -> np.ndarray:
    """P(A_i = 1 | z) for every task, via the folded linear form."""
    out = sigmoid(bank.logits(z))
    return out[0] if np.ndim(z) == 1 else out


def bayes_oracle(task: TaskSpec, z: np.ndarray, structure: LatentStructure) -> float:
    """Posterior straight from Bayes' rule with plain likelihood products, no logs."""
    z = np.asarray(z)
    like_p = 1.0
    like_q = 1.0
    for blk in structure.blocks():
        k = int(np.argmax(z[blk]))
        like_p *= task.p[blk][k]
        like_q *= task.q[blk][k]
    num = task.prior * like_p
    return float(num / (num + (1.0 - task.prior) * like_q))


def label_dataset(bank: TaskBank, z: np.ndarray) -> np.ndarray:
    return sigmoid(np.atleast_2d(z) @ bank.W_folded.T)
