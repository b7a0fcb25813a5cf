"""Is a binary code a symbolic representation of the latent categories?

A latent category ``i`` is encoded symbolically if some set of code units
stays silent whenever the category is absent, and at least one of them fires
whenever it is present.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .latents import LatentStructure
from .theory import StructuredPermutation, is_structured_permutation, least_squares


@dataclass
class ActivationTable:
    """Co-activation counts between latent categories (rows) and code units (columns)."""

    together: np.ndarray   # (l, l'): z_i = 1 and zhat_j = 1
    absent_on: np.ndarray  # (l, l'): z_i = 0 and zhat_j = 1
    present: np.ndarray    # (l,): samples with z_i = 1
    total: int

    @property
    def conditional(self) -> np.ndarray:
        """P(zhat_j = 1 | z_i = 1); rows of unobserved categories are zero."""
        with np.errstate(invalid="ignore", divide="ignore"):
            p = self.together / self.present[:, None]
        return np.nan_to_num(p)

    def write_csv(self, path: str | Path) -> None:
        cond = self.conditional
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["category", "neuron", "probability"])
            for i in range(cond.shape[0]):
                for j in range(cond.shape[1]):
                    w.writerow([i, j, repr(float(cond[i, j]))])


def build_activation_table(z: np.ndarray, z_hat: np.ndarray) -> ActivationTable:
    z = np.asarray(z, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z.shape[0] == 0:
        raise ValueError("empty evaluation set")
    if z.shape[0] != z_hat.shape[0]:
        raise ValueError("latents and codes are not aligned")
    together = z.T @ z_hat
    absent_on = (1.0 - z).T @ z_hat
    return ActivationTable(together.astype(np.int64), absent_on.astype(np.int64),
                           z.sum(axis=0).astype(np.int64), int(z.shape[0]))


@dataclass
class CategoryVerdict:
    encoding: tuple[int, ...]
    symbolic: bool
    observed: bool = True


@dataclass
class SymbolicVerdict:
    categories: list[CategoryVerdict]
    structure: LatentStructure
    head_sizes: tuple[int, ...]
    exact: bool = True  # False when the evaluation set is a sample of Z
    localized: int = 0

    @property
    def symbolic_count(self) -> int:
        return sum(c.symbolic for c in self.categories)

    @property
    def overall(self) -> bool:
        return all(c.symbolic for c in self.categories)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "evaluation": "exact" if self.exact else "empirical",
            "symbolic_encoded_categories": self.symbolic_count,
            "categories_total": len(self.categories),
            "localized_factors": self.localized,
            "factors_total": self.structure.m,
            "categories": [
                {"index": i, "factor": self.structure.factor_of(i), "encoding": list(c.encoding),
                 "symbolic": c.symbolic, "status": "ok" if c.observed else "unobserved"}
                for i, c in enumerate(self.categories)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def check_symbolic(z: np.ndarray, z_hat: np.ndarray, structure: LatentStructure,
                   head_sizes: tuple[int, ...] | None = None, exact: bool = True) -> SymbolicVerdict:
    """Per-category verdicts using the largest admissible encoding set.

    Any valid set is a subset of the units that never fire without the
    category, and the "fires when present" condition only gets easier on a
    superset, so testing that maximal set decides the question. Units that
    never fire at all are left out.
    """
    table = build_activation_table(z, z_hat)
    fired = np.asarray(z_hat).sum(axis=0) > 0
    cats = []
    for i in range(structure.l):
        if table.present[i] == 0:
            cats.append(CategoryVerdict((), False, observed=False))
            continue
        members = np.flatnonzero((table.absent_on[i] == 0) & fired)
        if members.size:
            rows = z[:, i] == 1
            covered = bool(np.all(z_hat[rows][:, members].any(axis=1)))
        else:
            covered = False
        cats.append(CategoryVerdict(tuple(int(j) for j in members), covered))
    heads = tuple(head_sizes) if head_sizes is not None else (np.asarray(z_hat).shape[1],)
    verdict = SymbolicVerdict(cats, structure, heads, exact)
    verdict.localized = localized_factors(verdict, heads)
    return verdict


def _head_of(unit: int, head_sizes: tuple[int, ...]) -> int:
    return int(np.searchsorted(np.cumsum(head_sizes), unit, side="right"))


def localized_factors(verdict: SymbolicVerdict, head_sizes: tuple[int, ...]) -> int:
    """Factors whose categories are all symbolic and all encoded inside one head."""
    count = 0
    for blk in verdict.structure.blocks():
        cats = verdict.categories[blk]
        if not all(c.symbolic and c.encoding for c in cats):
            continue
        heads = {_head_of(j, head_sizes) for c in cats for j in c.encoding}
        count += len(heads) == 1
    return count


def head_factor_assignment(table: ActivationTable, structure: LatentStructure,
                           head_sizes: tuple[int, ...]) -> list[int]:
    """Heuristic: each head goes to the factor whose categories move its units the most.

    The score is the per-unit spread of ``P(unit | category)`` across the
    factor's categories; a factor independent of the head scores zero.
    """
    cond = table.conditional
    out = []
    start = 0
    for size in head_sizes:
        scores = [np.ptp(cond[blk, start:start + size], axis=0).sum() for blk in structure.blocks()]
        out.append(int(np.argmax(scores)))
        start += size
    return out


def recover_structured_permutation(C: np.ndarray, C_hat: np.ndarray, structure: LatentStructure,
                                   tol: float = 1e-8) -> StructuredPermutation | None:
    """Solve ``C R = C_hat``; return ``R`` if it is a structured permutation.

    ``C`` is rank deficient (each block sums to one), so the minimum-norm
    least-squares ``R`` is not itself 0/1. When the residual vanishes the
    columns of ``C_hat`` are matched to the columns of ``C`` they equal,
    which pins down the unique 0/1 candidate.
    """
    C = np.asarray(C, dtype=np.float64)
    C_hat = np.asarray(C_hat, dtype=np.float64)
    if C_hat.shape != C.shape:
        return None
    _, resid = least_squares(C, C_hat)
    if resid > tol:
        return None
    R = np.zeros((C.shape[1], C.shape[1]))
    for j in range(C_hat.shape[1]):
        hits = np.flatnonzero(np.all(C == C_hat[:, [j]], axis=0))
        if hits.size != 1:
            return None
        R[hits[0], j] = 1.0
    ok, sp = is_structured_permutation(R, structure)
    return sp if ok else None


def decoding_matrix(W: np.ndarray, W_out: np.ndarray) -> np.ndarray:
    """``G`` with ``z = G^T z_hat`` when the task matrix ``W`` has full column rank."""
    return np.linalg.solve(W.T @ W, W.T @ W_out).T


def readout_consistency(W_folded: np.ndarray, W_out: np.ndarray, C: np.ndarray,
                        C_hat: np.ndarray) -> float:
    """max |W_out z_hat - W z| over all latents; zero for an optimal predictor."""
    return float(np.max(np.abs(C_hat @ W_out.T - C @ W_folded.T)))
