"""Structured permutations of code matrices and exhaustive checks of the linear-recoding theorem.

A code matrix ``C`` lists every valid concatenated one-hot vector. If a second
full code matrix ``D`` (rows in some bijective correspondence with ``C``)
satisfies ``D = C R`` for a real ``R``, the columns of ``D`` must be a
structured permutation of the columns of ``C``: whole equal-sized factor
blocks are permuted, and categories are permuted inside each block.
"""
from __future__ import annotations

import itertools
import math
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .latents import LatentStructure, enumerate_code_matrix

EXHAUSTIVE_LIMIT = 500_000
REALIZABLE_TOL = 1e-9


@dataclass(frozen=True)
class StructuredPermutation:
    """``z_hat = z @ R``: block ``i`` of ``z_hat`` is block ``factor_map[i]`` of ``z``,
    with ``z_hat[block i][j] = z[block factor_map[i]][within[i][j]]``."""

    structure: LatentStructure
    factor_map: tuple[int, ...]
    within: tuple[tuple[int, ...], ...]

    @property
    def matrix(self) -> np.ndarray:
        o = self.structure.offsets
        R = np.zeros((self.structure.l, self.structure.l))
        for i, (src, perm) in enumerate(zip(self.factor_map, self.within)):
            for j, k in enumerate(perm):
                R[o[src] + k, o[i] + j] = 1.0
        return R


def _is_permutation_matrix(P: np.ndarray) -> bool:
    return (P.shape[0] == P.shape[1] and np.all((P == 0) | (P == 1))
            and np.all(P.sum(axis=0) == 1) and np.all(P.sum(axis=1) == 1))


def is_structured_permutation(R: np.ndarray, structure: LatentStructure,
                              tol: float = 1e-9) -> tuple[bool, StructuredPermutation | None]:
    R = np.asarray(R, dtype=np.float64)
    l = structure.l
    if R.shape != (l, l):
        raise ValueError(f"expected an {l}x{l} matrix, got {R.shape}")
    P = np.rint(R)
    if np.max(np.abs(R - P)) > tol or not _is_permutation_matrix(P):
        return False, None
    blocks = structure.blocks()
    factor_map, within = [], []
    for i, cb in enumerate(blocks):
        rows = np.flatnonzero(P[:, cb].any(axis=1))
        src = structure.factor_of(int(rows[0]))
        if structure.counts[src] != structure.counts[i]:
            return False, None
        sub = P[blocks[src], cb]
        if not _is_permutation_matrix(sub):
            return False, None
        factor_map.append(src)
        within.append(tuple(int(k) for k in sub.argmax(axis=0)))
    if sorted(factor_map) != list(range(structure.m)):
        return False, None
    return True, StructuredPermutation(structure, tuple(factor_map), tuple(within))


def enumerate_structured_permutations(structure: LatentStructure):
    """Every structured permutation of ``structure`` (generator)."""
    m = structure.m
    counts = structure.counts
    for s in itertools.permutations(range(m)):
        if any(counts[s[i]] != counts[i] for i in range(m)):
            continue
        for within in itertools.product(*[itertools.permutations(range(c)) for c in counts]):
            yield StructuredPermutation(structure, tuple(s), tuple(within))


def count_structured_permutations(structure: LatentStructure) -> int:
    """(ways to permute equal-sized blocks) x product of within-block orderings."""
    n = 1
    for size, mult in Counter(structure.counts).items():
        n *= math.factorial(mult) * math.factorial(size) ** mult
    return n


def column_sum_property(C: np.ndarray, structure: LatentStructure) -> bool:
    """Each column of a full code matrix has exactly p / l_i ones."""
    sums = C.sum(axis=0)
    expected = np.concatenate([np.full(c, structure.p // c) for c in structure.counts])
    return C.shape == (structure.p, structure.l) and bool(np.all(sums == expected))


@dataclass
class Lemma1Decomposition:
    Q: np.ndarray
    b: np.ndarray


class TwoValueViolation(ArithmeticError):
    pass


def verify_lemma1(C: np.ndarray, R: np.ndarray, structure: LatentStructure,
                  tol: float = 1e-9) -> Lemma1Decomposition:
    """Rewrite a binary ``D = C R`` as ``C Q + 1 b^T`` with binary ``Q`` and integer ``b``.

    Inside every block, each column of ``R`` takes at most two values that
    differ by exactly one; the smaller is that block's base. ``Q`` marks the
    entries above their base and ``b`` collects the summed bases. Blocks of
    ``Q`` that came out all ones are cleared and folded into ``b``.
    """
    D = C @ R
    if np.max(np.abs(D - np.rint(D))) > tol or not np.all(np.isin(np.rint(D), (0.0, 1.0))):
        raise ValueError("C R is not binary")
    l = structure.l
    Q = np.zeros((l, l))
    b_real = np.zeros(l)
    for col in range(l):
        for blk in structure.blocks():
            r = R[blk, col]
            base = r.min()
            q = r - base
            q_int = np.rint(q)
            if np.max(np.abs(q - q_int)) > 1e-7 or q_int.max() > 1:
                raise TwoValueViolation(f"column {col}: block values {r} are not two values one apart")
            if np.all(q_int == 1):
                q_int[:] = 0
                base += 1.0
            Q[blk, col] = q_int
            b_real[col] += base
    b = np.rint(b_real)
    if np.max(np.abs(b - b_real)) > 1e-7:
        raise TwoValueViolation(f"offsets {b_real} are not integers")
    if not np.array_equal(C @ Q + b[None, :], np.rint(D)):
        raise TwoValueViolation("reconstruction C Q + 1 b^T != D")
    return Lemma1Decomposition(Q, b.astype(np.int64))


def least_squares(C: np.ndarray, D: np.ndarray, pinv: np.ndarray | None = None):
    """Minimum-norm ``R`` for ``min ||C R - D||`` and the max-abs residual.

    ``D`` may be a stack of matrices (leading batch axis).
    """
    if pinv is None:
        pinv = np.linalg.pinv(C)
    R = pinv @ D
    resid = np.abs(C @ R - D).reshape(*D.shape[:-2], -1).max(axis=-1)
    return R, resid


@dataclass
class TheoremReport:
    counts: tuple[int, ...]
    mode: str
    bijections_tested: int = 0
    realizable: int = 0
    structured: int = 0
    violations: int = 0
    expected_structured: int = 0
    conjecture: bool = False
    runtime_s: float = 0.0
    counterexamples: list = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "instance": {"counts": list(self.counts)},
            "mode": self.mode,
            "label": "conjecture check" if self.conjecture else "theorem check",
            "bijections_tested": self.bijections_tested,
            "realizable": self.realizable,
            "structured": self.structured,
            "expected_structured": self.expected_structured,
            "violations": self.violations,
            "holds": self.holds,
            "runtime_s": self.runtime_s,
            "counterexamples": self.counterexamples,
        }


def _row_bijections(p: int, mode: str, trials: int, rng, C, structure):
    if mode == "exhaustive":
        yield from itertools.permutations(range(p))
        return
    # Random bijections are almost never realizable, so the realizable ones
    # (row orders induced by structured permutations) are always included.
    row_index = {r.tobytes(): i for i, r in enumerate(C)}
    for sp in enumerate_structured_permutations(structure):
        D = C @ sp.matrix
        yield tuple(row_index[r.tobytes()] for r in D)
    for _ in range(trials):
        yield tuple(rng.permutation(p))


def verify_structure(structure: LatentStructure, mode: str = "exhaustive", trials: int = 10_000,
                     rng: np.random.Generator | None = None, chunk: int = 5040) -> TheoremReport:
    """Test every (or a sample of) row bijection of the code matrix.

    A bijection whose permuted code matrix is an exact linear image of ``C``
    must canonicalise (via :func:`verify_lemma1`) to ``b = 0`` and a
    structured permutation ``Q``; anything else is counted as a violation.
    """
    if mode not in ("exhaustive", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    C = enumerate_code_matrix(structure)
    p = structure.p
    if mode == "exhaustive" and math.factorial(p) > EXHAUSTIVE_LIMIT:
        raise ValueError(f"{p}! bijections is too many for exhaustive mode")
    if mode == "sampled" and rng is None:
        rng = np.random.Generator(np.random.Philox(0))
    report = TheoremReport(structure.counts, mode,
                           expected_structured=count_structured_permutations(structure),
                           conjecture=len(set(structure.counts)) > 1)
    start = time.perf_counter()
    pinv = np.linalg.pinv(C)
    it = _row_bijections(p, mode, trials, rng, C, structure)
    while True:
        batch = list(itertools.islice(it, chunk))
        if not batch:
            break
        perms = np.asarray(batch)
        D = C[perms]
        R, resid = least_squares(C, D, pinv)
        report.bijections_tested += len(batch)
        for k in np.flatnonzero(resid < REALIZABLE_TOL):
            report.realizable += 1
            ok = False
            try:
                dec = verify_lemma1(C, R[k], structure)
                ok = (not dec.b.any() and np.all(dec.Q.sum(axis=0) == 1)
                      and is_structured_permutation(dec.Q, structure)[0])
            except (TwoValueViolation, ValueError) as exc:
                dec = exc
            if ok:
                report.structured += 1
            else:
                report.violations += 1
                if len(report.counterexamples) < 5:
                    report.counterexamples.append({"rows": perms[k].tolist(), "detail": repr(dec)})
    report.runtime_s = time.perf_counter() - start
    return report


def verify_theorem1(m: int, l_c: int, mode: str = "exhaustive", trials: int = 10_000,
                    rng: np.random.Generator | None = None) -> TheoremReport:
    """Uniform-size instance: ``m`` factors with ``l_c`` categories each."""
    if m < 1 or l_c < 2:
        raise ValueError("need m >= 1 and l_c >= 2")
    return verify_structure(LatentStructure((l_c,) * m), mode, trials, rng)
