"""Categorical latent structures, one-hot codes and the frozen entanglement map."""
from __future__ import annotations

import csv
import hashlib
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nn import LeakyReLU, Linear, make_rng

ENUMERATION_CAP = 10**6


@dataclass(frozen=True)
class LatentStructure:
    """Category counts of the latent factors, e.g. ``LatentStructure((5, 8, 5, 3, 9))``."""

    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if len(self.counts) < 1:
            raise ValueError("need at least one latent factor")
        if any(c < 2 for c in self.counts):
            raise ValueError(f"every factor needs >= 2 categories, got {self.counts}")

    @property
    def m(self) -> int:
        return len(self.counts)

    @property
    def l(self) -> int:
        return sum(self.counts)

    @property
    def p(self) -> int:
        return int(np.prod(self.counts, dtype=object))

    @property
    def offsets(self) -> tuple[int, ...]:
        """Start column of every block, plus the total length at the end."""
        return tuple(itertools.accumulate(self.counts, initial=0))

    def blocks(self) -> list[slice]:
        o = self.offsets
        return [slice(o[k], o[k + 1]) for k in range(self.m)]

    def factor_of(self, column: int) -> int:
        return int(np.searchsorted(self.offsets, column, side="right") - 1)

    def onehot(self, categories) -> np.ndarray:
        """Concatenated one-hot encoding for one index vector or a batch of them."""
        cats = np.atleast_2d(np.asarray(categories, dtype=np.int64))
        if cats.shape[1] != self.m:
            raise ValueError(f"expected {self.m} category indices per row")
        if np.any(cats < 0) or np.any(cats >= np.asarray(self.counts)):
            raise ValueError("category index out of range")
        z = np.zeros((cats.shape[0], self.l))
        cols = cats + np.asarray(self.offsets[:-1])
        z[np.arange(cats.shape[0])[:, None], cols] = 1.0
        return z[0] if np.ndim(categories) == 1 else z

    def categories(self, z: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`onehot` (argmax per block)."""
        z2 = np.atleast_2d(z)
        out = np.stack([z2[:, b].argmax(axis=1) for b in self.blocks()], axis=1)
        return out[0] if np.ndim(z) == 1 else out

    def is_valid(self, z: np.ndarray) -> bool:
        z = np.atleast_2d(z)
        if z.shape[1] != self.l or not np.all((z == 0) | (z == 1)):
            return False
        return all(np.all(z[:, b].sum(axis=1) == 1) for b in self.blocks())


@dataclass
class LatentSample:
    categories: np.ndarray
    onehot: np.ndarray


def enumerate_categories(structure: LatentStructure, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """All category tuples in lexicographic order (first factor varies slowest)."""
    if structure.p > cap:
        raise ValueError(f"p = {structure.p} exceeds the enumeration cap {cap}")
    grids = np.meshgrid(*[np.arange(c) for c in structure.counts], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def enumerate_code_matrix(structure: LatentStructure, cap: int = ENUMERATION_CAP) -> np.ndarray:
    """The p x l code matrix holding every latent vector once, lexicographically."""
    return structure.onehot(enumerate_categories(structure, cap)).reshape(structure.p, structure.l)


def sample_latent(structure: LatentStructure, rng: np.random.Generator,
                  count: int | None = None):
    """Uniform independent categories. Returns a LatentSample, or arrays if ``count`` is given."""
    n = 1 if count is None else count
    cats = np.stack([rng.integers(0, c, size=n) for c in structure.counts], axis=1)
    z = structure.onehot(cats).reshape(n, structure.l)
    if count is None:
        return LatentSample(cats[0], z[0])
    return cats, z


class EntanglementMap:
    """Frozen random MLP from one-hot latents to observations.

    Leaky ReLU between layers, nothing after the last one. Weights use the
    same uniform fan-in initialisation as trainable layers.
    """

    def __init__(self, dims: tuple[int, ...], seed: int, slope: float = 0.01) -> None:
        if len(dims) < 2:
            raise ValueError("need at least input and output dimension")
        self.dims = tuple(int(d) for d in dims)
        self.seed = int(seed)
        self.slope = slope
        rng = make_rng(seed)
        layers = [Linear(a, b, bias=True, rng=rng) for a, b in zip(self.dims[:-1], self.dims[1:])]
        self.weights = tuple(lin.params["W"] for lin in layers)
        self.biases = tuple(lin.params["b"] for lin in layers)
        for arr in self.weights + self.biases:
            arr.setflags(write=False)

    @property
    def d_in(self) -> int:
        return self.dims[0]

    @property
    def d_out(self) -> int:
        return self.dims[-1]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return entangle(self, z)


def build_entanglement(structure: LatentStructure, hidden: tuple[int, ...], seed: int,
                       confounders: LatentStructure | None = None,
                       slope: float = 0.01, check_injective: bool = True,
                       max_redraws: int = 20) -> EntanglementMap:
    """Frozen map with input width l (+ confounder width) and the given layer widths.

    When the joint latent space is enumerable the map is checked for pairwise
    distinct outputs and redrawn with the next seed if that fails.
    """
    full = joint_structure(structure, confounders)
    dims = (full.l, *hidden)
    for attempt in range(max_redraws):
        phi = EntanglementMap(dims, seed + attempt, slope)
        if not check_injective or full.p > 6000 or min_pairwise_distance(
                phi(enumerate_code_matrix(full))) > 1e-6:
            return phi
    raise RuntimeError("could not draw an injective entanglement map")


def joint_structure(structure: LatentStructure,
                    confounders: LatentStructure | None) -> LatentStructure:
    if confounders is None:
        return structure
    return LatentStructure(structure.counts + confounders.counts)


def entangle(phi: EntanglementMap, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    h = np.atleast_2d(z)
    if h.shape[1] != phi.d_in:
        raise ValueError(f"latent width {h.shape[1]} != map input {phi.d_in}")
    last = len(phi.weights) - 1
    for i, (W, b) in enumerate(zip(phi.weights, phi.biases)):
        h = h @ W.T + b
        if i < last:
            h = np.where(h >= 0, h, phi.slope * h)
    return h[0] if single else h


def min_pairwise_distance(x: np.ndarray) -> float:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * x @ x.T
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(max(d2.min(), 0.0)))


def has_collisions(x: np.ndarray) -> bool:
    """Hash-based duplicate check for sets too large for pairwise distances."""
    seen = set()
    for row in np.ascontiguousarray(x):
        h = hashlib.blake2b(row.tobytes(), digest_size=16).digest()
        if h in seen:
            return True
        seen.add(h)
    return False


@dataclass
class Dataset:
    """Task-visible latents ``z`` (one-hot), their category indices and observations ``x``."""

    structure: LatentStructure
    categories: np.ndarray
    x: np.ndarray
    confounder_categories: np.ndarray | None = field(default=None)

    @property
    def z(self) -> np.ndarray:
        return self.structure.onehot(self.categories).reshape(len(self), self.structure.l)

    def __len__(self) -> int:
        return self.x.shape[0]

    def subset(self, idx) -> "Dataset":
        conf = None if self.confounder_categories is None else self.confounder_categories[idx]
        return Dataset(self.structure, self.categories[idx], self.x[idx], conf)


def make_dataset(structure: LatentStructure, phi: EntanglementMap, count: int,
                 rng: np.random.Generator,
                 confounders: LatentStructure | None = None) -> Dataset:
    cats, z = sample_latent(structure, rng, count)
    conf_cats = None
    full_z = z
    if confounders is not None:
        conf_cats, cz = sample_latent(confounders, rng, count)
        full_z = np.concatenate([z, cz], axis=1)
    return Dataset(structure, cats, entangle(phi, full_z), conf_cats)


def dataset_from_categories(structure: LatentStructure, phi: EntanglementMap,
                            categories: np.ndarray) -> Dataset:
    cats = np.asarray(categories, dtype=np.int64)
    return Dataset(structure, cats, entangle(phi, structure.onehot(cats).reshape(len(cats), -1)))


# -- columnar binary format -------------------------------------------------
# header: magic, version, m, counts[m], d, count; then float64 x (row-major)
# and uint16 categories (row-major, count x m). Little endian throughout.

MAGIC = b"WTAD"
FORMAT_VERSION = 1


def save_dataset(ds: Dataset, path: str | Path) -> None:
    m = ds.structure.m
    n, d = ds.x.shape
    header = MAGIC + struct.pack(f"<HI{m}III", FORMAT_VERSION, m, *ds.structure.counts, d, n)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ds.x, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ds.categories, dtype="<u2").tobytes())


def load_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    version, m = struct.unpack_from("<HI", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pos = 10
    counts = struct.unpack_from(f"<{m}I", raw, pos)
    pos += 4 * m
    d, n = struct.unpack_from("<II", raw, pos)
    pos += 8
    x = np.frombuffer(raw, dtype="<f8", count=n * d, offset=pos).reshape(n, d).astype(np.float64)
    pos += 8 * n * d
    cats = np.frombuffer(raw, dtype="<u2", count=n * m, offset=pos).reshape(n, m).astype(np.int64)
    return Dataset(LatentStructure(counts), cats, x)


def export_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"z{k}" for k in range(ds.structure.m)] + [f"x{j}" for j in range(ds.x.shape[1])])
        for cats, row in zip(ds.categories, ds.x):
            w.writerow([int(c) for c in cats] + [repr(float(v)) for v in row])
