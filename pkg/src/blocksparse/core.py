"""Block partitions, block-sparse signals, Gaussian ensembles and null spaces."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg


class DegenerateMatrixError(ValueError):
    """A matrix that must have full rank does not."""


class InvalidSparsityError(ValueError):
    pass


class InvalidSizeError(ValueError):
    pass


@dataclass(frozen=True)
class BlockPartition:
    """Split of a length ``n * d`` vector into ``n`` consecutive blocks of ``d``."""

    n: int
    d: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.d) != self.d:
            raise ValueError("n and d must be integers")
        if self.n < 1 or self.d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")

    @property
    def N(self) -> int:
        return self.n * self.d

    def block_slice(self, i: int) -> slice:
        """Slice of block ``i`` (0-based)."""
        if not 0 <= i < self.n:
            raise IndexError(i)
        return slice(i * self.d, (i + 1) * self.d)

    def columns(self, blocks) -> np.ndarray:
        """Flat column indices covered by the given block indices."""
        blocks = np.asarray(blocks, dtype=np.intp)
        return (blocks[:, None] * self.d + np.arange(self.d)).ravel()

    def reshape(self, values: np.ndarray) -> np.ndarray:
        """View ``values`` (length N, or N x T) as ``(n, d)`` or ``(n, d, T)``."""
        values = np.asarray(values)
        return values.reshape((self.n, self.d) + values.shape[1:])


@dataclass(frozen=True)
class BlockSignal:
    values: np.ndarray
    partition: BlockPartition

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.shape[0] != self.partition.N:
            raise ValueError(
                f"values must have length {self.partition.N}, got shape {v.shape}"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def blocks(self) -> np.ndarray:
        return self.partition.reshape(self.values)

    def norms(self) -> np.ndarray:
        return block_norms(self)

    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.norms() > 0))

    def block_sparsity(self) -> int:
        return int(np.count_nonzero(self.norms() > 0))

    def l21_norm(self) -> float:
        return float(self.norms().sum())


@dataclass(frozen=True)
class RandomSeed:
    """Root seed plus a stream index; substreams are keyed by extra indices.

    Streams come from :class:`numpy.random.SeedSequence` spawn keys, so a
    given ``(seed, stream_index, *keys)`` always yields the same draws no
    matter where or in which order it is evaluated.
    """

    seed: int
    stream_index: int = 0
    _path: tuple[int, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.stream_index < 0:
            raise ValueError("stream_index must be nonnegative")

    def child(self, *keys: int) -> "RandomSeed":
        return RandomSeed(self.seed, self.stream_index, self._path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_index,) + self._path)
        return np.random.Generator(np.random.PCG64(ss))


def as_seed(seed) -> RandomSeed:
    if isinstance(seed, RandomSeed):
        return seed
    return RandomSeed(int(seed))


def sample_gaussian_matrix(rows: int, cols: int, seed) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. N(0, 1) draws, filled row-major.

    The entry stream depends only on the seed, so ``(2, 3)`` and ``(3, 2)``
    with the same seed hold the same six numbers.
    """
    if rows < 1 or cols < 1:
        raise InvalidSizeError(f"dimensions must be positive, got {rows}x{cols}")
    if rows * cols > sys.maxsize // 8:
        raise InvalidSizeError(f"{rows}x{cols} matrix is too large")
    rng = as_seed(seed).generator()
    return rng.standard_normal(rows * cols).reshape(rows, cols)


def sample_block_sparse_signal(partition: BlockPartition, k: int, seed) -> BlockSignal:
    """Signal with ``k`` uniformly chosen nonzero blocks of i.i.d. N(0, 1) entries."""
    if not 0 <= k <= partition.n:
        raise InvalidSparsityError(f"need 0 <= k <= n={partition.n}, got k={k}")
    rng = as_seed(seed).generator()
    support = np.sort(rng.choice(partition.n, size=k, replace=False))
    values = np.zeros(partition.N)
    values[partition.columns(support)] = rng.standard_normal(k * partition.d)
    return BlockSignal(values, partition)


def block_norms(x) -> np.ndarray:
    """Euclidean norm of every block of a :class:`BlockSignal`."""
    return np.linalg.norm(x.blocks, axis=1)


def measure(A: np.ndarray, x: BlockSignal) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[1] != x.values.shape[0]:
        raise ValueError(f"A has shape {A.shape}, signal has length {x.values.shape[0]}")
    return A @ x.values


def null_space_basis(A: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of ``ker A`` from a complete QR factorisation of ``A.T``.

    Raises :class:`DegenerateMatrixError` when ``A`` lacks full row rank.
    """
    A = np.asarray(A, dtype=float)
    rows, cols = A.shape
    if rows > cols:
        raise DegenerateMatrixError(f"{rows}x{cols} matrix cannot have full row rank")
    Q, R = scipy.linalg.qr(A.T, mode="full")
    diag = np.abs(np.diag(R))
    scale = max(np.abs(A).max(), 1e-300)
    if diag.size and diag.min() <= rank_tol * scale * max(rows, cols):
        raise DegenerateMatrixError("matrix is rank deficient")
    return np.ascontiguousarray(Q[:, rows:])


def write_csv(path, array) -> None:
    """Headerless CSV with 17 significant digits; 1-D arrays become one column."""
    a = np.asarray(array, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    with open(Path(path), "w", newline="") as fh:
        for row in a:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_csv(path, vector: bool = False) -> np.ndarray:
    rows = []
    with open(Path(path)) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    if not rows:
        return np.zeros((0,)) if vector else np.zeros((0, 0))
    a = np.array(rows, dtype=float)
    if vector:
        if a.shape[1] != 1:
            raise ValueError(f"{path}: expected a single column, got {a.shape[1]}")
        return a[:, 0]
    return a
