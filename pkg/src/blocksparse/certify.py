"""Checks of the block null-space condition for exact l2/l1 recovery.

For a nonzero ``w`` in the null space of ``A``, the condition asks that the
``k`` largest block norms of ``w`` sum to strictly less than the rest. The
*margin* of ``w`` is (sum of the other norms) - (sum of the ``k`` largest);
the condition holds for ``w`` iff the margin is positive. A margin of exactly
zero counts as a violation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (
    BlockPartition,
    BlockSignal,
    RandomSeed,
    as_seed,
    measure,
    sample_block_sparse_signal,
    sample_gaussian_matrix,
)
from .solver import (
    AffineProjector,
    DegenerateSupportError,
    SolverOptions,
    least_squares_on_support,
    refit_top_k,
    solve_l21,
)


class UnsupportedDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class SupportSet:
    indices: tuple[int, ...]
    n: int

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.indices))
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate block indices")
        if idx and (idx[0] < 0 or idx[-1] >= self.n):
            raise ValueError(f"block indices must lie in [0, {self.n})")
        object.__setattr__(self, "indices", idx)

    def complement(self) -> "SupportSet":
        s = set(self.indices)
        return SupportSet(tuple(i for i in range(self.n) if i not in s), self.n)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class CertificationReport:
    samples_tested: int
    violations: int
    worst_margin: float
    seed: RandomSeed

    def to_dict(self) -> dict:
        return {
            "samples_tested": self.samples_tested,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "seed": self.seed.seed,
        }


class SphereCheck(NamedTuple):
    holds: bool
    worst_margin: float
    lipschitz_gap: float

    @property
    def certified(self) -> bool:
        """True when the margin is positive everywhere on the sphere, not just on the grid."""
        return self.worst_margin > self.lipschitz_gap


def _margins(norms: np.ndarray, k: int) -> np.ndarray:
    # norms: (n, S) block norms for S vectors
    total = norms.sum(axis=0)
    if k == 0:
        return total
    top = -np.partition(-norms, k - 1, axis=0)[:k] if k < norms.shape[0] else norms
    top_sum = top.sum(axis=0)
    return (total - top_sum) - top_sum


def check_condition_on_vector(w: BlockSignal, k: int) -> tuple[bool, float]:
    """Return ``(holds, margin)`` for one null-space vector."""
    if not 0 <= k <= w.partition.n:
        raise ValueError(f"need 0 <= k <= n={w.partition.n}")
    norms = np.sort(w.norms())[::-1]
    margin = float(norms[k:].sum() - norms[:k].sum())
    return margin > 0, margin


def vector_margins(W: np.ndarray, partition: BlockPartition, k: int) -> np.ndarray:
    """Margins of every column of ``W`` (``N x S``)."""
    Wb = W.reshape(partition.n, partition.d, -1)
    norms = np.sqrt(np.einsum("idt,idt->it", Wb, Wb))
    return _margins(norms, k)


def _sphere_samples(rng: np.random.Generator, dim: int, count: int) -> np.ndarray:
    V = rng.standard_normal((dim, count))
    return V / np.linalg.norm(V, axis=0)


def monte_carlo_basis_check(Z, partition: BlockPartition, k: int, samples: int, seed,
                            chunk: int = 4096) -> CertificationReport:
    """Test the condition on ``Z v`` for ``samples`` uniform unit vectors ``v``."""
    seed = as_seed(seed)
    Z = np.asarray(Z, dtype=float)
    rng = seed.child(1).generator()
    violations = 0
    worst = math.inf
    done = 0
    while done < samples:
        c = min(chunk, samples - done)
        V = _sphere_samples(rng, Z.shape[1], c)
        marg = vector_margins(Z @ V, partition, k)
        violations += int(np.count_nonzero(marg <= 0))
        worst = min(worst, float(marg.min()))
        done += c
    return CertificationReport(samples, violations, worst, seed)


def monte_carlo_nullspace_check(n: int, d: int, m: int, k: int, samples: int,
                                seed) -> CertificationReport:
    """Sample an i.i.d. Gaussian null-space basis and probe it with random directions.

    Any violation disproves the condition for that basis; none is only evidence.
    """
    if not m < n:
        raise ValueError("need m < n")
    if not 0 <= k <= n:
        raise ValueError("need 0 <= k <= n")
    seed = as_seed(seed)
    part = BlockPartition(n, d)
    Z = sample_gaussian_matrix(d * n, d * (n - m), seed.child(0))
    return monte_carlo_basis_check(Z, part, k, samples, seed)


def dense_sphere_check(Z, partition: BlockPartition, k: int, resolution: int) -> SphereCheck:
    """Evaluate the margin on a deterministic grid over the unit sphere of ``v``.

    ``lipschitz_gap`` bounds how far the true minimum over the sphere can sit
    below the grid minimum (block-norm Lipschitz constant times the grid's
    covering radius); see :attr:`SphereCheck.certified`.
    """
    Z = np.asarray(Z, dtype=float)
    dim = Z.shape[1]
    if dim > 3:
        raise UnsupportedDimensionError(f"null-space dimension {dim} > 3")
    if dim == 0:
        raise UnsupportedDimensionError("empty null space")
    if resolution < 1:
        raise ValueError("resolution must be positive")
    if dim == 1:
        V = np.array([[1.0, -1.0]])
        radius = 0.0
    elif dim == 2:
        th = 2 * np.pi * np.arange(resolution) / resolution
        V = np.vstack([np.cos(th), np.sin(th)])
        radius = 2 * math.sin(math.pi / (2 * resolution)) if resolution > 1 else 2.0
    else:
        th = np.pi * (np.arange(resolution) + 0.5) / resolution
        ph = 2 * np.pi * np.arange(resolution) / resolution
        st, ct = np.sin(th), np.cos(th)
        V = np.vstack([
            np.outer(st, np.cos(ph)).ravel(),
            np.outer(st, np.sin(ph)).ravel(),
            np.repeat(ct, resolution),
        ])
        radius = min(2.0, 1.5 * math.pi / resolution)
    Zb = Z.reshape(partition.n, partition.d, dim)
    lip = float(sum(np.linalg.norm(Zb[i], 2) for i in range(partition.n)))
    worst = math.inf
    step = 1 << 16
    for s in range(0, V.shape[1], step):
        worst = min(worst, float(vector_margins(Z @ V[:, s:s + step], partition, k).min()))
    return SphereCheck(worst > 0, worst, lip * radius)


def exhaustive_l0_oracle(A, y, partition: BlockPartition, k_max: int,
                         residual_tol: float = 1e-8) -> BlockSignal | None:
    """Sparsest block support (up to ``k_max`` blocks) that fits ``y`` exactly.

    Supports are tried by increasing size; within the first size that admits a
    fit (relative residual <= ``residual_tol``), the smallest residual wins.
    """
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if not np.any(y):
        return BlockSignal(np.zeros(partition.N), partition)
    for size in range(1, k_max + 1):
        if size * partition.d > A.shape[0]:
            break
        best = None
        for blocks in itertools.combinations(range(partition.n), size):
            try:
                values, rel = least_squares_on_support(A, y, partition, blocks)
            except DegenerateSupportError:
                continue
            if rel <= residual_tol and (best is None or rel < best[1]):
                best = (values, rel)
        if best is not None:
            return BlockSignal(best[0], partition)
    return None


def admissible_supports(A, y, partition: BlockPartition, size: int,
                        residual_tol: float = 1e-8) -> list[tuple[int, ...]]:
    """Every block support of the given size that fits ``y`` to ``residual_tol``."""
    out = []
    for blocks in itertools.combinations(range(partition.n), size):
        try:
            _, rel = least_squares_on_support(A, y, partition, blocks)
        except DegenerateSupportError:
            continue
        if rel <= residual_tol:
            out.append(blocks)
    return out


def _relative_error(est: np.ndarray, truth: np.ndarray) -> float:
    scale = np.linalg.norm(truth)
    err = np.linalg.norm(est - truth)
    return err / scale if scale > 0 else err


def equivalence_trials(A, partition: BlockPartition, k: int, trials: int, seed,
                       opts: SolverOptions | None = None, rel_tol: float = 1e-4) -> float:
    """Fraction of planted ``k``-block-sparse signals on a fixed ``A`` where the
    l2/l1 pipeline and the exhaustive oracle both return the planted signal."""
    seed = as_seed(seed)
    A = np.asarray(A, dtype=float)
    proj = AffineProjector(A)
    successes = 0
    for t in range(trials):
        x = sample_block_sparse_signal(partition, k, seed.child(2, t))
        y = measure(A, x)
        res = solve_l21(A, y, partition, opts, projector=proj)
        est = res.estimate.values
        if k > 0:
            try:
                est = refit_top_k(A, y, res.estimate, k).values
            except DegenerateSupportError:
                continue
        oracle = exhaustive_l0_oracle(A, y, partition, k)
        ok = (
            _relative_error(est, x.values) <= rel_tol
            and oracle is not None
            and oracle.support() == x.support()
        )
        successes += bool(ok)
    return successes / trials


def equivalence_test(n: int, d: int, m: int, k: int, trials: int, seed,
                     opts: SolverOptions | None = None, rel_tol: float = 1e-4) -> float:
    """Like :func:`equivalence_trials` but with a fresh Gaussian ``A`` per trial."""
    seed = as_seed(seed)
    part = BlockPartition(n, d)
    successes = 0.0
    for t in range(trials):
        A = sample_gaussian_matrix(m * d, n * d, seed.child(1, t))
        successes += equivalence_trials(A, part, k, 1, seed.child(3, t), opts, rel_tol)
    return successes / trials


def oracle_recovery_fraction(n: int, d: int, m: int, k: int, trials: int, seed,
                             rel_tol: float = 1e-8) -> float:
    """Fraction of planted signals the exhaustive oracle alone returns exactly."""
    seed = as_seed(seed)
    part = BlockPartition(n, d)
    hits = 0
    for t in range(trials):
        A = sample_gaussian_matrix(m * d, n * d, seed.child(1, t))
        x = sample_block_sparse_signal(part, k, seed.child(3, t).child(2, 0))
        found = exhaustive_l0_oracle(A, measure(A, x), part, k)
        hits += found is not None and _relative_error(found.values, x.values) <= rel_tol
    return hits / trials
