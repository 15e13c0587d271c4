"""Mixed l2/l1 minimisation over an affine set, plus support refitting.

The convex program

    minimise  sum_i ||x_i||_2   subject to  A x = y

is solved by ADMM on the split ``x = z``: the ``x`` step is the exact
Euclidean projection onto ``{x : A x = y}`` and the ``z`` step is block
soft-thresholding. Several right-hand sides sharing one ``A`` can be solved
together (:func:`solve_l21_batch`), which is what the phase experiments use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .core import BlockPartition, BlockSignal, DegenerateMatrixError


class DegenerateSupportError(ValueError):
    """Least squares on the selected support is singular."""


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 20000
    primal_tolerance: float = 1e-8
    fixed_point_tolerance: float = 1e-9
    penalty: float = 1.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.primal_tolerance > 0 and self.fixed_point_tolerance > 0):
            raise ValueError("tolerances must be positive")
        if not self.penalty > 0:
            raise ValueError("penalty must be positive")


@dataclass(frozen=True)
class RecoveryResult:
    estimate: BlockSignal
    objective: float
    iterations: int
    feasibility_residual: float
    converged: bool
    refit: BlockSignal | None = None

    @property
    def signal(self) -> BlockSignal:
        """The estimate experiments score: the refit when present."""
        return self.refit if self.refit is not None else self.estimate


def block_shrink(v, kappa: float) -> np.ndarray:
    """Proximal map of ``kappa * ||.||_2``: ``v * max(0, 1 - kappa / ||v||)``."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm <= kappa:
        return np.zeros_like(v)
    return v * (1.0 - kappa / nrm)


def _shrink_blocks(v: np.ndarray, partition: BlockPartition, kappa) -> np.ndarray:
    # v is (N, T); kappa broadcasts over columns
    vb = v.reshape(partition.n, partition.d, -1)
    nrm = np.sqrt(np.einsum("idt,idt->it", vb, vb))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(nrm > kappa, 1.0 - kappa / nrm, 0.0)
    return (vb * scale[:, None, :]).reshape(v.shape)


class AffineProjector:
    """Cached factorisation for projecting onto ``{x : A x = y}``.

    Holds the economic QR factorisation ``A.T = Q R``; ``R.T R`` is then a
    Cholesky factorisation of ``A A.T``. When the null space is the smaller
    of the two subspaces an orthonormal basis of it is kept as well, and the
    projection is applied through whichever basis is thinner.
    """

    def __init__(self, A, rank_tol: float = 1e-10):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise ValueError("A must be a matrix")
        m, N = A.shape
        if m > N:
            raise DegenerateMatrixError(f"{m}x{N} matrix cannot have full row rank")
        self.A = A
        Q, R = scipy.linalg.qr(A.T, mode="full" if 2 * m > N else "economic")
        diag = np.abs(np.diag(R[:m, :m]))
        scale = max(np.abs(A).max(), 1e-300)
        if m and diag.min() <= rank_tol * scale * N:
            raise DegenerateMatrixError("A A^T is singular")
        self.Q = np.ascontiguousarray(Q[:, :m])
        self.R = R[:m, :m]
        self.null_basis = np.ascontiguousarray(Q[:, m:]) if 2 * m > N else None

    @property
    def shape(self):
        return self.A.shape

    def min_norm(self, y) -> np.ndarray:
        """``A.T (A A.T)^-1 y``; ``y`` may be a vector or an ``m x T`` array."""
        u = scipy.linalg.solve_triangular(self.R, y, trans="T")
        return self.Q @ u

    def project(self, z, y=None, x_min=None) -> np.ndarray:
        if x_min is None:
            x_min = self.min_norm(y)
        if self.null_basis is not None:
            W = self.null_basis
            return x_min + W @ (W.T @ z)
        Q = self.Q
        return z - Q @ (Q.T @ z) + x_min


def project_affine(A, factor: AffineProjector | None, y, z) -> np.ndarray:
    """Nearest point to ``z`` on ``{x : A x = y}``."""
    if factor is None:
        factor = AffineProjector(A)
    return factor.project(np.asarray(z, dtype=float), np.asarray(y, dtype=float))


def _check_dims(A, partition: BlockPartition, Y):
    m, N = A.shape
    if N != partition.N:
        raise ValueError(f"A has {N} columns but the partition covers {partition.N}")
    if Y.shape[0] != m:
        raise ValueError(f"measurements have length {Y.shape[0]}, A has {m} rows")


def solve_l21_batch(A, Y, partition: BlockPartition, opts: SolverOptions | None = None,
                    projector: AffineProjector | None = None):
    """Solve the program for every column of ``Y`` (``m x T``).

    Returns ``(X, iterations, residuals, converged)`` with ``X`` of shape
    ``N x T``. Columns are dropped from the working set once they converge.
    """
    opts = opts or SolverOptions()
    A = np.asarray(A, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    _check_dims(A, partition, Y)
    proj = projector if projector is not None else AffineProjector(A)
    N, T = partition.N, Y.shape[1]

    x_min_all = proj.min_norm(Y)
    # per-column scale makes the iterates equivariant under y -> c y
    scale = np.linalg.norm(x_min_all, axis=0) / np.sqrt(partition.n)
    scale[scale == 0] = 1.0
    ynorm = np.maximum(1.0, np.linalg.norm(Y, axis=0))
    ynorm_s = np.linalg.norm(Y, axis=0) / scale
    kappa = 1.0 / opts.penalty

    X_out = np.zeros((N, T))
    iters_out = np.zeros(T, dtype=int)
    res_out = np.full(T, np.inf)
    best_score = np.full(T, np.inf)
    conv_out = np.zeros(T, dtype=bool)

    active = np.arange(T)
    x_min = x_min_all / scale
    z = np.zeros((N, T))
    u = np.zeros((N, T))
    for it in range(1, opts.max_iterations + 1):
        x = proj.project(z - u, x_min=x_min)
        v = x + u
        z_new = _shrink_blocks(v, partition, kappa)
        u = v - z_new
        step = np.linalg.norm(z_new - z, axis=0)
        z = z_new

        sc = scale[active]
        zs = z * sc
        raw = np.linalg.norm(A @ zs - Y[:, active], axis=0)
        feas = raw / ynorm[active]
        znorm = np.linalg.norm(z, axis=0)
        # tolerances must hold both as given and in normalised units, which
        # keeps the stopping rule invariant under y -> c y
        feas_s = np.maximum(feas, (raw / sc) / np.maximum(1.0, ynorm_s[active]))
        fp = np.maximum(step * sc / np.maximum(1.0, znorm * sc), step / np.maximum(1.0, znorm))
        score = np.maximum(feas_s / opts.primal_tolerance, fp / opts.fixed_point_tolerance)

        better = score < best_score[active]
        if better.any():
            cols = active[better]
            X_out[:, cols] = zs[:, better]
            res_out[cols] = feas[better]
            best_score[cols] = score[better]
        iters_out[active] = it

        done = score <= 1.0
        if done.any():
            cols = active[done]
            conv_out[cols] = True
            X_out[:, cols] = zs[:, done]
            res_out[cols] = feas[done]
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            z, u, x_min = z[:, keep], u[:, keep], x_min[:, keep]
    return X_out, iters_out, res_out, conv_out


def solve_l21(A, y, partition: BlockPartition, opts: SolverOptions | None = None,
              projector: AffineProjector | None = None) -> RecoveryResult:
    """Minimise the sum of block norms subject to ``A x = y``."""
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise ValueError("y must be a vector")
    X, its, res, conv = solve_l21_batch(A, y[:, None], partition, opts, projector)
    est = BlockSignal(X[:, 0], partition)
    return RecoveryResult(
        estimate=est,
        objective=est.l21_norm(),
        iterations=int(its[0]),
        feasibility_residual=float(res[0]),
        converged=bool(conv[0]),
    )


def top_k_blocks(norms, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, lower index first on ties, sorted."""
    order = np.argsort(-np.asarray(norms), kind="stable")
    return np.sort(order[:k])


def least_squares_on_support(A, y, partition: BlockPartition, blocks, cond_limit: float = 1e12):
    """Least-squares fit using only the columns of the given blocks.

    Returns ``(values, relative_residual)`` with ``values`` zero off the support.
    """
    cols = partition.columns(blocks)
    values = np.zeros(partition.N)
    if cols.size == 0:
        rel = 0.0 if not np.any(y) else 1.0
        return values, rel
    As = A[:, cols]
    if As.shape[0] < As.shape[1]:
        raise DegenerateSupportError("support has more columns than there are measurements")
    coef, _, rank, sv = np.linalg.lstsq(As, y, rcond=None)
    if rank < As.shape[1] or sv[0] > cond_limit * sv[-1]:
        raise DegenerateSupportError("normal equations on the support are singular")
    values[cols] = coef
    ynorm = np.linalg.norm(y)
    r = np.linalg.norm(As @ coef - y)
    return values, (r / ynorm if ynorm > 0 else r)


def refit_top_k(A, y, x_hat: BlockSignal, k: int) -> BlockSignal:
    """Least squares on the ``k`` largest-norm blocks of ``x_hat``, zero elsewhere."""
    part = x_hat.partition
    A = np.asarray(A, dtype=float)
    if not 1 <= k <= part.n:
        raise ValueError(f"need 1 <= k <= n={part.n}, got k={k}")
    if k * part.d > A.shape[0]:
        raise DegenerateSupportError(f"k*d={k * part.d} exceeds the {A.shape[0]} measurements")
    blocks = top_k_blocks(x_hat.norms(), k)
    values, _ = least_squares_on_support(A, np.asarray(y, dtype=float), part, blocks)
    return BlockSignal(values, part)


def recover(A, y, partition: BlockPartition, k: int | None = None,
            opts: SolverOptions | None = None) -> RecoveryResult:
    """Solve the convex program, then (if ``k`` is given) refit on the top-``k`` blocks."""
    if k is not None and k < 1:
        raise ValueError("k must be >= 1 when given")
    res = solve_l21(A, y, partition, opts)
    if k is None:
        return res
    refit = refit_top_k(A, y, res.estimate, k)
    return RecoveryResult(
        estimate=res.estimate,
        objective=res.objective,
        iterations=res.iterations,
        feasibility_residual=res.feasibility_residual,
        converged=res.converged,
        refit=refit,
    )
