"""Recovery of block-sparse signals by mixed l2/l1 minimisation."""

from .core import (
    BlockPartition,
    BlockSignal,
    DegenerateMatrixError,
    InvalidSizeError,
    InvalidSparsityError,
    RandomSeed,
    block_norms,
    measure,
    null_space_basis,
    sample_block_sparse_signal,
    sample_gaussian_matrix,
)
from .solver import (
    AffineProjector,
    DegenerateSupportError,
    RecoveryResult,
    SolverOptions,
    block_shrink,
    project_affine,
    recover,
    refit_top_k,
    solve_l21,
)

__version__ = "0.1.0"
