"""LSMR and LSQR for sparse least squares, with backward-error diagnostics."""

from .backerr import (BackwardErrorReport, backward_errors, dense_ls_solve, dense_minnorm_solve,
                      dense_qr, jacobi_svd, optimal_backward_error, stewart_e1, stewart_e2)
from .gk import GkState, ReorthMemoryError, ReorthMode, gk_init, gk_step, reorthogonalize
from .linop import (AugmentedOperator, CsrMatrix, DenseMatrix, DimensionError, IdentityOperator,
                    LinearOperator, ScalingError, ScalingReport, apply, apply_adjoint, column_unit_scale)
from .lsmr import (IterationRecord, LsmrState, NonFiniteError, SolveOptions, SolveResult, StopReason,
                   lsmr_solve, lsmr_solve_restarted, sym_ortho)
from .lsqr import LsqrState, lsqr_solve, run_lockstep
from .mmio import MatrixMarketError, read_matrix_market, read_vector, write_matrix_market, write_vector

__version__ = "0.1.0"
