"""
Sparse SPD linear algebra for the update problem.

Matrices are scipy CSR matrices with sorted column indices; vectors are
one-dimensional numpy arrays.  The update problem is solved by conjugate
gradients with Jacobi preconditioning.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.io
from scipy.sparse import csr_matrix, issparse

from .errors import ExportError, NumericalError, UsageError

logger = logging.getLogger('mcp_magnetostatics_server.linsolve')

CsrMatrix = csr_matrix
DenseVector = np.ndarray

DEFAULT_LINEAR_TOL = 1e-10


@dataclass(frozen=True)
class LinearSolveReport:
    iterations: int
    relative_residual: float
    converged: bool


def _check_square(A) -> int:
    if not issparse(A) or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise UsageError(f"expected a square sparse matrix, got shape {getattr(A, 'shape', None)}")
    return A.shape[0]


def spmv(A: CsrMatrix, x: DenseVector) -> DenseVector:
    """y = A x"""
    n = _check_square(A)
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise UsageError(f"dimension mismatch: matrix is {n}x{n}, vector has shape {x.shape}")
    return np.asarray(A @ x).ravel()


def cg_solve(A: CsrMatrix, rhs: DenseVector, tol: float = DEFAULT_LINEAR_TOL,
             max_it: Optional[int] = None, x0: Optional[DenseVector] = None) -> tuple[DenseVector, LinearSolveReport]:
    """
    Jacobi-preconditioned conjugate gradients.

    Stops when ||A x - rhs|| <= tol ||rhs||.  Exceeding max_it returns the
    current iterate with converged=False; the caller decides what to do.
    """
    n = _check_square(A)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (n,):
        raise UsageError(f"dimension mismatch: matrix is {n}x{n}, rhs has shape {rhs.shape}")
    if not tol > 0:
        raise UsageError(f"tolerance must be positive, got {tol}")
    if max_it is None:
        max_it = max(10 * n, 100)

    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros(n), LinearSolveReport(0, 0.0, True)

    diag = A.diagonal()
    if np.any(diag <= 0):
        raise NumericalError("matrix has non-positive diagonal entries; not SPD")
    inv_diag = 1.0 / diag

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    threshold = tol * rhs_norm
    res_norm = float(np.linalg.norm(r))
    it = 0
    while res_norm > threshold and it < max_it:
        Ap = A @ p
        curvature = float(p @ Ap)
        if curvature <= 0:
            raise NumericalError(f"negative curvature {curvature:.3e} in CG; matrix is not SPD")
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Ap
        it += 1
        res_norm = float(np.linalg.norm(r))
        if res_norm <= threshold:
            break
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    report = LinearSolveReport(iterations=it, relative_residual=res_norm / rhs_norm,
                               converged=res_norm <= threshold)
    if report.converged:
        logger.debug(f"CG converged in {it} iterations, relative residual {report.relative_residual:.2e}")
    else:
        logger.warning(f"CG stopped after {it} iterations, relative residual {report.relative_residual:.2e}")
    return x, report


def energy_norm(A: CsrMatrix, x: DenseVector) -> float:
    """sqrt(x^T A x) for symmetric positive semi-definite A"""
    Ax = spmv(A, x)
    quad = float(np.asarray(x, dtype=float) @ Ax)
    if quad < -1e-12 * float(np.dot(x, x)):
        raise NumericalError(f"quadratic form is negative ({quad:.3e}); matrix is not positive semi-definite")
    return float(np.sqrt(max(quad, 0.0)))


def dump_matrix_market(A: CsrMatrix, path: str | Path) -> Path:
    """Write A in Matrix Market coordinate format for debugging"""
    path = Path(path)
    if path.suffix != ".mtx":
        path = path.with_name(path.name + ".mtx")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        scipy.io.mmwrite(str(path), A.tocoo(), symmetry="general")
    except OSError as e:
        raise ExportError(f"Could not write matrix to {path}: {e}") from e
    return path
