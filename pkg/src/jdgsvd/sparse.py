"""Sparse products, 1-norms and the two ways of applying (B^T B)^{-1}."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded
from scipy.linalg.lapack import dpbtrf
from scipy.sparse.linalg import LinearOperator, cg

from .core import DimensionError, GsvdError, RankDeficientError, SparseMatrix


class BandwidthError(GsvdError):
    pass


class CgConvergenceError(GsvdError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


def spmv(M: SparseMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != M.cols:
        raise DimensionError(f"vector of length {x.shape[0]} for matrix with {M.cols} columns")
    return M.csr @ x


def spmv_transpose(M: SparseMatrix, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != M.rows:
        raise DimensionError(f"vector of length {y.shape[0]} for matrix with {M.rows} rows")
    # csr.T is a CSC view of the same arrays, nothing is copied
    return M.csr.T @ y


def one_norm(M: SparseMatrix) -> float:
    return M.one_norm_cache


def btb_bandwidth(B: SparseMatrix) -> int:
    """Half bandwidth of B^T B, read off the column span of each row of B."""
    offsets, cols = B.row_offsets, B.col_indices
    nonempty = np.flatnonzero(np.diff(offsets) > 0)
    if nonempty.size == 0:
        return 0
    # columns are sorted within a row, so first/last entries give the span
    first = cols[offsets[nonempty]]
    last = cols[offsets[nonempty + 1] - 1]
    return int(np.max(last - first))


@dataclass(frozen=True, eq=False)
class BandedCholeskyFactor:
    """Lower band storage of L with B^T B = L L^T.

    ``factor_bands[i, j]`` holds ``L[j + i, j]`` (LAPACK lower band layout).
    """

    n: int
    bandwidth: int
    factor_bands: np.ndarray

    def solve(self, rhs) -> np.ndarray:
        return cho_solve_banded((self.factor_bands, True), rhs, check_finite=False)

    def to_dense(self) -> np.ndarray:
        L = np.zeros((self.n, self.n))
        for i in range(self.bandwidth + 1):
            idx = np.arange(self.n - i)
            L[idx + i, idx] = self.factor_bands[i, : self.n - i]
        return L


def _lower_bands(S: sp.spmatrix, bandwidth: int) -> np.ndarray:
    n = S.shape[0]
    ab = np.zeros((bandwidth + 1, n))
    for i in range(bandwidth + 1):
        ab[i, : n - i] = S.diagonal(-i)
    return ab


def btb_cholesky(B: SparseMatrix, bandwidth_limit: int = 64) -> BandedCholeskyFactor:
    """Banded Cholesky factor of B^T B.

    Raises ``RankDeficientError`` naming the first non-positive pivot and
    ``BandwidthError`` when B^T B is too wide for the band path.
    """
    n = B.cols
    bw = btb_bandwidth(B)
    if bw > bandwidth_limit:
        raise BandwidthError(
            f"B^T B has bandwidth {bw} > {bandwidth_limit}; use btb_solve='cg' instead"
        )
    btb = (B.csr.T @ B.csr).tocsr()
    ab = _lower_bands(btb, bw)
    diag_max = float(ab[0].max()) if n else 0.0
    factor, info = dpbtrf(ab, lower=1)
    if info > 0:
        raise RankDeficientError(
            f"B^T B is not positive definite: non-positive pivot at index {info - 1} "
            "(B is rank deficient)",
            index=info - 1,
        )
    if info < 0:
        raise ValueError(f"dpbtrf: illegal argument {-info}")
    # a tiny positive pivot is rank deficiency in disguise
    small = np.flatnonzero(factor[0] ** 2 <= n * np.finfo(float).eps * diag_max)
    if diag_max == 0 or small.size:
        idx = int(small[0]) if small.size else 0
        raise RankDeficientError(
            f"B^T B is numerically singular: pivot {idx} is below working precision "
            "(B is rank deficient)",
            index=idx,
        )
    return BandedCholeskyFactor(n, bw, factor)


def btb_solve(B: SparseMatrix, factor: BandedCholeskyFactor | None, rhs, opts=None) -> np.ndarray:
    """Solve (B^T B) s = rhs, column by column when ``rhs`` is a matrix.

    With a factor the two triangular solves are used; otherwise CG with B^T B
    applied as two sparse products.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != B.cols:
        raise DimensionError("right-hand side length must equal n")
    if factor is not None:
        return factor.solve(rhs)
    cg_tol = getattr(opts, "cg_tol", 1e-12)
    maxiter = getattr(opts, "cg_max_iter", None) or 2 * B.cols
    if rhs.ndim == 1:
        return _cg_btb(B, rhs, cg_tol, maxiter)
    return np.column_stack([_cg_btb(B, rhs[:, j], cg_tol, maxiter) for j in range(rhs.shape[1])])


def _cg_btb(B: SparseMatrix, rhs, cg_tol, maxiter):
    nrm = np.linalg.norm(rhs)
    if nrm == 0:
        return np.zeros_like(rhs)
    csr = B.csr
    op = LinearOperator((B.cols, B.cols), matvec=lambda s: csr.T @ (csr @ s), dtype=np.float64)
    s, _ = cg(op, rhs, rtol=cg_tol, atol=0.0, maxiter=maxiter)
    res = np.linalg.norm(csr.T @ (csr @ s) - rhs) / nrm
    if res > cg_tol:
        # the recursive residual can drift from the true one; one refinement pass
        d, _ = cg(op, rhs - csr.T @ (csr @ s), rtol=cg_tol / max(res, cg_tol), atol=0.0,
                  maxiter=maxiter)
        s = s + d
        res = np.linalg.norm(csr.T @ (csr @ s) - rhs) / nrm
    if res > cg_tol:
        raise CgConvergenceError(
            f"CG on B^T B did not reach {cg_tol:.1e} in {maxiter} steps (residual {res:.2e})", res
        )
    return s
