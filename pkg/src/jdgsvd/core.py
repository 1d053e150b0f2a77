"""Domain types shared by the solver modules.

Everything here is an immutable value once built. Sparse matrices are stored
in CSR form; products are delegated to a cached ``scipy.sparse`` view that
walks the rows in index order, so results are reproducible on one platform.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp


class GsvdError(Exception):
    """Base class for solver errors."""


class DimensionError(GsvdError, ValueError):
    pass


class RankDeficientError(GsvdError):
    """A factorization met a (numerically) dependent column or zero pivot."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MethodPreconditionError(GsvdError):
    """The requested extraction cannot be applied to this matrix pair."""


class ParseError(GsvdError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class Method(str, enum.Enum):
    STANDARD = "standard"
    CPF_HARMONIC = "cpf_harmonic"
    IF_HARMONIC = "if_harmonic"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"cpf": cls.STANDARD, "cpfh": cls.CPF_HARMONIC, "ifh": cls.IF_HARMONIC}
        key = str(value).lower()
        if key in aliases:
            return aliases[key]
        return cls(key)

    @property
    def short_name(self):
        return {"standard": "CPF", "cpf_harmonic": "CPFH", "if_harmonic": "IFH"}[self.value]


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with a lazily cached 1-norm."""

    rows: int
    cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.row_offsets, dtype=np.int64)
        indices = np.asarray(self.col_indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if offsets.shape != (self.rows + 1,):
            raise DimensionError("row_offsets must have rows+1 entries")
        if offsets[0] != 0 or offsets[-1] != values.size or np.any(np.diff(offsets) < 0):
            raise DimensionError("row_offsets must be nondecreasing from 0 to nnz")
        if indices.shape != values.shape:
            raise DimensionError("col_indices and values differ in length")
        if indices.size and (indices.min() < 0 or indices.max() >= self.cols):
            raise DimensionError("column index out of range")
        # strictly increasing columns within each row
        if indices.size > 1:
            row_start = np.zeros(indices.size, dtype=bool)
            row_start[offsets[:-1][offsets[:-1] < indices.size]] = True
            if np.any((np.diff(indices) <= 0) & ~row_start[1:]):
                raise DimensionError("column indices must increase strictly within a row")
        for name, arr in (("row_offsets", offsets), ("col_indices", indices), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_any(cls, matrix) -> "SparseMatrix":
        """Build from a ``SparseMatrix``, a scipy sparse matrix or a dense array."""
        if isinstance(matrix, SparseMatrix):
            return matrix
        if sp.issparse(matrix):
            csr = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
        else:
            dense = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
            csr = sp.csr_matrix(dense)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return int(self.values.size)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=self.shape)

    @cached_property
    def one_norm_cache(self) -> float:
        if self.nnz == 0:
            return 0.0
        sums = np.bincount(self.col_indices, weights=np.abs(self.values), minlength=self.cols)
        return float(sums.max())

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def __repr__(self):
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


@dataclass(frozen=True)
class MatrixPair:
    """The pair (A, B); regularity is assumed, not checked."""

    a: SparseMatrix
    b: SparseMatrix

    def __post_init__(self):
        object.__setattr__(self, "a", SparseMatrix.from_any(self.a))
        object.__setattr__(self, "b", SparseMatrix.from_any(self.b))
        if self.a.cols != self.b.cols:
            raise DimensionError(
                f"A and B must have the same number of columns ({self.a.cols} != {self.b.cols})"
            )

    @property
    def m(self):
        return self.a.rows

    @property
    def p(self):
        return self.b.rows

    @property
    def n(self):
        return self.a.cols


@dataclass(frozen=True, eq=False)
class GsvdComponent:
    alpha: float
    beta: float
    u: np.ndarray
    v: np.ndarray
    x: np.ndarray
    residual_norm: float

    @property
    def sigma(self) -> float:
        return self.alpha / self.beta


@dataclass(frozen=True)
class SolverOptions:
    """Parameters of one partial GSVD run.

    ``max_outer``, ``cg_max_iter`` and ``max_inner`` default to ``n``, ``2n``
    and ``2n`` respectively once the problem size is known; see
    :meth:`resolved`. ``initial_vector`` is either an explicit length-n vector
    or one of the generator names ``"ones"``, ``"mod4"``, ``"random"``. When
    left as ``None`` the all-ones start is used for square B and the
    ``mod(1:n, 4)`` ramp otherwise.

    ``lock_factor`` tightens the convergence test for every component except
    the last one to ``lock_factor * tol``: later components are computed
    orthogonally to the locked ones, and their attainable residual is about
    the locked residual divided by the relative gap.
    """

    target: float
    num_components: int = 1
    method: Method = Method.IF_HARMONIC
    tol: float = 1e-8
    fixtol: float = 1e-4
    inner_eps: float = 1e-4
    inner_c: float = 1.0
    k_max: int = 30
    k_min: int = 3
    max_outer: int | None = None
    initial_vector: object = None
    btb_solve: str = "banded_cholesky"
    cg_tol: float = 1e-12
    cg_max_iter: int | None = None
    seed: int = 0
    inner_solver: str = "minres"
    max_inner: int | None = None
    bandwidth_limit: int = 64
    check_invariants: bool = False
    lock_factor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if not self.target > 0:
            raise ValueError("target must be positive")
        if self.num_components < 1:
            raise ValueError("num_components must be at least 1")
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if not 1 <= self.k_min < self.k_max:
            raise ValueError("need 1 <= k_min < k_max")
        if self.btb_solve not in ("banded_cholesky", "cg"):
            raise ValueError("btb_solve must be 'banded_cholesky' or 'cg'")
        if self.inner_solver not in ("minres", "exact"):
            raise ValueError("inner_solver must be 'minres' or 'exact'")
        if not 0 < self.lock_factor <= 1:
            raise ValueError("lock_factor must lie in (0, 1]")
        for name in ("fixtol", "inner_eps", "inner_c", "cg_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def resolved(self, n: int) -> "SolverOptions":
        """Fill size-dependent defaults and clip ``k_max`` to ``n``."""
        k_max = min(self.k_max, n)
        k_min = min(self.k_min, k_max - 1) if k_max > 1 else self.k_min
        return replace(
            self,
            k_max=max(k_max, 2),
            k_min=max(k_min, 1),
            max_outer=self.max_outer if self.max_outer is not None else n,
            cg_max_iter=self.cg_max_iter if self.cg_max_iter is not None else 2 * n,
            max_inner=self.max_inner if self.max_inner is not None else 2 * n,
        )


class RhoMode(str, enum.Enum):
    FIXED_TAU = "fixed_tau"
    DYNAMIC = "dynamic"


class Event(str, enum.Enum):
    EXPAND = "expand"
    RESTART = "restart"
    CONVERGE = "converge"
    PURGE = "purge"


@dataclass(frozen=True)
class TraceRecord:
    outer_iter: int
    component_index: int
    theta: float
    alpha: float
    beta: float
    rel_residual: float
    inner_iters: int
    rho_mode: RhoMode
    event: Event


TRACE_FIELDS = (
    "outer_iter",
    "component_index",
    "theta",
    "alpha",
    "beta",
    "rel_residual",
    "inner_iters",
    "rho_mode",
    "event",
)


@dataclass
class ConvergenceTrace:
    records: list = field(default_factory=list)

    def append(self, record: TraceRecord):
        if self.records and record.outer_iter <= self.records[-1].outer_iter:
            raise ValueError("outer_iter must increase strictly")
        if not record.rel_residual >= 0:
            raise ValueError("rel_residual must be nonnegative")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def total_inner(self):
        return sum(r.inner_iters for r in self.records)


@dataclass(frozen=True)
class PartialGsvdResult:
    components: list
    outer_iterations: int
    inner_iterations: int
    trace: ConvergenceTrace
    converged: bool
    method: Method = Method.IF_HARMONIC
    wall_seconds: float = 0.0

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([c.sigma for c in self.components])


def order_by_target(sigmas: Sequence[float], tau: float) -> list:
    """Permutation sorting ``sigmas`` by distance to ``tau``.

    Ties go to the smaller value, then to the earlier index.
    """
    sigmas = [float(s) for s in sigmas]
    return sorted(range(len(sigmas)), key=lambda i: (abs(sigmas[i] - tau), sigmas[i], i))


def validate_component(comp: GsvdComponent, pair: MatrixPair, *, tol: float | None = None,
                       factor_tol: float = 1e-12, norm_tol: float = 1e-12) -> list:
    """Check one component against the GSVD relations; return the list of failures.

    ``tol`` enables the residual convergence test as well. An empty list
    means the component is valid.
    """
    a, b = pair.a, pair.b
    problems = []
    alpha, beta = comp.alpha, comp.beta
    if not (0 < alpha < 1 and 0 < beta < 1):
        problems.append(f"alpha/beta outside (0,1): {alpha}, {beta}")
    if abs(alpha**2 + beta**2 - 1) > 1e-14:
        problems.append("alpha^2 + beta^2 != 1")
    for name, vec in (("u", comp.u), ("v", comp.v)):
        if abs(np.linalg.norm(vec) - 1) > 1e-14:
            problems.append(f"||{name}|| != 1")
    ax = a.csr @ comp.x
    bx = b.csr @ comp.x
    if abs(ax @ ax + bx @ bx - 1) > norm_tol:
        problems.append("x is not (A^T A + B^T B)-normalized")
    if np.linalg.norm(ax - alpha * comp.u) > factor_tol * max(a.one_norm_cache, 1.0):
        problems.append("||Ax - alpha u|| too large")
    if np.linalg.norm(bx - beta * comp.v) > factor_tol * max(b.one_norm_cache, 1.0):
        problems.append("||Bx - beta v|| too large")
    if tol is not None:
        r = beta * (a.csr.T @ comp.u) - alpha * (b.csr.T @ comp.v)
        bound = (beta * a.one_norm_cache + alpha * b.one_norm_cache) * tol
        if np.linalg.norm(r) > bound:
            problems.append(f"residual {np.linalg.norm(r):.3e} exceeds bound {bound:.3e}")
    return problems
