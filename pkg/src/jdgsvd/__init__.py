"""Jacobi-Davidson type solvers for a partial GSVD of a large sparse matrix pair.

Three extractions are available: the standard Ritz extraction (``standard``,
CPF-JDGSVD), the cross product-free harmonic extraction (``cpf_harmonic``,
CPF-HJDGSVD) and the inverse-free harmonic extraction (``if_harmonic``,
IF-HJDGSVD).
"""

from .core import (
    ConvergenceTrace,
    GsvdComponent,
    GsvdError,
    MatrixPair,
    Method,
    MethodPreconditionError,
    PartialGsvdResult,
    SolverOptions,
    SparseMatrix,
    TraceRecord,
    order_by_target,
    validate_component,
)
from .driver import DeflationSet, solve

__all__ = [
    "ConvergenceTrace",
    "DeflationSet",
    "GsvdComponent",
    "GsvdError",
    "MatrixPair",
    "Method",
    "MethodPreconditionError",
    "PartialGsvdResult",
    "SolverOptions",
    "SparseMatrix",
    "TraceRecord",
    "order_by_target",
    "solve",
    "validate_component",
]
