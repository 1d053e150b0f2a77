"""Matrix Market files, test-pair generators and result/trace serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.stats import ortho_group

from .core import (
    TRACE_FIELDS,
    DimensionError,
    GsvdComponent,
    MatrixPair,
    ParseError,
    PartialGsvdResult,
    SparseMatrix,
)


def _parse_error(msg, lineno):
    return ParseError(f"line {lineno}: {msg}", line=lineno)


def read_matrix_market(path) -> SparseMatrix:
    """Read a coordinate ``real``/``integer`` ``general``/``symmetric`` Matrix Market file."""
    with open(path, encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise _parse_error("empty file", 1)
    header = lines[0].split()
    if len(header) != 5 or header[0].lower() != "%%matrixmarket" or header[1].lower() != "matrix":
        raise _parse_error("malformed Matrix Market header", 1)
    fmt, fieldtype, symmetry = (h.lower() for h in header[2:])
    if fmt != "coordinate":
        raise _parse_error(f"unsupported format {fmt!r} (only coordinate)", 1)
    if fieldtype not in ("real", "integer", "double"):
        raise _parse_error(f"unsupported field {fieldtype!r} (only real)", 1)
    if symmetry not in ("general", "symmetric"):
        raise _parse_error(f"unsupported symmetry {symmetry!r}", 1)

    i = 1
    while i < len(lines) and (not lines[i].strip() or lines[i].lstrip().startswith("%")):
        i += 1
    if i == len(lines):
        raise _parse_error("missing size line", i + 1)
    try:
        rows, cols, nnz = (int(t) for t in lines[i].split())
    except ValueError:
        raise _parse_error("malformed size line", i + 1) from None
    if rows < 0 or cols < 0 or nnz < 0:
        raise _parse_error("negative size", i + 1)
    if symmetry == "symmetric" and rows != cols:
        raise _parse_error("symmetric matrix must be square", i + 1)

    ri, ci, vals = [], [], []
    seen = 0
    for lineno in range(i + 2, len(lines) + 1):
        text = lines[lineno - 1].strip()
        if not text or text.startswith("%"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise _parse_error("expected 'row col value'", lineno)
        try:
            r, c = int(parts[0]), int(parts[1])
            val = float(parts[2])
        except ValueError:
            raise _parse_error("malformed entry", lineno) from None
        if not (1 <= r <= rows and 1 <= c <= cols):
            raise _parse_error(f"index ({r}, {c}) out of bounds", lineno)
        if symmetry == "symmetric" and c > r:
            raise _parse_error("symmetric storage must hold the lower triangle", lineno)
        ri.append(r - 1)
        ci.append(c - 1)
        vals.append(val)
        if symmetry == "symmetric" and r != c:
            ri.append(c - 1)
            ci.append(r - 1)
            vals.append(val)
        seen += 1
    if seen != nnz:
        raise _parse_error(f"expected {nnz} entries, found {seen}", len(lines))
    # coo -> csr sums duplicates
    M = sp.coo_matrix((vals, (ri, ci)), shape=(rows, cols)).tocsr()
    M.sum_duplicates()
    M.sort_indices()
    return SparseMatrix.from_any(M)


def write_matrix_market(path, M) -> None:
    """Write a coordinate real general file; ``%.17g`` makes it round-trip exactly."""
    S = SparseMatrix.from_any(M).csr.tocoo()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{S.shape[0]} {S.shape[1]} {S.nnz}\n")
        for r, c, v in zip(S.row, S.col, S.data):
            fh.write(f"{r + 1} {c + 1} {v:.17g}\n")


def generate_b(kind: str, n: int) -> SparseMatrix:
    """The regularization matrices T (tridiag(1, 3, 1)), L1 and L2 (difference operators)."""
    if n < 3:
        raise DimensionError("B generators need n >= 3")
    kind = kind.upper().removeprefix("GEN_")
    if kind == "T":
        M = sp.diags([np.ones(n - 1), 3 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], shape=(n, n))
    elif kind == "L1":
        M = sp.diags([np.ones(n - 1), -np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    elif kind == "L2":
        M = sp.diags([-np.ones(n - 2), 2 * np.ones(n - 2), -np.ones(n - 2)], [0, 1, 2],
                     shape=(n - 2, n))
    else:
        raise ValueError(f"unknown B generator {kind!r}; expected T, L1 or L2")
    return SparseMatrix.from_any(M.tocsr())


def random_sparse(m: int, n: int, density: float, seed: int) -> SparseMatrix:
    """Seeded random sparse matrix: standard normal entries plus the identity on the diagonal.

    The diagonal keeps [A; B] regular for any of the B generators.
    """
    rng = np.random.default_rng(seed)
    M = sp.random(m, n, density=density, random_state=rng, data_rvs=rng.standard_normal,
                  format="csr")
    return SparseMatrix.from_any((M + sp.eye(m, n, format="csr")).tocsr())


def planted_x(n: int, cond_x: float, rng) -> np.ndarray:
    """X = Q1 diag(s) Q2^T with s log-spaced on [1, cond_x]."""
    q1 = ortho_group.rvs(n, random_state=rng) if n > 1 else np.ones((1, 1))
    q2 = ortho_group.rvs(n, random_state=rng) if n > 1 else np.ones((1, 1))
    s = np.logspace(0, np.log10(cond_x), n)
    return q1 @ np.diag(s) @ q2.T


def generate_planted_pair(m, p, n, sigma_spectrum, cond_x, seed):
    """A pair with a prescribed GSVD and its exact components.

    A = U diag(alpha) X^{-1}, B = V diag(beta) X^{-1} with alpha = sigma / sqrt(1 + sigma^2),
    beta = 1 / sqrt(1 + sigma^2). Component i has right vector X[:, i].
    """
    sig = np.asarray(sigma_spectrum, dtype=np.float64)
    if sig.shape != (n,):
        raise DimensionError("sigma_spectrum must have n entries")
    if m < n or p < n:
        raise DimensionError("planted pairs need m >= n and p >= n")
    if np.any(sig <= 0) or cond_x < 1:
        raise ValueError("spectrum must be positive and cond_x >= 1")
    rng = np.random.default_rng(seed)
    U = ortho_group.rvs(m, random_state=rng)[:, :n] if m > 1 else np.ones((1, 1))
    V = ortho_group.rvs(p, random_state=rng)[:, :n] if p > 1 else np.ones((1, 1))
    X = planted_x(n, cond_x, rng)
    alpha = sig / np.sqrt(1 + sig**2)
    beta = 1 / np.sqrt(1 + sig**2)
    Xinv = np.linalg.inv(X)
    A = (U * alpha) @ Xinv
    B = (V * beta) @ Xinv
    comps = [GsvdComponent(alpha[i], beta[i], U[:, i], V[:, i], X[:, i], 0.0) for i in range(n)]
    return MatrixPair(A, B), comps


@dataclass
class TestPairSpec:
    """Where A and B come from, plus optional reported properties."""

    __test__ = False  # not a pytest class

    a_source: tuple
    b_source: tuple
    metadata: dict = field(default_factory=dict)

    def build(self) -> MatrixPair:
        kind, *args = self.a_source
        if kind == "file":
            a = read_matrix_market(args[0])
        elif kind == "random_sparse":
            a = random_sparse(*args)
        else:
            raise ValueError(f"unknown A source {kind!r}")
        kind, *args = self.b_source
        if kind == "file":
            b = read_matrix_market(args[0])
        else:
            b = generate_b(kind, a.cols)
        return MatrixPair(a, b)


def probe_pair(pair: MatrixPair) -> dict:
    """Dense estimates of sigma_max, sigma_min and cond([A; B]) (small sizes only)."""
    A, B = pair.a.toarray(), pair.b.toarray()
    sig = sla.eigh(A.T @ A, B.T @ B, eigvals_only=True) if pair.p >= pair.n else None
    s = np.linalg.svd(np.vstack([A, B]), compute_uv=False)
    out = {"cond_stack": float(s[0] / s[-1]) if s[-1] > 0 else float("inf")}
    if sig is not None:
        sig = np.sqrt(np.clip(sig, 0, None))
        out["sigma_max"], out["sigma_min"] = float(sig.max()), float(sig.min())
    return out


def result_to_dict(result: PartialGsvdResult) -> dict:
    return {
        "method": result.method.value,
        "components": [
            {"alpha": c.alpha, "beta": c.beta, "sigma": c.sigma, "residual_norm": c.residual_norm}
            for c in result.components
        ],
        "outer_iterations": result.outer_iterations,
        "inner_iterations": result.inner_iterations,
        "wall_seconds": result.wall_seconds,
        "converged": result.converged,
    }


def write_result_json(path, results, seed=None) -> None:
    payload = [result_to_dict(r) for r in results]
    doc = payload[0] if len(payload) == 1 else {"runs": payload}
    if seed is not None:
        doc = {"seed": seed, **doc}
    Path(path).write_text(json.dumps(doc, indent=2))


def write_trace_csv(path, result: PartialGsvdResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for rec in result.trace.records:
            w.writerow([
                rec.outer_iter, rec.component_index, repr(rec.theta), repr(rec.alpha),
                repr(rec.beta), repr(rec.rel_residual), rec.inner_iters, rec.rho_mode.value,
                rec.event.value,
            ])
