"""Searching subspaces X, U = AX, V = BX and the projected matrices the
extractions need.

The state keeps orthonormal bases with ``A X = U R_A`` and ``B X = V R_B``.
Depending on the extraction it also carries

* ``h_ab_dag = U^T A (B^T B)^{-1} A^T U`` for the cross product-free harmonic
  extraction, and
* ``p_a = A^T A X``, ``p_b = B^T B X`` with their Gram blocks
  ``h_a = p_a^T p_a``, ``h_b = p_b^T p_b``, ``h_ab = p_a^T p_b`` for the
  inverse-free one.

All caches are bordered by one row/column per expansion and rotated by the
same small orthogonal factors on restart and purge, so no product with A or B
is needed there.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import DimensionError, GsvdError, MatrixPair, Method, RankDeficientError
from .dense import InSpanError, complement_vector, orthogonalize, qr_append, thin_qr, ThinQr
from .sparse import btb_solve, spmv, spmv_transpose

log = logging.getLogger(__name__)

REFRESH_AFTER = 200


class StagnationError(GsvdError):
    """The expansion vector lies in the current searching subspace."""


@dataclass(frozen=True, eq=False)
class SubspaceState:
    x_basis: np.ndarray
    u_basis: np.ndarray
    v_basis: np.ndarray
    r_a: np.ndarray
    r_b: np.ndarray
    method: Method
    h_ab_dag: np.ndarray | None = None
    p_a: np.ndarray | None = None
    p_b: np.ndarray | None = None
    h_a: np.ndarray | None = None
    h_b: np.ndarray | None = None
    h_ab: np.ndarray | None = None
    locked: np.ndarray | None = None
    btb_factor: object = None
    updates: int = 0
    rng: np.random.Generator | None = None

    @property
    def k(self) -> int:
        return self.x_basis.shape[1]


def _btb_apply(state, pair, rhs, opts):
    return btb_solve(pair.b, state.btb_factor, rhs, opts)


def _append(qr: ThinQr, col, rng):
    """``qr_append`` that completes the basis instead of failing on an in-span column."""
    try:
        new, gamma, r_new, q_new = qr_append(qr, col)
        return new.q, new.r
    except InSpanError:
        w, r_new = orthogonalize(col, qr.q)
        q_new = complement_vector(qr.q, rng)
        k = qr.r.shape[0]
        R = np.zeros((k + 1, k + 1))
        R[:k, :k] = qr.r
        R[:k, k] = r_new
        # drop the sub-roundoff remainder; keeps A X = U R_A to working precision
        R[k, k] = 0.0
        return np.column_stack([qr.q, q_new]), R


def _new_dag_column(state, pair, u_new, u_all, opts):
    w = _btb_apply(state, pair, spmv_transpose(pair.a, u_new), opts)
    return u_all.T @ spmv(pair.a, w)


def init_subspace(pair: MatrixPair, v0, opts, *, btb_factor=None, locked=None,
                  rng=None) -> SubspaceState:
    """One-dimensional state spanned by ``v0`` (made orthogonal to ``locked`` first)."""
    v0 = np.asarray(v0, dtype=np.float64).ravel()
    if v0.shape[0] != pair.n:
        raise DimensionError("initial vector must have length n")
    if locked is not None and locked.shape[1]:
        v0, _ = orthogonalize(v0, locked)
    nrm = np.linalg.norm(v0)
    if nrm == 0:
        raise ValueError("initial vector must be nonzero")
    rng = rng if rng is not None else np.random.default_rng(getattr(opts, "seed", 0))
    x = (v0 / nrm)[:, None]
    ax, bx = spmv(pair.a, x[:, 0]), spmv(pair.b, x[:, 0])
    qa = thin_qr(ax, fill=True, rng=rng)
    qb = thin_qr(bx, fill=True, rng=rng)
    method = opts.method
    state = SubspaceState(x, qa.q, qb.q, qa.r, qb.r, method, locked=locked,
                          btb_factor=btb_factor, rng=rng)
    if method is Method.CPF_HARMONIC:
        col = _new_dag_column(state, pair, qa.q[:, 0], qa.q, opts)
        state = replace(state, h_ab_dag=col.reshape(1, 1))
    elif method is Method.IF_HARMONIC:
        pa = spmv_transpose(pair.a, ax)[:, None]
        pb = spmv_transpose(pair.b, bx)[:, None]
        state = replace(state, p_a=pa, p_b=pb, h_a=pa.T @ pa, h_b=pb.T @ pb, h_ab=pa.T @ pb)
    return state


def _border(H, col_top, row_left, corner):
    k = H.shape[0]
    out = np.empty((k + 1, k + 1))
    out[:k, :k] = H
    out[:k, k] = col_top
    out[k, :k] = row_left
    out[k, k] = corner
    return out


def expand(state: SubspaceState, t, pair: MatrixPair, opts) -> SubspaceState:
    """Add the direction of ``t`` orthogonalized against X (and the locked vectors)."""
    t = np.asarray(t, dtype=np.float64)
    basis = state.x_basis
    if state.locked is not None and state.locked.shape[1]:
        basis = np.column_stack([state.x_basis, state.locked])
    w, _ = orthogonalize(t, basis)
    nrm = np.linalg.norm(w)
    tnrm = np.linalg.norm(t)
    if not nrm > 1e-13 * tnrm or tnrm == 0:
        raise StagnationError("stagnated expansion: t lies in the searching subspace")
    w /= nrm
    # one more pass keeps x_+ orthogonal to round-off even after heavy cancellation
    w, _ = orthogonalize(w, basis, passes=1)
    x_new = w / np.linalg.norm(w)

    ax, bx = spmv(pair.a, x_new), spmv(pair.b, x_new)
    u, r_a = _append(ThinQr(state.u_basis, state.r_a), ax, state.rng)
    v, r_b = _append(ThinQr(state.v_basis, state.r_b), bx, state.rng)
    new = replace(state, x_basis=np.column_stack([state.x_basis, x_new]), u_basis=u,
                  v_basis=v, r_a=r_a, r_b=r_b, updates=state.updates + 1)

    if state.method is Method.CPF_HARMONIC:
        col = _new_dag_column(state, pair, u[:, -1], u, opts)
        new = replace(new, h_ab_dag=_border(state.h_ab_dag, col[:-1], col[:-1], col[-1]))
    elif state.method is Method.IF_HARMONIC:
        pa = spmv_transpose(pair.a, ax)
        pb = spmv_transpose(pair.b, bx)
        ca, cb = state.p_a.T @ pa, state.p_b.T @ pb
        h_ab = _border(state.h_ab, state.p_a.T @ pb, pa @ state.p_b, pa @ pb)
        new = replace(
            new,
            p_a=np.column_stack([state.p_a, pa]),
            p_b=np.column_stack([state.p_b, pb]),
            h_a=_border(state.h_a, ca, ca, pa @ pa),
            h_b=_border(state.h_b, cb, cb, pb @ pb),
            h_ab=h_ab,
        )
    if new.updates >= REFRESH_AFTER:
        new = refresh_caches(new, pair, opts)
    return new


def refresh_caches(state: SubspaceState, pair: MatrixPair, opts) -> SubspaceState:
    """Recompute the projected matrices from their definitions."""
    if state.method is Method.CPF_HARMONIC:
        W = _btb_apply(state, pair, spmv_transpose(pair.a, state.u_basis), opts)
        H = state.u_basis.T @ spmv(pair.a, W)
        state = replace(state, h_ab_dag=0.5 * (H + H.T))
    elif state.method is Method.IF_HARMONIC:
        pa = spmv_transpose(pair.a, spmv(pair.a, state.x_basis))
        pb = spmv_transpose(pair.b, spmv(pair.b, state.x_basis))
        state = replace(state, p_a=pa, p_b=pb, h_a=pa.T @ pa, h_b=pb.T @ pb, h_ab=pa.T @ pb)
    log.debug("subspace caches refreshed after %d updates", state.updates)
    return replace(state, updates=0)


def _compress(state: SubspaceState, Q: np.ndarray) -> SubspaceState:
    """Restrict every basis and cache to X Q for an orthonormal k x j matrix Q."""
    qa = thin_qr(state.r_a @ Q, fill=True, rng=state.rng)
    qb = thin_qr(state.r_b @ Q, fill=True, rng=state.rng)
    new = replace(
        state,
        x_basis=state.x_basis @ Q,
        u_basis=state.u_basis @ qa.q,
        v_basis=state.v_basis @ qb.q,
        r_a=qa.r,
        r_b=qb.r,
    )
    if state.h_ab_dag is not None:
        H = qa.q.T @ state.h_ab_dag @ qa.q
        new = replace(new, h_ab_dag=0.5 * (H + H.T))
    if state.p_a is not None:
        new = replace(
            new,
            p_a=state.p_a @ Q,
            p_b=state.p_b @ Q,
            h_a=Q.T @ state.h_a @ Q,
            h_b=Q.T @ state.h_b @ Q,
            h_ab=Q.T @ state.h_ab @ Q,
        )
    return new


def thick_restart(state: SubspaceState, kept_coeffs, pair=None, opts=None) -> SubspaceState:
    """Shrink to span(X D1) where D1 holds the coefficient vectors to keep."""
    D1 = np.asarray(kept_coeffs, dtype=np.float64)
    if D1.ndim == 1:
        D1 = D1[:, None]
    if D1.shape[0] != state.k:
        raise DimensionError("restart coefficients must have k rows")
    try:
        Qd = thin_qr(D1).q
    except RankDeficientError as exc:
        raise RankDeficientError("restart coefficient matrix is rank deficient",
                                 index=exc.index) from exc
    return _compress(state, Qd)


def purge(state: SubspaceState, d, pair=None, opts=None) -> SubspaceState:
    """Remove the converged direction X d, keeping X orthogonal to (A^T A + B^T B) X d."""
    if state.k <= 1:
        raise RankDeficientError("cannot purge a one-dimensional subspace", index=0)
    d = np.asarray(d, dtype=np.float64)
    d_prime = state.r_a.T @ (state.r_a @ d) + state.r_b.T @ (state.r_b @ d)
    Q, _ = np.linalg.qr(d_prime[:, None], mode="complete")
    return _compress(state, Q[:, 1:])


def with_locked(state: SubspaceState, locked) -> SubspaceState:
    return replace(state, locked=locked)


def check_invariants(state: SubspaceState, pair: MatrixPair, y_c=None) -> dict:
    """Measured violations of the subspace invariants (all should be tiny)."""
    k = state.k
    ax = spmv(pair.a, state.x_basis)
    bx = spmv(pair.b, state.x_basis)
    out = {
        "ax_factor": np.linalg.norm(ax - state.u_basis @ state.r_a),
        "bx_factor": np.linalg.norm(bx - state.v_basis @ state.r_b),
        "x_orth": np.linalg.norm(state.x_basis.T @ state.x_basis - np.eye(k)),
        "u_orth": np.linalg.norm(state.u_basis.T @ state.u_basis - np.eye(k)),
        "v_orth": np.linalg.norm(state.v_basis.T @ state.v_basis - np.eye(k)),
    }
    if state.h_ab_dag is not None:
        out["h_ab_dag_sym"] = np.linalg.norm(state.h_ab_dag - state.h_ab_dag.T)
    if state.h_a is not None:
        out["h_a_sym"] = np.linalg.norm(state.h_a - state.h_a.T)
        out["h_b_sym"] = np.linalg.norm(state.h_b - state.h_b.T)
    if y_c is not None and y_c.shape[1]:
        out["x_y_c"] = np.abs(state.x_basis.T @ y_c).max()
    return out
