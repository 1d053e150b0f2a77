"""Small dense kernels: QR with reorthogonalization, symmetric and
nonsymmetric pencils, one-sided Jacobi SVD and the projected GSVD.

Sizes here never exceed ``k_max`` (30 by default), so clarity wins over speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .core import GsvdError, RankDeficientError

_EPS = np.finfo(float).eps


class InSpanError(GsvdError):
    """The appended column lies (numerically) in the current column space."""

    def __init__(self, message, gamma=0.0):
        super().__init__(message)
        self.gamma = gamma


class NotPositiveDefiniteError(GsvdError):
    pass


@dataclass(frozen=True, eq=False)
class ThinQr:
    q: np.ndarray
    r: np.ndarray


@dataclass(frozen=True, eq=False)
class SmallGsvd:
    alphas: np.ndarray
    betas: np.ndarray
    e_vectors: np.ndarray
    f_vectors: np.ndarray
    d_vectors: np.ndarray

    @property
    def thetas(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.where(self.betas > 0, self.alphas / np.where(self.betas > 0, self.betas, 1),
                            np.inf)


def orthogonalize(w, Q, passes=2):
    """Two-pass classical Gram-Schmidt of ``w`` against orthonormal ``Q``.

    Returns the projected vector and the accumulated coefficients.
    """
    h = np.zeros(Q.shape[1])
    if Q.shape[1] == 0:
        return w.copy(), h
    w = w.copy()
    for _ in range(passes):
        c = Q.T @ w
        w -= Q @ c
        h += c
    return w, h


def complement_vector(Q, rng=None):
    """A unit vector orthogonal to the orthonormal columns of ``Q``."""
    n, k = Q.shape
    if k >= n:
        raise RankDeficientError("no orthogonal complement left", index=k)
    # try coordinate directions with the smallest projection first, then random ones
    leverage = np.einsum("ij,ij->i", Q, Q) if k else np.zeros(n)
    candidates = [np.eye(1, n, int(i)).ravel() for i in np.argsort(leverage)[:3]]
    rng = np.random.default_rng(rng)
    candidates += [rng.standard_normal(n) for _ in range(3)]
    for w in candidates:
        w, _ = orthogonalize(w, Q, passes=3)
        nrm = np.linalg.norm(w)
        if nrm > 0.1:
            return w / nrm
    raise RankDeficientError("failed to build an orthogonal complement vector", index=k)


def thin_qr(X, fill: bool = False, rng=None) -> ThinQr:
    """Thin QR by column-wise two-pass Gram-Schmidt; R has a nonnegative diagonal.

    With ``fill=True`` a numerically dependent column gets R[j, j] = 0 and an
    arbitrary orthonormal completion in Q instead of raising.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if k > n:
        raise ValueError(f"thin QR needs k <= n, got {k} > {n}")
    Q = np.zeros((n, k))
    R = np.zeros((k, k))
    for j in range(k):
        col = X[:, j]
        w, h = orthogonalize(col, Q[:, :j])
        R[:j, j] = h
        rjj = np.linalg.norm(w)
        if rjj <= 1e-14 * np.linalg.norm(col) or rjj == 0:
            if not fill:
                raise RankDeficientError(f"column {j} is numerically dependent", index=j)
            Q[:, j] = complement_vector(Q[:, :j], rng)
            R[j, j] = 0.0
        else:
            Q[:, j] = w / rjj
            R[j, j] = rjj
    return ThinQr(Q, R)


def qr_append(f: ThinQr, new_col):
    """Append one column to a thin QR factorization.

    Returns ``(new_factor, gamma, r_new, q_new)`` where ``r_new = Q^T new_col``
    and ``gamma`` is the norm of the projected remainder.
    """
    new_col = np.asarray(new_col, dtype=np.float64)
    w, r_new = orthogonalize(new_col, f.q)
    gamma = np.linalg.norm(w)
    if gamma < 1e-14 * np.linalg.norm(new_col) or gamma == 0:
        raise InSpanError("appended column lies in the current span", gamma)
    q_new = w / gamma
    k = f.r.shape[0]
    R = np.zeros((k + 1, k + 1))
    R[:k, :k] = f.r
    R[:k, k] = r_new
    R[k, k] = gamma
    return ThinQr(np.column_stack([f.q, q_new]), R), gamma, r_new, q_new


def sym_eig(S):
    """Eigenvalues (ascending) and orthonormal eigenvectors of symmetric S."""
    S = np.asarray(S, dtype=np.float64)
    asym = np.linalg.norm(S - S.T)
    if asym > 1e-12 * max(np.linalg.norm(S), 1e-300) and asym > 0:
        raise ValueError("matrix is not symmetric")
    return np.linalg.eigh(0.5 * (S + S.T))


def _cholesky(H):
    try:
        return np.linalg.cholesky(0.5 * (H + H.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("metric matrix is not positive definite") from exc


def sym_definite_geig(G, H):
    """Solve G w = lambda H w for symmetric G and SPD H.

    Eigenvalues ascending; eigenvectors satisfy W^T H W = I.
    """
    G = np.asarray(G, dtype=np.float64)
    L = _cholesky(np.asarray(H, dtype=np.float64))
    C = sla.solve_triangular(L, G, lower=True)
    C = sla.solve_triangular(L, C.T, lower=True)
    lam, Y = sym_eig(0.5 * (C + C.T))
    W = sla.solve_triangular(L.T, Y, lower=False)
    return lam, W


def real_geig(G, H):
    """All eigenpairs of G w = lambda H w, G general, H SPD.

    Returns a list of ``(eigenvalue, eigenvector)`` with complex entries.
    Reduces to the standard problem for L^{-1} G L^{-T} and solves that with
    LAPACK's Hessenberg/QR eigensolver.
    """
    G = np.asarray(G, dtype=np.float64)
    L = _cholesky(np.asarray(H, dtype=np.float64))
    C = sla.solve_triangular(L, G, lower=True)
    C = sla.solve_triangular(L, C.T, lower=True).T
    try:
        lam, Y = sla.eig(C)
    except sla.LinAlgError as exc:
        raise GsvdError("QR iteration failed to converge") from exc
    W = sla.solve_triangular(L.T, Y, lower=False)
    return [(lam[i], W[:, i]) for i in range(lam.size)]


def _round_robin(k):
    """Rounds of disjoint column pairs covering every pair once (tournament ordering)."""
    players = list(range(k)) + ([-1] if k % 2 else [])
    m = len(players)
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        rounds.append((np.array([p for p, _ in pairs], dtype=int),
                       np.array([q for _, q in pairs], dtype=int)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def small_svd(M, max_sweeps: int = 60):
    """One-sided (Hestenes) Jacobi SVD of a tall matrix.

    Returns ``(s, U, V)`` with s descending and ``M = U diag(s) V^T``.
    Each round rotates a set of disjoint column pairs at once.
    """
    M = np.asarray(M, dtype=np.float64)
    j, k = M.shape
    if j < k:
        raise ValueError("small_svd expects a tall matrix (rows >= cols)")
    W = M.copy()
    V = np.eye(k)
    rounds = _round_robin(k)
    for _ in range(max_sweeps):
        rotated = False
        for P, Q in rounds:
            wp, wq = W[:, P], W[:, Q]
            a = np.einsum("ij,ij->j", wp, wp)
            b = np.einsum("ij,ij->j", wq, wq)
            g = np.einsum("ij,ij->j", wp, wq)
            active = np.abs(g) > _EPS * np.sqrt(a * b)
            if not active.any():
                continue
            rotated = True
            P, Q, a, b, g = P[active], Q[active], a[active], b[active], g[active]
            zeta = (b - a) / (2.0 * g)
            t = np.copysign(1.0, zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.hypot(1.0, t)
            sn = c * t
            wp, wq = W[:, P], W[:, Q]
            W[:, P], W[:, Q] = c * wp - sn * wq, sn * wp + c * wq
            vp, vq = V[:, P], V[:, Q]
            V[:, P], V[:, Q] = c * vp - sn * vq, sn * vp + c * vq
        if not rotated:
            break
    sigma = np.linalg.norm(W, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, W, V = sigma[order], W[:, order], V[:, order]
    U = np.zeros((j, k))
    tiny = _EPS * max(sigma[0] if k else 0.0, 1e-300) * k
    for i in range(k):
        if sigma[i] > tiny:
            U[:, i] = W[:, i] / sigma[i]
        else:
            U[:, i] = complement_vector(U[:, :i])
            sigma[i] = 0.0
    return sigma, U, V


def small_gsvd(RA, RB) -> SmallGsvd:
    """GSVD of a small pair through the CS decomposition of the stacked Q factor.

    With [RA; RB] = [Q1; Q2] R and Q1 = U C W^T, the columns of Q2 W are
    orthogonal with norms S; then RA d = c e and RB d = s f for d = R^{-1} w.
    """
    RA = np.asarray(RA, dtype=np.float64)
    RB = np.asarray(RB, dtype=np.float64)
    k = RA.shape[1]
    if RA.shape != (k, k) or RB.shape != (k, k):
        raise ValueError("small_gsvd expects two k x k matrices")
    try:
        qr = thin_qr(np.vstack([RA, RB]))
    except RankDeficientError as exc:
        raise RankDeficientError(
            "stacked projected pair is rank deficient (broken regularity or degenerate subspace)",
            index=exc.index,
        ) from exc
    Q1, Q2 = qr.q[:k], qr.q[k:]
    c, E, W = small_svd(Q1)
    Z = Q2 @ W
    s = np.linalg.norm(Z, axis=0)
    F = np.zeros_like(Z)
    for i in range(k):
        if s[i] > 1e-15:
            F[:, i] = Z[:, i] / s[i]
        else:
            s[i] = 0.0
            F[:, i] = complement_vector(F[:, :i])
    # Q2 W / s loses orthogonality like eps / s; Gram-Schmidt in order of decreasing s
    # repairs the small-s columns and leaves the accurate ones untouched
    order = np.argsort(-s, kind="stable")
    F[:, order] = thin_qr(F[:, order], fill=True).q
    t = np.hypot(c, s)
    alphas, betas = c / t, s / t
    D = sla.solve_triangular(qr.r, W / t, lower=False)
    return SmallGsvd(alphas, betas, E, F, D)

