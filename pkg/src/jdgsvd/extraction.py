"""Standard, cross product-free harmonic and inverse-free harmonic extraction.

Each extraction reduces to a small dense problem on the current subspace and
returns a coefficient vector ``d``; the approximate component is then always
assembled the same way: ``e = R_A d``, ``f = R_B d``,
``delta = sqrt(|e|^2 + |f|^2)``, ``x = X d / delta``, ``u = U e / |e|``,
``v = V f / |f|``, ``alpha = |e| / delta``, ``beta = |f| / delta``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .core import GsvdError, MatrixPair, Method, order_by_target
from .dense import NotPositiveDefiniteError, small_gsvd, sym_definite_geig
from .sparse import spmv_transpose
from .subspace import SubspaceState

log = logging.getLogger(__name__)

# alpha or beta below this counts as a trivial (zero or infinite) value
TRIVIAL = 1e-12


@dataclass(eq=False)
class ExtractionResult:
    alpha: float
    beta: float
    theta: float
    u: np.ndarray
    v: np.ndarray
    x: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray
    delta: float
    residual: np.ndarray
    residual_norm: float
    atu: np.ndarray
    btv: np.ndarray
    all_candidates: list = field(default_factory=list)
    phi: float | None = None
    method: Method = Method.STANDARD
    fallback: bool = False


def _split(state: SubspaceState, d):
    e = state.r_a @ d
    f = state.r_b @ d
    ne, nf = np.linalg.norm(e), np.linalg.norm(f)
    delta = np.hypot(ne, nf)
    return e, f, ne, nf, delta


def _rayleigh_theta(state, d):
    _, _, ne, nf, delta = _split(state, d)
    if delta == 0:
        return None
    alpha, beta = ne / delta, nf / delta
    if alpha <= TRIVIAL or beta <= TRIVIAL:
        return None
    return alpha / beta


def assemble(state: SubspaceState, pair: MatrixPair, d, **extra) -> ExtractionResult:
    """Approximate GSVD component for the coefficient vector ``d``."""
    d = np.asarray(d, dtype=np.float64)
    e, f, ne, nf, delta = _split(state, d)
    if ne == 0 or nf == 0:
        raise GsvdError("selected coefficient vector gives a trivial generalized singular value")
    alpha, beta = ne / delta, nf / delta
    u = state.u_basis @ (e / ne)
    v = state.v_basis @ (f / nf)
    x = state.x_basis @ (d / delta)
    atu = spmv_transpose(pair.a, u)
    btv = spmv_transpose(pair.b, v)
    r = beta * atu - alpha * btv
    return ExtractionResult(
        alpha=alpha, beta=beta, theta=alpha / beta, u=u, v=v, x=x, d=d, e=e, f=f,
        delta=delta, residual=r, residual_norm=float(np.linalg.norm(r)), atu=atu, btv=btv,
        **extra,
    )


def extract_standard(state: SubspaceState, pair: MatrixPair, tau: float) -> ExtractionResult:
    """Ritz approximation from the GSVD of the projected pair (R_A, R_B)."""
    g = small_gsvd(state.r_a, state.r_b)
    valid = np.flatnonzero((g.alphas > TRIVIAL) & (g.betas > TRIVIAL))
    if valid.size == 0:
        raise GsvdError("projected pair has no nontrivial generalized singular value")
    thetas = g.alphas[valid] / g.betas[valid]
    order = [valid[i] for i in order_by_target(thetas, tau)]
    candidates = [(g.alphas[i] / g.betas[i], g.d_vectors[:, i]) for i in order]
    excluded = [(np.inf if g.betas[i] <= TRIVIAL else 0.0, g.d_vectors[:, i])
                for i in range(g.alphas.size) if i not in set(valid)]
    return assemble(state, pair, candidates[0][1], all_candidates=candidates + excluded,
                    method=Method.STANDARD)


def _fallback(state, pair, tau, method, reason):
    log.info("%s extraction fell back to standard: %s", method.value, reason)
    res = extract_standard(state, pair, tau)
    res.method = method
    res.fallback = True
    return res


def cpf_pencil(state: SubspaceState, tau: float):
    """The symmetric pencil (G_c, H_c) of the cross product-free harmonic extraction."""
    RA, RB, k = state.r_a, state.r_b, state.k
    btb = RB.T @ RB
    G = np.block([[-tau * btb, RA.T], [RA, -tau * np.eye(k)]])
    H = np.block([
        [RA.T @ RA + tau**2 * btb, -2 * tau * RA.T],
        [-2 * tau * RA, state.h_ab_dag + tau**2 * np.eye(k)],
    ])
    return 0.5 * (G + G.T), 0.5 * (H + H.T)


def extract_cpf_harmonic(state: SubspaceState, pair: MatrixPair, tau: float) -> ExtractionResult:
    """Harmonic extraction for the SVD of A L^{-T}, carried back to (A, B)."""
    if state.h_ab_dag is None:
        raise GsvdError("cross product-free harmonic extraction needs the h_ab_dag cache")
    k = state.k
    G, H = cpf_pencil(state, tau)
    try:
        mus, W = sym_definite_geig(G, H)
    except NotPositiveDefiniteError:
        return _fallback(state, pair, tau, Method.CPF_HARMONIC, "H_c is not positive definite")
    candidates = []
    phis = []
    for i in np.argsort(-np.abs(mus), kind="stable"):
        mu = mus[i]
        if mu == 0:
            continue
        phi = tau + 1.0 / mu
        if phi <= 0:
            log.debug("skipping negative harmonic value %.3e", phi)
            continue
        d = W[:k, i]
        theta = _rayleigh_theta(state, d)
        if theta is None:
            continue
        candidates.append((theta, d / np.linalg.norm(d)))
        phis.append(phi)
    if not candidates:
        return _fallback(state, pair, tau, Method.CPF_HARMONIC, "no admissible harmonic value")
    return assemble(state, pair, candidates[0][1], all_candidates=candidates, phi=phis[0],
                    method=Method.CPF_HARMONIC)


def if_pencil(state: SubspaceState, tau: float):
    """The pencil (G_tau, H_tau) of the inverse-free harmonic extraction."""
    t2 = tau**2
    G = state.h_ab - t2 * state.h_b
    H = state.h_a + t2**2 * state.h_b - t2 * (state.h_ab.T + state.h_ab)
    return G, 0.5 * (H + H.T)


def _if_eigenpairs(state: SubspaceState, tau: float):
    """Eigenpairs of G_tau w = nu H_tau w without forming H_tau.

    With M = P_A - tau^2 P_B = Q R we have H_tau = R^T R and G_tau = M^T P_B,
    so the pencil is equivalent to (Q^T P_B R^{-1}) z = nu z with w = R^{-1} z.
    This keeps the conditioning at cond(M) instead of cond(M)^2.
    """
    M = state.p_a - tau**2 * state.p_b
    Q, R = np.linalg.qr(M)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-14 * diag.max():
        raise NotPositiveDefiniteError("H_tau is singular")
    C = sla.solve_triangular(R, (Q.T @ state.p_b).T, trans="T", lower=False).T
    try:
        lam, Z = sla.eig(C)
    except sla.LinAlgError as exc:
        raise GsvdError("QR iteration failed to converge") from exc
    W = sla.solve_triangular(R, Z, lower=False)
    return [(lam[i], W[:, i]) for i in range(lam.size)]


def extract_if_harmonic(state: SubspaceState, pair: MatrixPair, tau: float) -> ExtractionResult:
    """Harmonic Rayleigh-Ritz for (A^T A, B^T B) about tau^2, no inverses involved."""
    if state.p_a is None:
        raise GsvdError("inverse-free harmonic extraction needs the p_a/p_b caches")
    try:
        pairs = _if_eigenpairs(state, tau)
    except NotPositiveDefiniteError:
        return _fallback(state, pair, tau, Method.IF_HARMONIC, "H_tau is not positive definite")
    t2 = tau**2
    admissible = []
    for nu, w in pairs:
        if nu == 0 or abs(nu.imag) > 1e-10 * abs(nu):
            continue
        nu = nu.real
        if t2 + 1.0 / nu <= 0:
            continue
        admissible.append((nu, np.real(w)))
    admissible.sort(key=lambda item: -abs(item[0]))
    candidates = []
    phis = []
    for nu, d in admissible:
        theta = _rayleigh_theta(state, d)
        if theta is None:
            continue
        candidates.append((theta, d / np.linalg.norm(d)))
        phis.append(np.sqrt(t2 + 1.0 / nu))
    if not candidates:
        return _fallback(state, pair, tau, Method.IF_HARMONIC, "no real admissible eigenvalue")
    return assemble(state, pair, candidates[0][1], all_candidates=candidates, phi=phis[0],
                    method=Method.IF_HARMONIC)


def extract(state: SubspaceState, pair: MatrixPair, tau: float) -> ExtractionResult:
    if state.method is Method.CPF_HARMONIC:
        return extract_cpf_harmonic(state, pair, tau)
    if state.method is Method.IF_HARMONIC:
        return extract_if_harmonic(state, pair, tau)
    return extract_standard(state, pair, tau)


def convergence_bound(alpha, beta, pair: MatrixPair, tol) -> float:
    return (beta * pair.a.one_norm_cache + alpha * pair.b.one_norm_cache) * tol


def residual_and_test(res: ExtractionResult, pair: MatrixPair, opts):
    """Residual norm and whether it passes ``|r| <= (beta |A|_1 + alpha |B|_1) tol``."""
    bound = convergence_bound(res.alpha, res.beta, pair, opts.tol)
    return res.residual_norm, bool(res.residual_norm <= bound)
