"""Deflated correction equation and its MINRES solve.

The equation solved for the expansion vector is

    (I - Y_p X_p^T)(A^T A - rho^2 B^T B)(I - X_p Y_p^T) t = -(I - Y_p X_p^T) r,

with X_p = [X_c, x], Y_p = [Y_c, y] and y = (A^T A + B^T B) x. The operator is
symmetric, so MINRES applies; rho stays at the target until the residual
passes the ``fixtol`` test and then follows the current approximation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import GsvdError, MatrixPair, RhoMode
from .extraction import ExtractionResult, convergence_bound
from .sparse import spmv, spmv_transpose

log = logging.getLogger(__name__)


class InnerBreakdownError(GsvdError):
    pass


@dataclass(frozen=True, eq=False)
class CorrectionContext:
    rho: float
    x_p: np.ndarray
    y_p: np.ndarray
    rhs: np.ndarray
    rho_mode: RhoMode


def build_context(res: ExtractionResult, deflation, pair: MatrixPair, opts,
                  residual_norm=None) -> CorrectionContext:
    """Assemble rho, the projector blocks and the right-hand side for ``res``.

    ``residual_norm`` overrides ``res.residual_norm`` in the ``fixtol`` test
    (the driver passes the residual norm of the deflated pair).
    """
    if residual_norm is None:
        residual_norm = res.residual_norm
    if residual_norm > convergence_bound(res.alpha, res.beta, pair, opts.fixtol):
        rho, mode = opts.target, RhoMode.FIXED_TAU
    else:
        rho, mode = res.theta, RhoMode.DYNAMIC
    y = res.alpha * res.atu + res.beta * res.btv
    if deflation is not None and deflation.j:
        x_p = np.column_stack([deflation.x_c, res.x])
        y_p = np.column_stack([deflation.y_c, y])
    else:
        x_p, y_p = res.x[:, None], y[:, None]
    r = res.residual
    rhs = -(r - y_p @ (x_p.T @ r))
    return CorrectionContext(rho, x_p, y_p, rhs, mode)


def apply_operator(ctx: CorrectionContext, pair: MatrixPair, t) -> np.ndarray:
    s = t - ctx.x_p @ (ctx.y_p.T @ t)
    w = spmv_transpose(pair.a, spmv(pair.a, s)) - ctx.rho**2 * spmv_transpose(pair.b, spmv(pair.b, s))
    return w - ctx.y_p @ (ctx.x_p.T @ w)


def minres(op, b, rtol, maxiter):
    """Unpreconditioned MINRES (Lanczos with Givens rotations) from a zero start.

    Returns ``(x, iterations, estimated_relative_residual)``. Stops when the
    recursively updated residual norm drops below ``rtol * |b|``.
    """
    n = b.shape[0]
    x = np.zeros(n)
    beta1 = np.linalg.norm(b)
    if beta1 == 0:
        return x, 0, 0.0
    eps = np.finfo(float).eps
    r1 = b.copy()
    r2 = b.copy()
    y = b.copy()
    w = np.zeros(n)
    w2 = np.zeros(n)
    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    itn = 0
    while itn < maxiter:
        itn += 1
        v = y / beta
        y = op(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = v @ y
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        oldb, beta = beta, np.linalg.norm(y)
        if not np.isfinite(beta) or not np.isfinite(alfa):
            raise InnerBreakdownError("MINRES produced a non-finite value")
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        if phibar <= rtol * beta1 or beta <= eps * beta1:
            break
    return x, itn, phibar / beta1


def inner_tolerance(opts) -> float:
    return min(2.0 * opts.inner_c * opts.inner_eps, 0.01)


def minres_solve(ctx: CorrectionContext, pair: MatrixPair, opts):
    """Approximate solution ``t`` (orthogonal to Y_p) and the inner iteration count.

    The recursive residual estimate is checked against the true residual; if
    they disagree the solve continues on the remaining residual until the
    inner budget (``opts.max_inner``) is spent.
    """
    n = ctx.rhs.shape[0]
    bnorm = np.linalg.norm(ctx.rhs)
    if bnorm == 0:
        return np.zeros(n), 0
    rtol = inner_tolerance(opts)
    budget = getattr(opts, "max_inner", None) or 2 * n
    op = lambda z: apply_operator(ctx, pair, z)  # noqa: E731

    if getattr(opts, "inner_solver", "minres") == "exact":
        t = _dense_solve(op, ctx.rhs)
        return t - ctx.x_p @ (ctx.y_p.T @ t), 1

    t = np.zeros(n)
    used = 0
    rhs = ctx.rhs
    while used < budget:
        dt, its, _ = minres(op, rhs, rtol * bnorm / np.linalg.norm(rhs), budget - used)
        t = t + dt
        used += its
        rhs = ctx.rhs - op(t)
        if np.linalg.norm(rhs) <= rtol * bnorm or its == 0:
            break
    else:
        log.debug("inner solve hit its cap of %d iterations", budget)
    # op annihilates X_p, so projecting keeps the residual and makes t orthogonal to Y_p
    return t - ctx.x_p @ (ctx.y_p.T @ t), used


def _dense_solve(op, rhs):
    n = rhs.shape[0]
    M = np.column_stack([op(col) for col in np.eye(n)])
    t, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    return t
