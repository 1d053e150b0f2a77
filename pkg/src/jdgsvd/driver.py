"""Outer Jacobi-Davidson loop with thick restart, deflation and purgation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    ConvergenceTrace,
    Event,
    GsvdComponent,
    GsvdError,
    MatrixPair,
    Method,
    MethodPreconditionError,
    PartialGsvdResult,
    RankDeficientError,
    RhoMode,
    SolverOptions,
    TraceRecord,
    order_by_target,
)
from .correction import build_context, minres_solve
from .dense import orthogonalize, thin_qr
from .extraction import ExtractionResult, convergence_bound, extract
from .sparse import CgConvergenceError, btb_cholesky, btb_solve, spmv, spmv_transpose
from .subspace import (
    StagnationError,
    check_invariants,
    expand,
    init_subspace,
    purge,
    thick_restart,
    with_locked,
)

log = logging.getLogger(__name__)

LOCK_PATIENCE = 3
CPF_RANK_MESSAGE = "CPF-HJDGSVD cannot be applied: B is rank deficient"


class DeflationError(GsvdError):
    pass


@dataclass(frozen=True, eq=False)
class DeflationSet:
    """Converged partial GSVD with Y_c = (A^T A + B^T B) X_c.

    ``y_basis`` is an orthonormal basis of span(Y_c), used to keep new
    search directions orthogonal to Y_c.
    """

    c_c: np.ndarray
    s_c: np.ndarray
    u_c: np.ndarray
    v_c: np.ndarray
    x_c: np.ndarray
    y_c: np.ndarray
    y_basis: np.ndarray

    @classmethod
    def empty(cls, m, p, n):
        z = np.zeros(0)
        return cls(z, z, np.zeros((m, 0)), np.zeros((p, 0)), np.zeros((n, 0)),
                   np.zeros((n, 0)), np.zeros((n, 0)))

    @property
    def j(self) -> int:
        return self.x_c.shape[1]

    def biorthogonality_error(self) -> float:
        if not self.j:
            return 0.0
        return float(np.abs(self.x_c.T @ self.y_c - np.eye(self.j)).max())


def deflate_append(dset: DeflationSet, res: ExtractionResult, pair: MatrixPair) -> DeflationSet:
    """Lock a converged approximation into the deflation set."""
    y = res.alpha * res.atu + res.beta * res.btv
    x_c = np.column_stack([dset.x_c, res.x])
    y_c = np.column_stack([dset.y_c, y])
    new = DeflationSet(
        np.append(dset.c_c, res.alpha),
        np.append(dset.s_c, res.beta),
        np.column_stack([dset.u_c, res.u]),
        np.column_stack([dset.v_c, res.v]),
        x_c,
        y_c,
        thin_qr(y_c, fill=True).q,
    )
    err = new.biorthogonality_error()
    if err > 1e-6:
        raise DeflationError(f"X_c^T Y_c deviates from I by {err:.2e}; subspace contaminated")
    return new


def initial_vector(opts: SolverOptions, pair: MatrixPair, rng) -> np.ndarray:
    choice = opts.initial_vector
    n = pair.n
    if choice is None:
        choice = "ones" if pair.p == n else "mod4"
    if isinstance(choice, str):
        if choice == "ones":
            v = np.ones(n)
        elif choice == "mod4":
            v = (np.arange(1, n + 1) % 4).astype(float)
        elif choice == "random":
            v = rng.standard_normal(n)
        else:
            raise ValueError(f"unknown initial vector generator {choice!r}")
    else:
        v = np.asarray(choice, dtype=np.float64).ravel()
        if v.shape[0] != n:
            raise ValueError("initial vector must have length n")
    return v / np.linalg.norm(v)


def prepare_btb(pair: MatrixPair, opts: SolverOptions):
    """Factor (or probe) B^T B for the cross product-free harmonic extraction."""
    if pair.p < pair.n:
        raise MethodPreconditionError(CPF_RANK_MESSAGE)
    if opts.btb_solve == "banded_cholesky":
        try:
            return btb_cholesky(pair.b, opts.bandwidth_limit)
        except RankDeficientError as exc:
            raise MethodPreconditionError(f"{CPF_RANK_MESSAGE} ({exc})") from exc
    # CG path: a trial solve exposes rank deficiency or hopeless conditioning
    probe = spmv_transpose(pair.b, spmv(pair.b, np.random.default_rng(opts.seed).standard_normal(pair.n)))
    try:
        btb_solve(pair.b, None, probe, opts)
    except CgConvergenceError as exc:
        raise MethodPreconditionError(f"{CPF_RANK_MESSAGE} (CG probe: {exc})") from exc
    return None


def restart_coefficients(res: ExtractionResult, k_min: int) -> np.ndarray:
    """Up to ``k_min`` independent coefficient vectors nearest the target."""
    kept = []
    basis = np.zeros((res.d.shape[0], 0))
    for theta, d in [(res.theta, res.d)] + list(res.all_candidates):
        if not np.isfinite(theta) or theta <= 0:
            continue
        w, _ = orthogonalize(d / np.linalg.norm(d), basis)
        if np.linalg.norm(w) < 1e-8:
            continue
        kept.append(d)
        basis = np.column_stack([basis, w / np.linalg.norm(w)])
        if len(kept) == k_min:
            break
    return np.column_stack(kept)


def _polish(x, pair: MatrixPair, tol):
    """Rebuild a component from fresh products with A and B."""
    ax, bx = spmv(pair.a, x), spmv(pair.b, x)
    na, nb = np.linalg.norm(ax), np.linalg.norm(bx)
    scale = 1.0 / np.hypot(na, nb)
    x = x * scale
    alpha, beta = na * scale, nb * scale
    u, v = ax / na, bx / nb
    r = beta * spmv_transpose(pair.a, u) - alpha * spmv_transpose(pair.b, v)
    rnorm = float(np.linalg.norm(r))
    comp = GsvdComponent(alpha, beta, u, v, x, rnorm)
    return comp, rnorm <= convergence_bound(alpha, beta, pair, tol)


class _Run:
    """Mutable bookkeeping of one solve."""

    def __init__(self, pair, opts):
        self.pair = pair
        self.opts = opts
        self.trace = ConvergenceTrace()
        self.outer = 0
        self.inner = 0
        self.snapshots = []

    def record(self, res, dset, rel, inner_iters, mode, event):
        self.trace.append(TraceRecord(
            outer_iter=self.outer,
            component_index=dset.j,
            theta=float(res.theta),
            alpha=float(res.alpha),
            beta=float(res.beta),
            rel_residual=float(rel),
            inner_iters=int(inner_iters),
            rho_mode=mode,
            event=event,
        ))


def solve(pair: MatrixPair, opts: SolverOptions, *, observer=None) -> PartialGsvdResult:
    """Compute the ``opts.num_components`` GSVD components nearest ``opts.target``.

    ``observer``, when given, is called as ``observer(kind, info)`` after every
    restart, purge and convergence event, with ``info`` holding the current
    ``state``, the deflation set ``dset`` and, for restarts, the extraction
    ``res`` and the ``previous`` state. Tests use it to audit the subspace
    algebra.
    """
    start = time.perf_counter()
    if not isinstance(pair, MatrixPair):
        pair = MatrixPair(*pair)
    opts = opts.resolved(pair.n)
    tau, ell = opts.target, opts.num_components
    rng = np.random.default_rng(opts.seed)

    factor = prepare_btb(pair, opts) if opts.method is Method.CPF_HARMONIC else None
    state = init_subspace(pair, initial_vector(opts, pair, rng), opts, btb_factor=factor, rng=rng)
    dset = DeflationSet.empty(pair.m, pair.p, pair.n)
    run = _Run(pair, opts)
    norm_a, norm_b = pair.a.one_norm_cache, pair.b.one_norm_cache

    def fresh_state(x=None):
        g = rng.standard_normal(pair.n)
        if x is not None:
            g = x / np.linalg.norm(x) + 1e-3 * g / np.linalg.norm(g)
        return init_subspace(pair, g, opts, btb_factor=factor, locked=dset.y_basis, rng=rng)

    below_tol = 0
    while run.outer < opts.max_outer and dset.j < ell:
        run.outer += 1
        res = extract(state, pair, tau)
        rnorm = res.residual_norm
        rel = rnorm / (res.beta * norm_a + res.alpha * norm_b)
        # a component that has passed tol for LOCK_PATIENCE iterations is locked at tol
        passes_tol = rnorm <= convergence_bound(res.alpha, res.beta, pair, opts.tol)
        below_tol = below_tol + 1 if passes_tol else 0
        last = dset.j + 1 == ell
        lock_tol = opts.tol if last or below_tol > LOCK_PATIENCE else opts.tol * opts.lock_factor
        converged = rnorm <= convergence_bound(res.alpha, res.beta, pair, lock_tol)

        if converged:
            dset = deflate_append(dset, res, pair)
            below_tol = 0
            run.record(res, dset, rel, 0, RhoMode.DYNAMIC, Event.CONVERGE)
            if observer:
                observer("converge", {"state": state, "dset": dset, "res": res})
            if dset.j == ell:
                break
            if state.k > 1:
                state = with_locked(purge(state, res.d, pair, opts), dset.y_basis)
            else:
                state = fresh_state()
            if observer:
                observer("purge", {"state": state, "dset": dset})
            continue

        event = Event.EXPAND
        if state.k >= opts.k_max:
            previous = state
            state = thick_restart(state, restart_coefficients(res, opts.k_min), pair, opts)
            event = Event.RESTART
            if observer:
                observer("restart", {"state": state, "dset": dset, "res": res,
                                     "previous": previous})

        ctx = build_context(res, dset, pair, opts, residual_norm=rnorm)
        t, its = minres_solve(ctx, pair, opts)
        run.inner += its
        try:
            state = expand(state, t, pair, opts)
        except StagnationError:
            log.info("stagnated expansion at outer iteration %d; restarting from perturbed x",
                     run.outer)
            state = fresh_state(res.x)
        run.record(res, dset, rel, its, ctx.rho_mode, event)
        if opts.check_invariants:
            bad = {k: v for k, v in check_invariants(state, pair, dset.y_c).items() if v > 1e-8}
            if bad:
                log.warning("subspace invariants drifted: %s", bad)

    components = []
    all_pass = True
    for i in range(dset.j):
        comp, ok = _polish(dset.x_c[:, i], pair, opts.tol)
        components.append(comp)
        all_pass &= ok
    order = order_by_target([c.sigma for c in components], tau)
    components = [components[i] for i in order]
    return PartialGsvdResult(
        components=components,
        outer_iterations=run.outer,
        inner_iterations=run.inner,
        trace=run.trace,
        converged=bool(dset.j == ell and all_pass),
        method=opts.method,
        wall_seconds=time.perf_counter() - start,
    )
