"""Acceptance criteria. Each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest
import scipy.linalg as sla

from jdgsvd import MatrixPair, Method, SolverOptions, solve
from jdgsvd.cli import run_cli
from jdgsvd.correction import apply_operator, build_context, minres
from jdgsvd.driver import DeflationSet, deflate_append, restart_coefficients
from jdgsvd.extraction import extract
from jdgsvd.io import generate_b, generate_planted_pair, random_sparse
from jdgsvd.sparse import btb_cholesky
from jdgsvd.subspace import check_invariants, expand, init_subspace
from oracles import dense_gsvd, dense_sigmas, pick_tau, planted_cond, planted_spectrum, vector_angle

METHODS = list(Method)
ELL = 5


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}")
    return emit


def _gram_products(A, B, X):
    return A.T @ (A @ X) + B.T @ (B @ X)


@pytest.fixture(scope="module")
def planted_runs():
    """The 60 oracle-equivalence solves, with deflation audits taken during each run."""
    runs = []
    total = 0.0
    for method in METHODS:
        for seed in range(20):
            sig = planted_spectrum(seed)
            pair, true = generate_planted_pair(60, 50, 40, sig, planted_cond(seed), seed)
            tau = pick_tau(sig, ELL)
            A, B = pair.a.toarray(), pair.b.toarray()
            audit = {"biorth": 0.0, "x_tilde": 0.0, "events": 0}

            def observer(kind, info, A=A, B=B, audit=audit):
                dset = info["dset"]
                if kind == "converge":
                    y_c = _gram_products(A, B, dset.x_c)
                    err = np.abs(dset.x_c.T @ y_c - np.eye(dset.j)).max()
                    audit["biorth"] = max(audit["biorth"], err)
                    audit["events"] += 1
                elif kind == "purge":
                    y_c = _gram_products(A, B, dset.x_c)
                    err = np.abs(info["state"].x_basis.T @ y_c).max()
                    audit["x_tilde"] = max(audit["x_tilde"], err)

            opts = SolverOptions(target=tau, num_components=ELL, method=method, tol=1e-8,
                                 seed=seed, inner_eps=1e-6, max_inner=10 * pair.n)
            t0 = time.perf_counter()
            res = solve(pair, opts, observer=observer)
            total += time.perf_counter() - t0
            runs.append(dict(method=method, seed=seed, pair=pair, true=true, tau=tau, res=res,
                             audit=audit, tol=opts.tol))
    return runs, total


def test_criterion_1_oracle_equivalence(planted_runs, report):
    runs, total = planted_runs
    failures = []
    worst_sigma = worst_angle = 0.0
    for run in runs:
        res, true, tau = run["res"], run["true"], run["tau"]
        ts = np.array([c.sigma for c in true])
        want = np.argsort(np.abs(ts - tau))[:ELL]
        if not res.converged or len(res.components) != ELL:
            failures.append((run["method"].value, run["seed"], "not converged"))
            continue
        if sorted(want) != sorted(int(np.argmin(np.abs(ts - s))) for s in res.sigmas):
            failures.append((run["method"].value, run["seed"], "wrong set"))
            continue
        for c in res.components:
            i = int(np.argmin(np.abs(ts - c.sigma)))
            rel = abs(c.sigma - ts[i]) / ts[i]
            ang = vector_angle(c.x, true[i].x)
            worst_sigma, worst_angle = max(worst_sigma, rel), max(worst_angle, ang)
            if rel > 1e-6 or ang > 1e-5:
                failures.append((run["method"].value, run["seed"], f"rel {rel:.1e} ang {ang:.1e}"))
    ok = not failures and total < 30.0
    report(1, ok, f"{len(runs)} planted solves, worst sigma rel err {worst_sigma:.1e}, "
                  f"worst angle {worst_angle:.1e}, {total:.1f} s, failures {failures}")
    assert not failures
    assert total < 30.0


def test_criterion_2_residual_certificate(planted_runs, report):
    runs, _ = planted_runs
    violations = 0
    checked = 0
    worst = 0.0
    for run in runs:
        pair, tol = run["pair"], run["tol"]
        A, B = pair.a.toarray(), pair.b.toarray()
        na, nb = np.abs(A).sum(axis=0).max(), np.abs(B).sum(axis=0).max()
        for c in run["res"].components:
            # rebuild everything from x alone
            ax, bx = A @ c.x, B @ c.x
            alpha, beta = np.linalg.norm(ax), np.linalg.norm(bx)
            scale = np.hypot(alpha, beta)
            alpha, beta = alpha / scale, beta / scale
            u, v = ax / np.linalg.norm(ax), bx / np.linalg.norm(bx)
            r = beta * A.T @ u - alpha * B.T @ v
            ratio = np.linalg.norm(r) / ((beta * na + alpha * nb) * tol)
            worst = max(worst, ratio)
            violations += ratio > 1.0
            checked += 1
    report(2, violations == 0, f"{checked} components re-verified, {violations} violations, "
                               f"worst |r|/bound {worst:.2f}")
    assert violations == 0


def test_criterion_3_cross_product_free_invariant(report):
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(500 + seed)
        n = int(rng.integers(5, 41))
        m, p = n + int(rng.integers(0, 10)), n + int(rng.integers(0, 10))
        A = rng.standard_normal((m, n))
        B = rng.standard_normal((p, n)) + 2 * np.eye(p, n)
        pair = MatrixPair(A, B)
        L = btb_cholesky(pair.b).to_dense()
        M = A @ sla.solve_triangular(L, np.eye(n), lower=True).T
        norm_a = np.linalg.norm(A, 2)
        for c in dense_gsvd(A, B):
            z = L.T @ c.x / c.beta
            r1 = np.linalg.norm(M @ z - c.sigma * c.u)
            r2 = np.linalg.norm(M.T @ c.u - c.sigma * z)
            worst = max(worst, r1 / norm_a, r2 / norm_a)
    ok = worst <= 1e-9
    report(3, ok, f"10 random full-rank B, worst residual / |A| = {worst:.1e} (limit 1e-9)")
    assert ok


def _snapshot_states(count):
    """Subspaces built from a few power steps plus noise, for both harmonic extractions."""
    for i in range(count):
        rng = np.random.default_rng(900 + i)
        method = Method.CPF_HARMONIC if i % 2 == 0 else Method.IF_HARMONIC
        m, n = 40, 30
        A = rng.standard_normal((m, n))
        B = rng.standard_normal((n, n)) + 4 * np.eye(n)
        pair = MatrixPair(A, B)
        k = int(rng.integers(2, 12))
        X = rng.standard_normal((n, 2))
        Mop = np.linalg.solve(B.T @ B, A.T @ A)
        cols = [X]
        while sum(c.shape[1] for c in cols) < k:
            X = np.linalg.qr(Mop @ X + 0.1 * rng.standard_normal(X.shape))[0]
            cols.append(X)
        cols = np.column_stack(cols)[:, :k]
        opts = SolverOptions(target=1.0, method=method)
        factor = btb_cholesky(pair.b) if method is Method.CPF_HARMONIC else None
        s = init_subspace(pair, cols[:, 0], opts, btb_factor=factor)
        for j in range(1, k):
            s = expand(s, cols[:, j], pair, opts)
        sig = dense_sigmas(A, B)
        tau = float(rng.uniform(sig.min(), sig.max()))
        yield pair, A, B, s, tau


def test_criterion_4_rayleigh_quotient_optimality(report):
    violations = 0
    worst = -np.inf
    used = 0
    for pair, A, B, state, tau in _snapshot_states(100):
        res = extract(state, pair, tau)
        if res.fallback:
            continue
        used += 1
        W = np.linalg.inv(B.T @ B)

        def wnorm(mu, x=res.x):
            z = (A.T @ A - mu**2 * B.T @ B) @ x
            return np.sqrt(z @ W @ z)

        gap = wnorm(res.theta) - wnorm(res.phi)
        worst = max(worst, gap)
        violations += gap > 1e-12
        if used == 50:
            break
    assert used == 50
    report(4, violations == 0, f"{used} harmonic snapshots, {violations} violations, "
                               f"max(lhs - rhs) = {worst:.1e}")
    assert violations == 0


def test_criterion_5_deflation_algebra(planted_runs, report):
    runs, _ = planted_runs
    biorth = max(r["audit"]["biorth"] for r in runs)
    x_tilde = max(r["audit"]["x_tilde"] for r in runs)
    events = sum(r["audit"]["events"] for r in runs)
    not_distinct = 0
    for run in runs:
        comps = run["res"].components
        for i in range(len(comps)):
            for j in range(i):
                ang = vector_angle(comps[i].x, comps[j].x)
                gap = abs(comps[i].sigma - comps[j].sigma)
                not_distinct += not (ang > 1e-4 or gap > 1e-6)
    ok = biorth <= 1e-10 and x_tilde <= 1e-10 and not_distinct == 0
    report(5, ok, f"{events} convergence events, max |X_c^T Y_c - I| = {biorth:.1e}, "
                  f"max |X~^T Y_c| = {x_tilde:.1e}, non-distinct pairs {not_distinct}")
    assert ok


def test_criterion_6_thick_restart_fidelity(report):
    worst_proj = worst_inv = 0.0
    restarts = 0
    for seed, method in [(s, m) for s in (11, 12, 13) for m in METHODS]:
        n = 300
        pair = MatrixPair(random_sparse(n, n, 0.01, seed), generate_b("T", n))
        tau = float(np.percentile(dense_sigmas(pair.a.toarray(), pair.b.toarray()), 60))

        def observer(kind, info):
            nonlocal worst_proj, worst_inv, restarts
            if kind != "restart":
                return
            prev, new, res = info["previous"], info["state"], info["res"]
            kept = prev.x_basis @ restart_coefficients(res, 3)
            Qk, _ = np.linalg.qr(kept)
            Pk = Qk @ Qk.T
            Pn = new.x_basis @ new.x_basis.T
            worst_proj = max(worst_proj, np.abs(Pk - Pn).max())
            worst_inv = max(worst_inv, max(check_invariants(new, pair).values()))
            restarts += 1

        res = solve(pair, SolverOptions(target=tau, num_components=ELL, method=method, k_max=12,
                                        k_min=3), observer=observer)
        assert res.converged
    ok = restarts > 0 and worst_proj <= 1e-12 and worst_inv <= 1e-9
    report(6, ok, f"{restarts} forced restarts, projector diff {worst_proj:.1e}, "
                  f"factorization invariants {worst_inv:.1e}")
    assert ok


def test_criterion_7_minres_suite(report):
    worst_res = worst_err = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 101))
        d = rng.uniform(0.1, 10.0, n) * rng.choice([-1.0, 1.0], n)
        b = rng.standard_normal(n)
        x, _, _ = minres(lambda v, d=d: d * v, b, 1e-10, 20 * n)
        direct = np.linalg.solve(np.diag(d), b)
        worst_res = max(worst_res, np.linalg.norm(d * x - b) / np.linalg.norm(b))
        worst_err = max(worst_err, np.linalg.norm(x - direct) / np.linalg.norm(direct))

    worst_sym = 0.0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        n = 50
        pair = MatrixPair(random_sparse(n + 5, n, 0.1, seed), generate_b("T", n))
        opts = SolverOptions(target=float(rng.uniform(0.5, 2.0)), method="standard")
        s = init_subspace(pair, rng.standard_normal(n), opts)
        for _ in range(5):
            s = expand(s, rng.standard_normal(n), pair, opts)
        res = extract(s, pair, opts.target)
        dset = deflate_append(DeflationSet.empty(pair.m, pair.p, n), res, pair)
        s2 = init_subspace(pair, rng.standard_normal(n), opts, locked=dset.y_basis)
        for _ in range(4):
            s2 = expand(s2, rng.standard_normal(n), pair, opts)
        res2 = extract(s2, pair, opts.target)
        ctx = build_context(res2, dset, pair, opts)
        scale = pair.a.one_norm_cache**2 + ctx.rho**2 * pair.b.one_norm_cache**2
        for _ in range(5):
            p, q = rng.standard_normal(n), rng.standard_normal(n)
            p, q = p / np.linalg.norm(p), q / np.linalg.norm(q)
            asym = abs(p @ apply_operator(ctx, pair, q) - q @ apply_operator(ctx, pair, p))
            worst_sym = max(worst_sym, asym / scale)
    ok = worst_res <= 1e-8 and worst_err <= 1e-8 and worst_sym <= 1e-11
    report(7, ok, f"20 diagonal systems, worst rel residual {worst_res:.1e}, worst rel error "
                  f"vs direct {worst_err:.1e}; operator asymmetry {worst_sym:.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_8_desk_scale_comparison(report, capsys):
    rows = []
    all_converged = True
    for seed in range(10):
        n = 500
        pair = MatrixPair(random_sparse(n, n, 0.01, seed), generate_b("T", n))
        sig = dense_sigmas(pair.a.toarray(), pair.b.toarray())
        tau = float(np.percentile(sig, 60))
        row = {"seed": seed, "tau": tau}
        for method in METHODS:
            res = solve(pair, SolverOptions(target=tau, num_components=ELL, method=method,
                                            seed=seed))
            all_converged &= res.converged
            row[method] = res
        rows.append(row)

    names = {Method.STANDARD: "CPF", Method.CPF_HARMONIC: "CPFH", Method.IF_HARMONIC: "IFH"}
    lines = ["seed   tau     " + "  ".join(f"{names[m]:>4}:I_out  I_in  T_cpu" for m in METHODS)]
    for row in rows:
        cells = [f"{row[m].outer_iterations:>10d} {row[m].inner_iterations:>5d} "
                 f"{row[m].wall_seconds:>6.2f}" for m in METHODS]
        lines.append(f"{row['seed']:>4d}  {row['tau']:.4f} " + "  ".join(cells))
    wins = sum(r[Method.IF_HARMONIC].outer_iterations <= r[Method.STANDARD].outer_iterations
               for r in rows)
    with capsys.disabled():
        print("\n" + "\n".join(lines))
        print(f"informational: IF-HJDGSVD I_out <= CPF-JDGSVD I_out in {wins}/{len(rows)} runs")
    report(8, all_converged, f"30 solves at n = 500, all converged: {all_converged}")
    assert all_converged


def test_criterion_9_cpfh_precondition_gate(report, capsys):
    code = run_cli(["--a", "random_sparse", "--n", "100", "--b-gen", "L1", "--target", "1",
                    "--method", "cpfh"])
    err = capsys.readouterr().err
    ok = code == 4 and "CPF-HJDGSVD cannot be applied" in err
    report(9, ok, f"exit code {code}, message: {err.strip()!r}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
