"""Independent dense oracles and shared fixtures for the test suite."""

import numpy as np
import scipy.linalg as sla

from jdgsvd import GsvdComponent


def dense_gsvd(A, B):
    """All GSVD components of a small regular pair with square-or-tall B of full rank.

    Solves A^T A x = sigma^2 B^T B x with LAPACK and rescales x to unit
    (A^T A + B^T B)-norm. Returned ascending in sigma.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    lam, X = sla.eigh(A.T @ A, B.T @ B)
    comps = []
    for i in range(lam.size):
        x = X[:, i]
        ax, bx = A @ x, B @ x
        scale = 1.0 / np.hypot(np.linalg.norm(ax), np.linalg.norm(bx))
        x, ax, bx = x * scale, ax * scale, bx * scale
        alpha, beta = np.linalg.norm(ax), np.linalg.norm(bx)
        comps.append(GsvdComponent(alpha, beta, ax / alpha, bx / beta, x, 0.0))
    return comps


def dense_sigmas(A, B):
    lam = sla.eigh(np.asarray(A).T @ np.asarray(A), np.asarray(B).T @ np.asarray(B),
                   eigvals_only=True)
    return np.sqrt(np.clip(lam, 0, None))


def nearest(sigmas, tau, ell):
    sigmas = np.asarray(sigmas)
    return sigmas[np.argsort(np.abs(sigmas - tau), kind="stable")[:ell]]


def vector_angle(x, y):
    """Angle between span(x) and span(y), accurate for small angles."""
    x = x / np.linalg.norm(x)
    y = y / np.linalg.norm(y)
    if x @ y < 0:
        y = -y
    return 2.0 * np.arcsin(min(np.linalg.norm(x - y) / 2.0, 1.0))


def pick_tau(sig, ell, margin=1.1):
    """An interior target whose ell nearest values agree in sigma and in sigma^2.

    The inverse-free harmonic extraction ranks by |sigma^2 - tau^2|, so the
    target is placed where both rankings select the same set with a clear
    margin to the next value.
    """
    s = np.sort(np.asarray(sig))
    mid = len(s) // 2
    for lo in (mid, mid - 1, mid + 1, mid - 2, mid + 2):
        for frac in np.linspace(0.1, 0.9, 9):
            tau = s[lo] + frac * (s[lo + 1] - s[lo])
            ok = True
            for dist in (np.abs(s - tau), np.abs(s**2 - tau**2)):
                ds = np.sort(dist)
                ok &= ds[ell] >= margin * ds[ell - 1]
            same = set(np.argsort(np.abs(s - tau))[:ell]) == set(
                np.argsort(np.abs(s**2 - tau**2))[:ell])
            if ok and same:
                return float(tau)
    raise RuntimeError("no admissible interior target")


def planted_spectrum(seed, n=40):
    """Separated spectrum (gaps of at least 0.05) used by the planted-pair suite."""
    rng = np.random.default_rng(1000 + seed)
    return 0.2 + np.arange(n) * 0.12 + rng.uniform(0, 0.07, n)


def planted_cond(seed, count=20, max_cond=1e3):
    return 10 ** (np.log10(max_cond) * seed / (count - 1))
