"""Equilibria on a probability simplex with affine costs.

Find w >= 0, sum w = 1 such that the cost vector c + A w is minimal and
constant on supp w.  This is the equilibrium condition of a population
game with affine payoffs; for symmetric positive semidefinite A it is the
KKT system of the convex quadratic program min c.w + w.A.w / 2.
"""
from __future__ import annotations

import numpy as np


def simplex_equilibrium(c, A, support=None, tol: float = 1e-12, max_iter: int = 500):
    """Active-set solve; returns (w, lam) or None when the active set cycles.

    Start from ``support`` (or the cheapest index), drop the most negative
    weight, add the most violated index, until the conditions hold up to
    ``tol`` (relative to the cost scale).
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    n = c.size
    S = sorted(set(int(i) for i in (support if support is not None else [])) | {int(np.argmin(c))})
    scale = tol * (1.0 + np.max(np.abs(c)))
    seen = set()
    for _ in range(max_iter):
        key = tuple(S)
        if key in seen:
            return None
        seen.add(key)
        k = len(S)
        M = np.zeros((k + 1, k + 1))
        M[:k, :k] = A[np.ix_(S, S)]
        M[:k, k] = -1.0
        M[k, :k] = 1.0
        rhs = np.concatenate([-c[S], [1.0]])
        sol = np.linalg.lstsq(M, rhs, rcond=None)[0]
        wS, lam = sol[:k], sol[k]
        if wS.min() < -1e-13:
            S.pop(int(np.argmin(wS)))
            continue
        w = np.zeros(n)
        w[S] = np.maximum(wS, 0.0)
        w /= w.sum()
        g = c + A @ w
        j = int(np.argmin(g))
        if g[j] < float(g[S].min()) - scale and j not in S:
            S = sorted(S + [j])
            continue
        return w, float(g[S].min())
    return None
