"""Ergodic constrained MFG: fixed points of m -> Psi(m).

Psi(m) is the projected Mather measure of L_m = L + F(., m), i.e. a
probability on the grid minimisers of g_m = W + F(., m).  Two schedules are
available for the fixed-point iteration:

* ``constant``: m <- (1 - a) m + a Psi(m), stopped on d1(m_{k+1}, m_k);
* ``harmonic``: fictitious play, a_k = 1/(k + 2), stopped on the
  equilibrium gap <g_m, m> - min g_m.

Constant damping can cycle when Psi jumps between separated atoms, which
happens for Gaussian couplings; the harmonic schedule is the default.  For
kernel couplings the harmonic iterate is finished by an active-set solve
of the equilibrium conditions on the identified support.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonConvergence
from .grid import Grid, GridMeasure
from .hjsolver import DEFAULT_SPEED_CAP, ErgodicSolution, ergodic_solve, velocity_field
from .mather import argmin_nodes, mather_set
from .simplex import simplex_equilibrium
from .model import Coupling, GaussianCoupling, TonelliModel, mean_field_lagrangian, wasserstein1

DEFAULT_TIE_TOL = 1e-9


@dataclass
class ErgodicMfgSolution:
    lambda_bar: float
    u_bar: np.ndarray
    m_bar: GridMeasure
    fixed_point_residual: float
    stationarity_residual: float
    certificate: dict
    model_bar: TonelliModel = field(repr=False)
    ergodic: ErgodicSolution = field(repr=False)
    trace: list = field(default_factory=list, repr=False)
    gap: float = 0.0
    iterations: int = 0
    converged: bool = True


def _static_field(model: TonelliModel, coupling: Coupling, grid: Grid):
    """Closure m_weights -> W + F(., m) on the nodes, linear-algebra fast path for kernels."""
    W = model.static(grid.points)
    if coupling.is_zero:
        return lambda w: W.copy(), None
    if isinstance(coupling, GaussianCoupling):
        Q = coupling.weight * coupling.kernel(grid.points, grid.points)
        return lambda w: W + Q @ w, Q
    return lambda w: W + coupling.field(grid.points, GridMeasure(grid, w)), None


def psi_map(
    model: TonelliModel,
    coupling: Coupling,
    m: GridMeasure,
    selection: bool = False,
    tie_tol: float | None = DEFAULT_TIE_TOL,
) -> GridMeasure:
    """Projected Mather measure of L_m: uniform over grid argmins, or one atom in selection mode."""
    Lm = mean_field_lagrangian(model, coupling, m)
    data = mather_set(Lm, m.grid, tie_tol=tie_tol)
    if selection:
        return GridMeasure.dirac(m.grid, m.grid.points[data.nodes[0]])
    return data.measure


def _polish(W, Q, w0, g0, tie_tol):
    """Exact equilibrium g = W + Q m on the support identified by the iterate."""
    start = np.flatnonzero((w0 > 0) & (g0 <= g0.min() + 1e-3))
    out = simplex_equilibrium(W, Q, start, tol=1e-14)
    return None if out is None else out[0]


def solve_ergodic_mfg(
    model: TonelliModel,
    coupling: Coupling,
    m_init: GridMeasure,
    damping: float = 0.5,
    tol: float = 1e-6,
    max_iter: int = 50_000,
    schedule: str = "harmonic",
    polish: bool = True,
    polish_every: int = 250,
    selection: bool = False,
    dt: float | None = None,
    ergodic_tol: float = 1e-10,
    ergodic_max_iter: int = 200_000,
    tie_tol: float = DEFAULT_TIE_TOL,
    speed_cap: float = DEFAULT_SPEED_CAP,
    n_bumps: int = 25,
    velocity_factor: float = 10.0,
) -> ErgodicMfgSolution:
    """Fixed point of Psi, then the ergodic pair of L_mbar and the certificate."""
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    if schedule not in ("constant", "harmonic"):
        raise ValueError(f"unknown schedule {schedule!r}")
    grid = m_init.grid
    dt = grid.h if dt is None else dt
    # qualification check for the initial measure
    mather_set(mean_field_lagrangian(model, coupling, m_init), grid, tie_tol=tie_tol)
    gfun, Q = _static_field(model, coupling, grid)
    w = m_init.weights.copy()
    trace = []
    converged = False
    k = 0
    W_nodes = model.static(grid.points)
    use_polish = schedule == "harmonic" and polish and Q is not None
    for k in range(max_iter):
        g = gfun(w)
        gap = float(w @ g - g.min())
        if use_polish and k % polish_every == polish_every - 1:
            wp = _polish(W_nodes, Q, w, g, tie_tol)
            if wp is not None:
                gp = gfun(wp)
                if float(wp @ gp - gp.min()) <= tol:
                    w, converged = wp, True
                    trace.append({"d1_step": float("nan"), "gap": float(wp @ gp - gp.min())})
                    break
        S = argmin_nodes(g, tie_tol)
        psi = np.zeros(grid.size)
        if selection:
            psi[S[0]] = 1.0
        else:
            psi[S] = 1.0 / S.size
        a = damping if schedule == "constant" else 1.0 / (k + 2)
        if coupling.is_zero:
            a = 1.0  # Psi does not depend on m
        w_new = (1 - a) * w + a * psi
        if schedule == "constant" or grid.dim == 1:
            step = wasserstein1(GridMeasure.from_weights(grid, w_new), GridMeasure.from_weights(grid, w))
        else:
            step = float("nan")  # an LP per iteration is too costly in 2D and unused here
        trace.append({"d1_step": step, "gap": gap})
        if schedule == "constant" and step <= tol:
            w, converged = w_new, True
            break
        if schedule == "harmonic" and gap <= tol:
            converged = True
            break
        w = w_new
    if use_polish and not converged:
        g = gfun(w)
        wp = _polish(W_nodes, Q, w, g, tie_tol)
        if wp is not None:
            gp = gfun(wp)
            if float(wp @ gp - gp.min()) <= tol:
                w, converged = wp, True
    m_bar = GridMeasure.from_weights(grid, w)
    g = gfun(m_bar.weights)
    gap = float(m_bar.weights @ g - g.min())
    L_bar = mean_field_lagrangian(model, coupling, m_bar)
    lam = -float(np.min(L_bar.static(grid.points)))
    erg = ergodic_solve(L_bar, grid, dt, tol=ergodic_tol, max_iter=ergodic_max_iter, speed_cap=speed_cap)
    psi_bar = psi_map(model, coupling, m_bar, selection=selection, tie_tol=tie_tol)
    fp_res = wasserstein1(m_bar, psi_bar)
    cert = certify(m_bar, erg, L_bar, lam, fp_res, tol, n_bumps, velocity_factor)
    cert["equilibrium_gap"] = gap
    cert["schedule"] = schedule
    cert["iterations"] = k + 1
    sol = ErgodicMfgSolution(
        lambda_bar=lam,
        u_bar=erg.u,
        m_bar=m_bar,
        fixed_point_residual=fp_res,
        stationarity_residual=cert["stationarity_residual"],
        certificate=cert,
        model_bar=L_bar,
        ergodic=erg,
        trace=trace,
        gap=gap,
        iterations=k + 1,
        converged=converged,
    )
    if not converged:
        raise NonConvergence(
            f"{schedule} fixed-point iteration did not reach tol {tol:g} in {max_iter} steps",
            residual=trace[-1]["d1_step" if schedule == "constant" else "gap"],
            trace=trace,
            result=sol,
        )
    return sol


def bump_basis(grid: Grid, centers: np.ndarray, radius: float):
    """Smooth tensor-product bumps phi(s) = exp(-1/(1 - s^2)), scaled to unit Lipschitz.

    Returns a function mapping node ids to gradients of shape (n_bumps, n_nodes, d).
    """
    s = np.linspace(-1 + 1e-9, 1 - 1e-9, 20001)
    phi = np.exp(-1.0 / (1.0 - s * s))
    dphi = phi * (-2.0 * s / (1.0 - s * s) ** 2)
    # sup |grad f| of the tensor product is at most sqrt(d) * max|phi'| * max(phi)^(d-1) / radius
    lip = np.sqrt(grid.dim) * np.max(np.abs(dphi)) * np.max(phi) ** (grid.dim - 1) / radius

    def grads(nodes):
        x = grid.points[nodes]
        z = (x[None, :, :] - centers[:, None, :]) / radius
        inside = np.abs(z) < 1
        zz = np.where(inside, z, 0.0)
        p = np.where(inside, np.exp(-1.0 / (1.0 - zz * zz)), 0.0)
        dp = np.where(inside, p * (-2.0 * zz / (1.0 - zz * zz) ** 2), 0.0) / radius
        out = np.empty_like(z)
        for a in range(grid.dim):
            others = np.prod(np.delete(p, a, axis=-1), axis=-1) if grid.dim > 1 else 1.0
            out[..., a] = dp[..., a] * others
        return out / lip

    return grads


def continuity_residual(m: GridMeasure, V: np.ndarray, n_bumps: int = 25, radius_cells: float = 3.0) -> float:
    """max over bumps f of |sum_x <Df(x), V(x)> m(x)|, bumps centred on interior nodes nearest supp m."""
    grid = m.grid
    supp = m.support
    interior = np.flatnonzero(~grid.boundary)
    dist = np.min(np.linalg.norm(grid.points[interior, None, :] - grid.points[None, supp, :], axis=-1), axis=1)
    order = np.lexsort((interior, dist))
    centers = grid.points[interior[order[:n_bumps]]]
    grads = bump_basis(grid, centers, radius_cells * grid.h)(supp)
    res = np.einsum("bnd,nd,n->b", grads, V, m.weights[supp])
    return float(np.max(np.abs(res)))


def certify(m_bar, erg, L_bar, lam, fp_res, tol, n_bumps=25, velocity_factor=10.0) -> dict:
    grid = m_bar.grid
    h = grid.h
    supp = m_bar.support
    V = velocity_field(erg, L_bar, supp)
    vmax = float(np.max(np.linalg.norm(V, axis=1))) if supp.size else 0.0
    stat = continuity_residual(m_bar, V, n_bumps)
    tol_stat = velocity_factor * h
    return {
        "lambda_bar": lam,
        "support_nodes": supp.tolist(),
        "support_points": grid.points[supp].tolist(),
        "support_weights": m_bar.weights[supp].tolist(),
        "hj_residual": erg.residual,
        "hj_residual_ok": erg.residual <= 1e-8 * erg.dt,
        "hj_critical_value": erg.critical_value,
        "lambda_consistency": abs(lam - erg.critical_value),
        "lambda_consistency_ok": abs(lam - erg.critical_value) <= 3 * (h + erg.dt),
        "max_support_speed": vmax,
        "velocity_ok": vmax <= velocity_factor * h,
        "stationarity_residual": stat,
        "stationarity_ok": stat <= tol_stat,
        "fixed_point_residual": fp_res,
        "fixed_point_ok": fp_res <= 2 * h,
    }


def uniqueness_check(sol1: ErgodicMfgSolution, sol2: ErgodicMfgSolution, coupling: Coupling):
    """(sup |F(., m1) - F(., m2)|, |lambda1 - lambda2|) on the grid nodes."""
    pts = sol1.m_bar.grid.points
    dF = coupling.field(pts, sol1.m_bar) - coupling.field(pts, sol2.m_bar)
    return float(np.max(np.abs(dF))), abs(sol1.lambda_bar - sol2.lambda_bar)
