"""Finite-horizon constrained MFG: mild solutions by fictitious play.

A strategy is stored as an edge flux ``flux[n, x, k]``: the mass moving
during step n from node x to its k-th stencil neighbour.  Its marginals
are the measure path and its running cost is linear in the flux, so both
averaging and the exploitability computation are exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonConvergence
from .grid import Grid, GridMeasure
from .hjsolver import (
    DEFAULT_SPEED_CAP,
    CouplingCosts,
    LaxOleinikOperator,
    _horizon_steps,
    _weights_array,
    backward_sweep,
)
from .model import Coupling, TonelliModel
from .simplex import simplex_equilibrium

TIE_TOL = 1e-12


@dataclass
class MildSolutionPath:
    T: float
    dt: float
    grid: Grid
    values: np.ndarray  # (N+1, n)
    measures: np.ndarray  # (N+1, n)
    flux: np.ndarray = field(repr=False)  # (N, n, K)
    exploitability_trace: list = field(default_factory=list)
    converged: bool = True
    operator: LaxOleinikOperator = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def exploitability(self) -> float:
        return self.exploitability_trace[-1] if self.exploitability_trace else float("nan")

    def measure(self, n: int) -> GridMeasure:
        return GridMeasure.from_weights(self.grid, self.measures[n])


def stay_flux(op: LaxOleinikOperator, m0: np.ndarray, N: int) -> np.ndarray:
    flux = np.zeros((N,) + op.neighbors.shape)
    flux[:, :, 0] = m0  # offset 0 is the zero move
    return flux


def forward_rollout(op: LaxOleinikOperator, costs: CouplingCosts, U: np.ndarray, m0: np.ndarray, tie_tol=TIE_TOL):
    """Push m0 along the optimal moves of U, splitting mass equally over tied moves."""
    N = U.shape[0] - 1
    n_nodes = op.grid.size
    M = np.zeros((N + 1, n_nodes))
    M[0] = m0
    flux = np.zeros((N,) + op.neighbors.shape)
    for n in range(N):
        occ = np.flatnonzero(M[n] > 0)
        vals = U[n + 1][op._gather[occ]] + op.cost[occ]
        extra = costs(n)
        if extra is not None:
            vals = vals + extra[occ]
        vmin = vals.min(axis=1, keepdims=True)
        ties = vals <= vmin + tie_tol * (1.0 + np.abs(vmin))
        share = M[n][occ] / ties.sum(axis=1)
        f = ties * share[:, None]
        flux[n, occ] = f
        M[n + 1] = np.bincount(op.neighbors[occ][ties], weights=f[ties], minlength=n_nodes)
    return M, flux


def best_response(
    model: TonelliModel,
    coupling: Coupling,
    m_path,
    u_f,
    T: float,
    dt: float,
    m0: GridMeasure,
    flux: np.ndarray | None = None,
    operator: LaxOleinikOperator | None = None,
    speed_cap: float = DEFAULT_SPEED_CAP,
):
    """Best response to ``m_path`` and the exploitability of the current strategy.

    ``flux`` describes the strategy that produced ``m_path``; when omitted
    the path must be constant and the strategy is to stay put.  Returns
    (best-response measure path, value slices, exploitability, best-response flux).
    """
    grid = m0.grid
    N = _horizon_steps(T, dt)
    W = _weights_array(m_path, grid)
    op = operator or LaxOleinikOperator(model, grid, dt, speed_cap)
    if flux is None:
        if not np.all(W == W[0]):
            raise ValueError("a non-constant m_path needs the flux of the strategy that produced it")
        flux = stay_flux(op, W[0], N)
    costs = CouplingCosts(op, coupling, W)
    u_f = np.asarray(u_f, dtype=float)
    U, running = backward_sweep(op, costs, u_f, N, flux)
    # terminal marginal of the followed strategy
    last = np.bincount(op.neighbors[op.valid], weights=flux[-1][op.valid], minlength=grid.size)
    expl = running + float(last @ u_f) - float(m0.weights @ U[0])
    M, flux_hat = forward_rollout(op, costs, U, m0.weights)
    return M, U, expl, flux_hat


def equilibrium_fixed_point(
    model: TonelliModel,
    coupling: Coupling,
    m0: GridMeasure,
    u_f,
    T: float,
    dt: float,
    tol_expl: float = 1e-3,
    max_outer: int = 200,
    averaging: str = "fictitious",
    operator: LaxOleinikOperator | None = None,
    speed_cap: float = DEFAULT_SPEED_CAP,
) -> MildSolutionPath:
    """Equilibrium path by iterated best responses, starting from the stay-put path.

    ``averaging`` selects the update:

    * ``fictitious``: m^(k+1) = k/(k+1) m^(k) + 1/(k+1) m_hat;
    * ``none``: raw best-response iteration m^(k+1) = m_hat;
    * ``simplicial``: keep the best responses found so far and re-solve the
      equilibrium over their mixture weights exactly (fully corrective);
      needs a kernel coupling.
    """
    if averaging not in ("fictitious", "none", "simplicial"):
        raise ValueError(f"unknown averaging {averaging!r}")
    grid = m0.grid
    N = _horizon_steps(T, dt)
    op = operator or LaxOleinikOperator(model, grid, dt, speed_cap)
    u_f = np.asarray(u_f, dtype=float)
    if averaging == "simplicial" and hasattr(coupling, "kernel"):
        return _simplicial(op, coupling, m0, u_f, T, N, tol_expl, max_outer)
    W = np.tile(m0.weights, (N + 1, 1))
    flux = stay_flux(op, m0.weights, N)
    trace = []
    converged = False
    for k in range(max_outer + 1):
        M, U, expl, flux_hat = best_response(model, coupling, W, u_f, T, dt, m0, flux, op)
        trace.append(expl)
        if expl <= tol_expl:
            converged = True
            break
        if k == max_outer:
            break
        a = 1.0 / (k + 1) if averaging == "fictitious" else 1.0
        W = (1 - a) * W + a * M
        W[0] = m0.weights
        flux = (1 - a) * flux + a * flux_hat
    return _finish(T, op, U, W, flux, trace, converged, max_outer)


def _finish(T, op, U, W, flux, trace, converged, max_outer):
    path = MildSolutionPath(T, op.dt, op.grid, U, W, flux, trace, converged, op)
    if not converged:
        raise NonConvergence(
            f"equilibrium iteration stopped at exploitability {trace[-1]:.3e} after {max_outer} iterations",
            residual=trace[-1],
            trace=trace,
            result=path,
        )
    return path


class _Column:
    """A pure (or tie-split) strategy: sparse edge flux, marginals M and kernel image G = M K."""

    def __init__(self, op, Knode, flux, u_f):
        t, i, k = np.nonzero(flux)
        self.t, self.i, self.k = t, i, k
        self.mass = flux[t, i, k]
        N = flux.shape[0]
        n_nodes = op.grid.size
        dest = op.neighbors[i, k]
        M = np.zeros((N + 1, n_nodes))
        M[0] = np.bincount(i[t == 0], weights=self.mass[t == 0], minlength=n_nodes)
        M[1:] = np.bincount(t * n_nodes + dest, weights=self.mass, minlength=N * n_nodes).reshape(N, n_nodes)
        self.M = M
        self.G = M @ Knode
        self.static = float(self.mass @ op.cost_finite[i, k] + M[N] @ u_f)

    def dense_flux(self, shape):
        f = np.zeros(shape)
        f[self.t, self.i, self.k] = self.mass
        return f


def _simplicial(op, coupling, m0, u_f, T, N, tol_expl, max_outer, max_columns=60):
    grid = op.grid
    Knode = coupling.kernel(grid.points, grid.points)
    # trapezoid weights in time, matching CouplingCosts
    wt = np.full(N + 1, op.dt * coupling.weight)
    wt[[0, N]] *= 0.5

    def inter(a, b):
        return float(wt @ np.einsum("tx,tx->t", a.G, b.M))

    cols = [_Column(op, Knode, stay_flux(op, m0.weights, N), u_f)]
    A = np.array([[inter(cols[0], cols[0])]])
    c = np.array([cols[0].static])
    lam = np.array([1.0])
    trace = []
    converged = False
    for it in range(max_outer + 1):
        W = sum(l * col.M for l, col in zip(lam, cols))
        W[0] = m0.weights
        costs = CouplingCosts(op, coupling, W)
        U, _ = backward_sweep(op, costs, u_f, N)
        s = np.array([costs.shift(n) for n in range(N + 1)])
        expl = float(lam @ (c + A @ lam)) - float((wt / coupling.weight) @ s) - float(m0.weights @ U[0])
        trace.append(expl)
        if expl <= tol_expl or it == max_outer:
            converged = expl <= tol_expl
            break
        _, flux_hat = forward_rollout(op, costs, U, m0.weights)
        new = _Column(op, Knode, flux_hat, u_f)
        r = len(cols)
        A2 = np.zeros((r + 1, r + 1))
        A2[:r, :r] = A
        for j, col in enumerate(cols):
            A2[r, j] = A2[j, r] = inter(new, col)
        A2[r, r] = inter(new, new)
        cols.append(new)
        A, c = A2, np.append(c, new.static)
        support = np.append(np.flatnonzero(lam > 0), r)
        sol = simplex_equilibrium(c, A, support)
        if sol is None:
            a = 1.0 / (it + 2)
            lam = np.append((1 - a) * lam, a)
        else:
            lam = sol[0]
        keep = np.flatnonzero(lam > 0)
        if keep.size > max_columns:
            keep = np.sort(keep[np.argsort(-lam[keep])[:max_columns]])
        cols = [cols[j] for j in keep]
        A = A[np.ix_(keep, keep)]
        c = c[keep]
        lam = lam[keep] / lam[keep].sum()
    shape = (N,) + op.neighbors.shape
    flux = sum(l * col.dense_flux(shape) for l, col in zip(lam, cols))
    return _finish(T, op, U, W, flux, trace, converged, max_outer)


def energy_estimate_eval(path: MildSolutionPath, coupling: Coupling, m_bar: GridMeasure) -> float:
    """sum_n dt <F(., m_n) - F(., mbar), m_n - mbar> over the steps of the path."""
    grid = path.grid
    N = path.steps
    Fn = coupling.field_batch(grid.points, grid, path.measures[:N])
    Fb = coupling.field(grid.points, m_bar)
    return float(path.dt * np.sum((Fn - Fb) * (path.measures[:N] - m_bar.weights)))


# --- binary path tables ---------------------------------------------------

def write_path_table(path: MildSolutionPath, directory, stem: str) -> dict:
    """Write measures and values as t-major little-endian float64 tables plus a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in (("measures", path.measures), ("values", path.values)):
        fn = f"{stem}.{name}.f64"
        (d / fn).write_bytes(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        files[name] = fn
    manifest = {
        "T": path.T,
        "dt": path.dt,
        "steps": path.steps,
        "grid_shape": list(path.grid.shape),
        "nodes": path.grid.size,
        "layout": "t-major, little-endian float64, rows = time slices t_0..t_N",
        "files": files,
        "exploitability_trace": [float(e) for e in path.exploitability_trace],
        "converged": path.converged,
    }
    (d / f"{stem}.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def read_path_table(directory, stem: str):
    """Return (measures, values, manifest) written by ``write_path_table``."""
    d = Path(directory)
    manifest = json.loads((d / f"{stem}.json").read_text())
    shape = (manifest["steps"] + 1, manifest["nodes"])
    out = [np.frombuffer((d / manifest["files"][k]).read_bytes(), dtype="<f8").reshape(shape) for k in ("measures", "values")]
    return out[0], out[1], manifest
