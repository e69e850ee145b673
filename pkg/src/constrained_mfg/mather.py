"""Mather set, Mather measures and the static critical value.

For reversible Lagrangians the Mather set projects onto the minimisers of
L(., 0) and c = -min L(., 0).  On the grid the minimising set is taken with
a tiny relative tie tolerance so exact symmetric ties are kept together;
``tol_static`` governs the consistency checks only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintQualificationFailed
from .grid import Grid, GridMeasure
from .hjsolver import ErgodicSolution, velocity_field
from .model import TonelliModel, structural_constants

PADDING = 2.0


@dataclass
class MatherData:
    nodes: np.ndarray
    min_value: float
    critical_value: float
    measure: GridMeasure
    tol_static: float
    padded_min: float
    padding: float = PADDING
    selection: str = "uniform"

    @property
    def points(self) -> np.ndarray:
        return self.measure.grid.points[self.nodes]


def static_lipschitz(model: TonelliModel, grid: Grid) -> float:
    """Lipschitz constant of L(., 0) on the grid, from adjacent differences."""
    W = model.static(grid.points)
    best = 0.0
    for a in range(grid.dim):
        e = np.zeros(grid.dim, dtype=int)
        e[a] = 1
        j = grid.node_at(grid.lattice + e)
        ok = j >= 0
        if np.any(ok):
            best = max(best, float(np.max(np.abs(W[j[ok]] - W[ok]))) / grid.h)
    return best


def default_tol_static(model: TonelliModel, grid: Grid) -> float:
    return 2.0 * static_lipschitz(model, grid) * grid.h


def padded_minimum(model: TonelliModel, grid: Grid, padding: float = PADDING) -> float:
    """min L(., 0) over the bounding box of the domain padded by padding * diam."""
    dom = grid.domain
    pad = padding * dom.diameter
    axes = [np.arange(lo - pad, hi + pad + 0.5 * grid.h, grid.h) for lo, hi in zip(dom.lower, dom.upper)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.dim)
    return float(np.min(model.static(mesh)))


def argmin_nodes(values: np.ndarray, tie_tol: float | None = None) -> np.ndarray:
    vmin = float(values.min())
    tol = 1e-12 * (1.0 + abs(vmin)) if tie_tol is None else tie_tol
    return np.flatnonzero(values <= vmin + tol)


def mather_set(
    model: TonelliModel,
    grid: Grid,
    tol_static: float | None = None,
    tie_tol: float | None = None,
    padding: float = PADDING,
    check_qualification: bool = True,
) -> MatherData:
    """Grid minimisers of L(., 0), c = -min, and the uniform Mather measure."""
    tol = default_tol_static(model, grid) if tol_static is None else tol_static
    W = model.static(grid.points)
    nodes = argmin_nodes(W, tie_tol)
    vmin = float(W.min())
    pmin = padded_minimum(model, grid, padding) if check_qualification else vmin
    if check_qualification and pmin < vmin - tol:
        raise ConstraintQualificationFailed(
            f"min of L(.,0) on the padded box is {pmin:.6g}, below the domain minimum {vmin:.6g}"
        )
    return MatherData(nodes, vmin, -vmin, GridMeasure.uniform(grid, nodes), tol, pmin, padding)


def mather_measure_check(
    data: MatherData,
    solution: ErgodicSolution,
    model: TonelliModel,
    velocity_factor: float = 10.0,
) -> dict:
    """Pass/fail report for the support of the projected Mather measure.

    (a) |V| <= velocity_factor * h at support nodes;
    (b) the lift x -> (x, D_pH(x, Du(x))) is single valued on the support;
    (c) |D_vL(x, V(x)) - D_vL(y, V(y))| <= K2 |x - y| + slack over support
        pairs, K2 from the sampled D^2 L bounds and slack the velocity
        tolerance (the momenta are finite differences).
    """
    grid = solution.grid
    h = grid.h
    supp = data.measure.support
    V = velocity_field(solution, model, supp)
    speed = np.linalg.norm(V, axis=1)
    vtol = velocity_factor * h
    a_ok = bool(np.all(speed <= vtol))
    pts = grid.points[supp]
    b_ok = len(np.unique(pts, axis=0)) == len(supp)
    consts = structural_constants(model, grid.points)
    K2 = consts.C1 * consts.C2 + consts.C1
    mom = model.dv_lagrangian(pts, V)
    worst = 0.0
    if len(supp) > 1:
        i, j = np.triu_indices(len(supp), 1)
        lhs = np.linalg.norm(mom[i] - mom[j], axis=1)
        rhs = K2 * np.linalg.norm(pts[i] - pts[j], axis=1) + 2 * consts.C1 * vtol
        worst = float(np.max(lhs - rhs))
    c_ok = worst <= 0.0
    action_ok = bool(np.all(model.static(pts) + data.critical_value <= data.tol_static))
    return {
        "support_nodes": supp.tolist(),
        "max_speed": float(speed.max()) if speed.size else 0.0,
        "velocity_tolerance": vtol,
        "velocity_small": a_ok,
        "lift_injective": b_ok,
        "lipschitz_K2": K2,
        "lipschitz_margin": worst,
        "lipschitz_ok": c_ok,
        "zero_action": action_ok,
        "passed": a_ok and b_ok and c_ok and action_ok,
    }
