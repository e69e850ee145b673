"""Nodal Lax-Oleinik scheme for state-constrained Hamilton-Jacobi equations.

One step of the scheme is

    (T u)(x) = min_y  u(y) + dt * L((x + y)/2, (x - y)/dt),

the minimum running over grid nodes y of the closed domain with
|y - x| <= R dt.  The domain is convex, so the segment [y, x] never leaves
it and the stencil realises the constrained trajectory class exactly.
Ties go to the smallest displacement, then to the smallest node index.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import BoundaryNode, CornerNode, IncompatibleResolution, NonConvergence
from .geometry import distance_gradient
from .grid import Grid, GridMeasure
from .model import Coupling, TonelliModel

DEFAULT_SPEED_CAP = 5.0


class LaxOleinikOperator:
    """Stencil, midpoint table and static step costs for fixed (model, grid, dt)."""

    def __init__(self, model: TonelliModel, grid: Grid, dt: float, speed_cap: float = DEFAULT_SPEED_CAP):
        if not dt > 0:
            raise ValueError("dt must be positive")
        reach = speed_cap * dt / grid.h
        if reach < 1.0 - 1e-12:
            raise IncompatibleResolution(
                f"speed cap {speed_cap} * dt {dt} is below the spacing {grid.h}; no moves available"
            )
        self.model, self.grid, self.dt, self.speed_cap = model, grid, float(dt), float(speed_cap)
        d = grid.dim
        r = int(np.floor(reach + 1e-9))
        axes = np.meshgrid(*[np.arange(-r, r + 1)] * d, indexing="ij")
        off = np.stack([a.ravel() for a in axes], axis=-1)
        n2 = np.sum(off * off, axis=1)
        off = off[n2 <= reach**2 * (1 + 1e-12)]
        n2 = np.sum(off * off, axis=1)
        # sort by |offset|, then lexicographically (= node index order)
        order = np.lexsort(tuple(off[:, a] for a in reversed(range(d))) + (n2,))
        self.offsets = off[order]
        lat = grid.lattice[:, None, :] + self.offsets[None, :, :]
        self.neighbors = grid.node_at(lat)
        self.valid = self.neighbors >= 0
        self._gather = np.where(self.valid, self.neighbors, 0)
        self.velocity = -self.offsets * grid.h / dt  # v = (x - y)/dt
        midlat = 2 * grid.lattice[:, None, :] + self.offsets[None, :, :]
        uniq, inv = np.unique(midlat.reshape(-1, d), axis=0, return_inverse=True)
        self.mid_points = grid.domain.center + (uniq / 2.0 - (np.array(grid.shape) - 1) / 2.0) * grid.h
        self.mid_index = inv.reshape(self.neighbors.shape)
        kin = model.kinetic(self.velocity)
        Wmid = model.static(self.mid_points)
        cost = dt * (kin[None, :] + Wmid[self.mid_index])
        self.cost_finite = np.where(self.valid, cost, 0.0)
        self.cost = np.where(self.valid, cost, np.inf)

    @property
    def stencil_size(self) -> int:
        return self.offsets.shape[0]

    def step(self, u: np.ndarray, extra: np.ndarray | None = None):
        """Return (T u, chosen stencil column per node)."""
        vals = u[self._gather] + self.cost
        if extra is not None:
            vals = vals + extra
        k = np.argmin(vals, axis=1)
        return np.take_along_axis(vals, k[:, None], 1)[:, 0], k

    def predecessor(self, k: np.ndarray) -> np.ndarray:
        return np.take_along_axis(self.neighbors, k[:, None], 1)[:, 0]


def lax_oleinik_step(model: TonelliModel, grid: Grid, u, dt: float, speed_cap: float = DEFAULT_SPEED_CAP):
    """One constrained Lax-Oleinik step; returns (new field, predecessor node per node)."""
    op = LaxOleinikOperator(model, grid, dt, speed_cap)
    un, k = op.step(np.asarray(u, dtype=float))
    return un, op.predecessor(k)


# --- time-dependent coupling costs ----------------------------------------

class CouplingCosts:
    """Per-step extra cost of the coupling on the stencil.

    A move from node y at step n to node x at step n+1 pays the trapezoid
    dt * (F~(y, m_n) + F~(x, m_{n+1})) / 2, where F~ = F - shift_n and
    ``shift_n`` is min_z (W(z) + F(z, m_n)) when the coupling is
    a3-normalised and 0 otherwise.  The trapezoid keeps the discrete game a
    potential game (the interaction between two strategies is symmetric).
    Rows are computed in blocks so long horizons on 2D grids stay within
    memory.
    """

    def __init__(self, op: LaxOleinikOperator, coupling: Coupling, weights: np.ndarray, block: int = 128):
        self.op, self.coupling = op, coupling
        self.weights = np.asarray(weights, dtype=float)
        self.block = block
        self._start = None
        self.active = not (coupling.is_zero and not coupling.a3_normalize)
        self._Wnodes = op.model.static(op.grid.points)

    def _load(self, n):
        b0 = (n // self.block) * self.block
        rows = self.weights[b0:b0 + self.block + 1]
        self._Fnode = self.coupling.field_batch(self.op.grid.points, self.op.grid, rows)
        if self.coupling.a3_normalize:
            self._shift = np.min(self._Wnodes[None, :] + self._Fnode, axis=1)
        else:
            self._shift = np.zeros(rows.shape[0])
        self._start = b0

    def _row(self, n):
        if self._start is None or not (self._start <= n < self._start + self.block):
            self._load(n)
        return n - self._start

    def __call__(self, n):
        """Extra cost (n_nodes, K) of the moves from step n to step n+1 (None if zero)."""
        if not self.active:
            return None
        r = self._row(n)
        here = self._Fnode[r] - self._shift[r]
        there = self._Fnode[r + 1] - self._shift[r + 1]
        return 0.5 * self.op.dt * (here[:, None] + there[self.op._gather])

    def shift(self, n) -> float:
        if not self.active:
            return 0.0
        r = self._row(n)
        return float(self._shift[r])

    def node_field(self, n):
        """Effective coupling F~(., m_n) = F(., m_n) - shift_n on the nodes."""
        if not self.active:
            return np.zeros(self.op.grid.size)
        r = self._row(n)
        return self._Fnode[r] - self._shift[r]


def _horizon_steps(T: float, dt: float) -> int:
    N = int(round(T / dt))
    if N < 1 or abs(N * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError(f"horizon {T} is not a multiple of dt {dt}")
    return N


def _weights_array(m_path, grid: Grid) -> np.ndarray:
    if isinstance(m_path, np.ndarray):
        return m_path
    return np.stack([m.weights for m in m_path])


def backward_sweep(op: LaxOleinikOperator, costs: CouplingCosts, u_f: np.ndarray, N: int, flux=None):
    """Backward recursion from u_N = u_f.

    Returns the value slices (N+1, n) and, when the edge ``flux`` (N, n, K)
    of a strategy is supplied, its total running cost under the same costs.
    """
    n_nodes = op.grid.size
    U = np.empty((N + 1, n_nodes))
    U[N] = u_f
    running = 0.0
    for n in range(N - 1, -1, -1):
        extra = costs(n)
        U[n], _ = op.step(U[n + 1], extra)
        if flux is not None:
            c = op.cost_finite if extra is None else op.cost_finite + np.where(op.valid, extra, 0.0)
            running += float(np.sum(flux[n] * c))
    return U, running


def finite_horizon_solve(
    model: TonelliModel,
    coupling: Coupling,
    m_path,
    u_f,
    T: float,
    dt: float,
    grid: Grid | None = None,
    operator: LaxOleinikOperator | None = None,
    speed_cap: float = DEFAULT_SPEED_CAP,
) -> list[np.ndarray]:
    """Value slices u(t_n, .) for n = 0..N with running cost L + F(., m_path[n])."""
    if grid is None:
        grid = operator.grid if operator is not None else m_path[0].grid
    N = _horizon_steps(T, dt)
    W = _weights_array(m_path, grid)
    if W.shape[0] != N + 1:
        raise ValueError(f"m_path needs {N + 1} entries, got {W.shape[0]}")
    op = operator or LaxOleinikOperator(model, grid, dt, speed_cap)
    U, _ = backward_sweep(op, CouplingCosts(op, coupling, W), np.asarray(u_f, dtype=float), N)
    return list(U)


# --- ergodic problem ------------------------------------------------------

@dataclass
class ErgodicSolution:
    critical_value: float
    u: np.ndarray
    residual: float
    iterations: int
    grid: Grid
    dt: float
    predecessor: np.ndarray
    step_index: np.ndarray
    operator: LaxOleinikOperator = field(repr=False, default=None)

    @property
    def c(self) -> float:
        return self.critical_value


def shortest_path_seed(op: LaxOleinikOperator) -> np.ndarray:
    """Multi-source shortest-path distances from the grid argmin of L(., 0).

    With c0 = -min L(., 0) the edge weights dt (L + c0) are nonnegative up
    to the midpoint rule, and the distance field is an exact fixed point of
    the scheme whenever c0 is the discrete critical value.  It only serves
    as a starting guess for the value iteration.
    """
    grid = op.grid
    Wn = op.model.static(grid.points)
    wmin = float(Wn.min())
    src = np.flatnonzero(Wn <= wmin + 1e-14 * (1.0 + abs(wmin)))
    w = op.cost_finite - wmin * op.dt
    moving = op.valid.copy()
    moving[:, 0] = False  # the zero offset sorts first
    rows = op.neighbors[moving]
    cols = np.nonzero(moving)[0]
    G = csr_matrix((np.maximum(w[moving], 1e-300), (rows, cols)), shape=(grid.size, grid.size))
    dist = dijkstra(G, directed=True, indices=src, min_only=True)
    return dist - dist[grid.reference]


def ergodic_solve(
    model: TonelliModel,
    grid: Grid,
    dt: float,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    speed_cap: float = DEFAULT_SPEED_CAP,
    u0: np.ndarray | None = None,
    warm_start: bool = True,
    operator: LaxOleinikOperator | None = None,
    checkpoint: str | Path | None = None,
    checkpoint_every: int = 0,
    start_iteration: int = 0,
) -> ErgodicSolution:
    """Relative value iteration for the pair (c, u).

    u_{k+1} = T u_k - (T u_k)(x_ref), c_k = -((T u_k)(x_ref) - u_k(x_ref))/dt,
    stopping once ||T u_k + c_k dt - u_k|| <= tol dt.  The returned c is
    the drift of the final step, for which the residual is certified.
    """
    op = operator or LaxOleinikOperator(model, grid, dt, speed_cap)
    ref = grid.reference
    if u0 is not None:
        u = np.asarray(u0, dtype=float).copy()
    elif warm_start:
        u = shortest_path_seed(op)
    else:
        u = np.zeros(grid.size)
    u = u - u[ref]
    resid = np.inf
    c = np.nan
    for it in range(start_iteration + 1, max_iter + 1):
        Tu, k = op.step(u)
        c = -(Tu[ref] - u[ref]) / dt
        resid = float(np.max(np.abs(Tu + c * dt - u)))
        if resid <= tol * dt:
            return ErgodicSolution(float(c), u, resid, it, grid, dt, op.predecessor(k), k, op)
        u = Tu - Tu[ref]
        if checkpoint is not None and checkpoint_every and it % checkpoint_every == 0:
            save_checkpoint(checkpoint, u, grid.shape, it, float(c))
    if checkpoint is not None:
        save_checkpoint(checkpoint, u, grid.shape, max_iter, float(c))
    partial = ErgodicSolution(float(c), u, resid, max_iter, grid, dt, op.predecessor(k), k, op)
    raise NonConvergence(
        f"value iteration stopped after {max_iter} iterations with residual {resid:.3e}",
        residual=resid,
        result=partial,
    )


def calibrated_curve(solution: ErgodicSolution, model: TonelliModel, x, horizon: float):
    """Follow recorded minimisers backward from x for horizon/dt steps.

    Returns (times, points, defect) in forward time order with the last
    point equal to x and times running from -horizon to 0.  The defect is
    the max over sub-intervals of |u(b) - u(a) - action - c (t_b - t_a)|.
    """
    grid, op = solution.grid, solution.operator
    i = int(x) if np.ndim(x) == 0 and isinstance(x, (int, np.integer)) else grid.nearest(x)
    steps = int(round(horizon / solution.dt))
    chain = [i]
    costs = []
    for _ in range(steps):
        j = chain[-1]
        k = solution.step_index[j]
        costs.append(op.cost[j, k])
        chain.append(int(solution.predecessor[j]))
    chain = chain[::-1]
    costs = np.array(costs[::-1])
    action = np.concatenate([[0.0], np.cumsum(costs)])
    idx = np.arange(steps + 1)
    D = solution.u[chain] - action - solution.critical_value * idx * solution.dt
    defect = float(D.max() - D.min()) if steps else 0.0
    times = (idx - steps) * solution.dt
    return times, grid.points[chain], defect


def _node_index(grid: Grid, x) -> int:
    if isinstance(x, (int, np.integer)):
        return int(x)
    return grid.nearest(x)


def gradient_and_velocity(solution: ErgodicSolution, model: TonelliModel, x, u: np.ndarray | None = None):
    """Central-difference gradient and V = D_pH(x, Du) at an interior node."""
    grid = solution.grid
    u = solution.u if u is None else u
    i = _node_index(grid, x)
    if grid.boundary[i]:
        raise BoundaryNode(f"node {i} is in the boundary layer")
    lat = grid.lattice[i]
    g = np.empty(grid.dim)
    for a in range(grid.dim):
        e = np.zeros(grid.dim, dtype=int)
        e[a] = 1
        jp, jm = grid.node_at(lat + e), grid.node_at(lat - e)
        g[a] = (u[jp] - u[jm]) / (2 * grid.h)
    return g, model.dp_hamiltonian(grid.points[i], g)


class BoundaryGradient(NamedTuple):
    tangential: np.ndarray
    normal_coefficient: float
    velocity: np.ndarray
    hamiltonian_defect: float


def boundary_gradient(solution: ErgodicSolution, model: TonelliModel, x, u: np.ndarray | None = None) -> BoundaryGradient:
    """One-sided boundary gradient D^t u + lambda nu and the Hamiltonian defect |H - c|.

    In 1D lambda = (u(x) - u(x - h nu))/h.  In 2D a plane is fitted by least
    squares through the nodes within 2h, and lambda is its normal slope.
    """
    grid = solution.grid
    u = solution.u if u is None else u
    i = _node_index(grid, x)
    if grid.corner[i]:
        raise CornerNode(f"node {i} is a box corner")
    xi = grid.points[i]
    nu = distance_gradient(grid.domain, xi)
    if grid.dim == 1:
        step = -int(np.sign(nu[0]))
        j = int(grid.node_at(grid.lattice[i] + step))
        lam = (u[i] - u[j]) / grid.h
        tang = np.zeros(1)
    else:
        near = np.flatnonzero(np.linalg.norm(grid.points - xi, axis=1) <= 2 * grid.h * (1 + 1e-9))
        near = near[near != i]
        A = grid.points[near] - xi
        p, *_ = np.linalg.lstsq(A, u[near] - u[i], rcond=None)
        lam = float(p @ nu)
        tang = p - lam * nu
    p = tang + lam * nu
    V = model.dp_hamiltonian(xi, p)
    defect = abs(float(model.hamiltonian(xi, p)) - solution.critical_value)
    return BoundaryGradient(tang, float(lam), V, defect)


def velocity_field(solution: ErgodicSolution, model: TonelliModel, nodes, u: np.ndarray | None = None) -> np.ndarray:
    """V at the given nodes, switching to the boundary formula where needed."""
    out = np.zeros((len(nodes), solution.grid.dim))
    for r, i in enumerate(nodes):
        if solution.grid.boundary[i]:
            out[r] = boundary_gradient(solution, model, int(i), u).velocity
        else:
            out[r] = gradient_and_velocity(solution, model, int(i), u)[1]
    return out


def max_adjacent_slope(u: np.ndarray, grid: Grid) -> float:
    """max |u(x) - u(y)| / h over lattice neighbours."""
    best = 0.0
    for a in range(grid.dim):
        e = np.zeros(grid.dim, dtype=int)
        e[a] = 1
        j = grid.node_at(grid.lattice + e)
        ok = j >= 0
        if np.any(ok):
            best = max(best, float(np.max(np.abs(u[j[ok]] - u[ok]))) / grid.h)
    return best


def semiconcavity_ratios(u: np.ndarray, grid: Grid, steps) -> dict[int, float]:
    """Per lattice step s: max of (u(x+sh e) + u(x-sh e) - 2u(x)) / (sh)^{3/2}."""
    out = {}
    for s in steps:
        s = int(s)
        hs = s * grid.h
        best = -np.inf
        for a in range(grid.dim):
            e = np.zeros(grid.dim, dtype=int)
            e[a] = s
            jp, jm = grid.node_at(grid.lattice + e), grid.node_at(grid.lattice - e)
            ok = (jp >= 0) & (jm >= 0)
            if np.any(ok):
                second = u[jp[ok]] + u[jm[ok]] - 2 * u[ok]
                best = max(best, float(np.max(second)) / hs**1.5)
        out[s] = best
    return out


def semiconcavity_check(u, grid: Grid, h_list) -> float:
    """Max fractional second difference ratio over the listed step sizes."""
    steps = []
    for hh in h_list:
        s = hh / grid.h
        if abs(s - round(s)) > 1e-9 or round(s) < 1:
            raise ValueError(f"{hh} is not a positive multiple of the spacing {grid.h}")
        steps.append(int(round(s)))
    return max(semiconcavity_ratios(np.asarray(u, dtype=float), grid, steps).values())


# --- checkpoints ----------------------------------------------------------

_MAGIC = b"CMFGCKP1"


def save_checkpoint(path, u: np.ndarray, shape, iteration: int, c: float):
    """Little-endian layout: magic, ndim, shape, n, iteration (int64), c, values (float64)."""
    u = np.asarray(u, dtype="<f8")
    head = _MAGIC + struct.pack("<q", len(shape)) + struct.pack(f"<{len(shape)}q", *shape)
    head += struct.pack("<qqd", u.size, int(iteration), float(c))
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(head)
        fh.write(u.tobytes())
    tmp.replace(path)


def load_checkpoint(path):
    """Return (values, shape, iteration, c)."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (nd,) = struct.unpack_from("<q", raw, 8)
    shape = struct.unpack_from(f"<{nd}q", raw, 16)
    pos = 16 + 8 * nd
    n, it, c = struct.unpack_from("<qqd", raw, pos)
    pos += 24
    u = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(float)
    return u, tuple(shape), int(it), float(c)
