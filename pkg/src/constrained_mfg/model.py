"""Lagrangians, Hamiltonians, mean-field couplings and the W1 distance.

The built-in Lagrangian family is L(x, v) = K(v) + W(x) with the reversible
kinetic term K(v) = |v|^2/2 + eps |v|^4.  Points and velocities carry the
spatial dimension on the last axis; in 1D bare scalars and flat arrays are
accepted and promoted.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import GridMismatch, NonConvergence
from .grid import Grid, GridMeasure


def _vec(a, dim: int) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if dim == 1 and (a.ndim == 0 or a.shape[-1] != 1):
        a = a[..., None]
    return a


# --- potentials -----------------------------------------------------------

@dataclass(frozen=True)
class QuadraticWell:
    """W(x) = scale/2 |x - center|^2 + offset."""

    center: float | Sequence[float] = 0.0
    scale: float = 1.0
    offset: float = 0.0

    def __call__(self, x):
        r = x - np.asarray(self.center, dtype=float)
        return 0.5 * self.scale * np.sum(r * r, axis=-1) + self.offset

    def grad(self, x):
        return self.scale * (x - np.asarray(self.center, dtype=float))


@dataclass(frozen=True)
class RadialWell:
    """W(x) = 1/2 max(|x| - outer, 0)^2 + 1/2 max(inner - |x|, 0)^2 + offset.

    ``inner = outer = r`` gives the double well 1/2 (|x| - r)^2; ``inner = 0``
    gives a flat bottom of half-width ``outer``.
    """

    inner: float = 0.0
    outer: float = 0.0
    offset: float = 0.0

    def __call__(self, x):
        r = np.linalg.norm(x, axis=-1)
        return 0.5 * (np.maximum(r - self.outer, 0) ** 2 + np.maximum(self.inner - r, 0) ** 2) + self.offset

    def grad(self, x):
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        dr = np.maximum(r - self.outer, 0) - np.maximum(self.inner - r, 0)
        unit = x / np.where(r > 0, r, 1.0)
        return dr * unit


@dataclass(frozen=True)
class MeanFieldPotential:
    """W(x) + F(x, m) - shift."""

    base: Callable
    coupling: "Coupling"
    measure: GridMeasure
    shift: float = 0.0

    def __call__(self, x):
        return self.base(x) + self.coupling.field(x, self.measure) - self.shift

    def grad(self, x):
        return _potential_grad(self.base, x) + self.coupling.gradient(x, self.measure)


def _potential_grad(W, x, eps=1e-6):
    if hasattr(W, "grad"):
        return W.grad(x)
    g = np.empty_like(x)
    for a in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[a] = eps
        g[..., a] = (W(x + e) - W(x - e)) / (2 * eps)
    return g


# --- Tonelli model --------------------------------------------------------

@dataclass(frozen=True)
class TonelliModel:
    """Reversible Lagrangian L(x, v) = |v|^2/2 + quartic |v|^4 + W(x)."""

    potential: Callable
    dim: int = 1
    quartic: float = 0.0
    label: str = ""

    reversible = True

    def kinetic(self, v):
        s = np.sum(v * v, axis=-1)
        return 0.5 * s + self.quartic * s * s

    def lagrangian(self, x, v):
        x, v = _vec(x, self.dim), _vec(v, self.dim)
        return self.kinetic(v) + self.potential(x)

    __call__ = lagrangian

    def dv_lagrangian(self, x, v):
        v = _vec(v, self.dim)
        s = np.sum(v * v, axis=-1, keepdims=True)
        return v * (1.0 + 4.0 * self.quartic * s)

    def dvv_lagrangian(self, x, v):
        v = _vec(v, self.dim)
        s = np.sum(v * v, axis=-1)[..., None, None]
        eye = np.eye(self.dim)
        outer = v[..., :, None] * v[..., None, :]
        return eye * (1.0 + 4.0 * self.quartic * s) + 8.0 * self.quartic * outer

    def dx_lagrangian(self, x, v=None):
        return _potential_grad(self.potential, _vec(x, self.dim))

    def static(self, x):
        """L(x, 0)."""
        return self.potential(_vec(x, self.dim))

    def hamiltonian(self, x, p):
        return legendre_hamiltonian(self, x, p)

    def dp_hamiltonian(self, x, p):
        """D_pH(x, p): the velocity v solving D_vL(x, v) = p."""
        return _momentum_to_velocity(self, _vec(p, self.dim))

    def shifted(self, a: float) -> "TonelliModel":
        """Model with L + a."""
        return replace(self, potential=_Shifted(self.potential, a), label=f"{self.label}+{a:g}")


@dataclass(frozen=True)
class _Shifted:
    base: Callable
    a: float

    def __call__(self, x):
        return self.base(x) + self.a

    def grad(self, x):
        return _potential_grad(self.base, x)


def _momentum_to_velocity(model: TonelliModel, p, max_iter: int = 100, tol: float = 1e-14):
    if model.quartic == 0.0:
        return p.copy()
    # Newton on D_vL(v) = p from v = p, which overshoots the root monotonically
    v = p.copy()
    for _ in range(max_iter):
        r = model.dv_lagrangian(None, v) - p
        if np.max(np.abs(r), initial=0.0) <= tol * (1.0 + np.max(np.abs(p), initial=0.0)):
            return v
        J = model.dvv_lagrangian(None, v)
        v = v - np.linalg.solve(J, r[..., None])[..., 0]
    raise NonConvergence("Newton iteration for the Legendre transform did not converge")


def legendre_hamiltonian(model: TonelliModel, x, p):
    """H(x, p) = sup_v <p, v> - L(x, v)."""
    x, p = _vec(x, model.dim), _vec(p, model.dim)
    if model.quartic == 0.0:
        return 0.5 * np.sum(p * p, axis=-1) - model.potential(x)
    v = _momentum_to_velocity(model, p)
    return np.sum(p * v, axis=-1) - model.lagrangian(x, v)


def quadratic_model(potential: Callable | None = None, dim: int = 1, quartic: float = 0.0, label: str = ""):
    return TonelliModel(potential or QuadraticWell(np.zeros(dim)), dim=dim, quartic=quartic, label=label)


@dataclass(frozen=True)
class StructuralConstants:
    C1: float
    C2: float
    C3: float
    alpha: float
    beta: float


def _velocity_samples(dim: int, vmax: float, n: int = 101) -> np.ndarray:
    s = np.linspace(-vmax, vmax, n)
    if dim == 1:
        return s[:, None]
    vx, vy = np.meshgrid(s, s, indexing="ij")
    v = np.stack([vx.ravel(), vy.ravel()], axis=-1)
    return v[np.linalg.norm(v, axis=1) <= vmax]


def structural_constants(model: TonelliModel, points: np.ndarray, vmax: float = 5.0) -> StructuralConstants:
    """Sample the Tonelli constants over ``points`` x {|v| <= vmax}.

    D^2_vx L vanishes for the separable family, so C2 is reported as 0.
    """
    x = _vec(points, model.dim).reshape(-1, model.dim)
    v = _velocity_samples(model.dim, vmax)
    eig = np.linalg.eigvalsh(model.dvv_lagrangian(None, v))
    C1 = float(max(eig.max(), 1.0 / eig.min()))
    W = model.static(x)
    gW = np.linalg.norm(model.dx_lagrangian(x), axis=-1)
    C3 = float(np.max(np.abs(W) + gW))
    C2 = 0.0
    speed = np.linalg.norm(v, axis=-1)
    dv = np.linalg.norm(model.dv_lagrangian(None, v), axis=-1)
    alpha = float(max(np.max(dv / (1 + speed)), np.max(gW), np.max(np.abs(W)), 1e-12))
    K = model.kinetic(v)
    Lmin, Lmax = W.min(), W.max()
    lower, upper = K + Lmin + alpha, K + Lmax - alpha
    moving = speed > 0
    beta = max(
        float(np.max(speed[moving] ** 2 / (4 * lower[moving]))),
        float(np.max(upper[moving] / (4 * speed[moving] ** 2))),
        1e-12,
    )
    return StructuralConstants(C1, C2, C3, alpha, beta)


# --- couplings ------------------------------------------------------------

class Coupling:
    """Mean-field cost F(x, m).  Subclasses implement ``field`` and ``gradient``."""

    a3_normalize: bool = False

    def field(self, x, m: GridMeasure) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x, m: GridMeasure) -> np.ndarray:
        raise NotImplementedError

    def field_batch(self, x, grid: Grid, weights: np.ndarray) -> np.ndarray:
        """F(x, m_b) for a stack of weight vectors, shape (B, len(x))."""
        ms = [GridMeasure(grid, w) for w in np.atleast_2d(weights)]
        return np.stack([self.field(x, m) for m in ms])

    @property
    def is_zero(self) -> bool:
        return False


@dataclass(frozen=True)
class NoCoupling(Coupling):
    a3_normalize: bool = False

    def field(self, x, m):
        return np.zeros(np.asarray(x).shape[:-1])

    def gradient(self, x, m):
        return np.zeros_like(np.asarray(x, dtype=float))

    def field_batch(self, x, grid, weights):
        return np.zeros((np.atleast_2d(weights).shape[0], np.asarray(x).shape[0]))

    @property
    def is_zero(self):
        return True

    lipschitz_in_m = 0.0
    spatial_lipschitz = 0.0

    def sup_bound(self, dim: int = 1) -> float:
        return 0.0


@dataclass(frozen=True)
class GaussianCoupling(Coupling):
    """F(x, m) = weight * sum_j m_j exp(-|x - x_j|^2 / sigma^2)."""

    weight: float = 1.0
    sigma: float = 0.5
    a3_normalize: bool = False

    def kernel(self, x, y) -> np.ndarray:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        d2 = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
        return np.exp(-d2 / self.sigma**2)

    def field(self, x, m: GridMeasure):
        x = _vec(x, m.grid.dim)
        flat = x.reshape(-1, m.grid.dim)
        s = m.support
        out = self.weight * self.kernel(flat, m.grid.points[s]) @ m.weights[s]
        return out.reshape(x.shape[:-1])

    def gradient(self, x, m: GridMeasure):
        x = _vec(x, m.grid.dim)
        flat = x.reshape(-1, m.grid.dim)
        s = m.support
        y = m.grid.points[s]
        k = self.kernel(flat, y) * m.weights[s]
        diff = flat[:, None, :] - y[None, :, :]
        g = -2.0 * self.weight / self.sigma**2 * np.einsum("ij,ijk->ik", k, diff)
        return g.reshape(x.shape)

    def field_batch(self, x, grid, weights):
        W = np.atleast_2d(weights)
        cols = np.flatnonzero(np.any(W > 0, axis=0))
        K = self.kernel(np.asarray(x).reshape(-1, grid.dim), grid.points[cols])
        return self.weight * (W[:, cols] @ K.T)

    @property
    def spatial_lipschitz(self) -> float:
        """sup_x |D_x F(x, m)| = |w| sqrt(2) e^{-1/2} / sigma."""
        return abs(self.weight) * np.sqrt(2.0) * np.exp(-0.5) / self.sigma

    @property
    def lipschitz_in_m(self) -> float:
        # the kernel is Lipschitz in y with the same constant
        return self.spatial_lipschitz

    def sup_bound(self, dim: int = 1) -> float:
        """Bound on sum over |a| <= 2 of sup |D^a F|."""
        w, s = abs(self.weight), self.sigma
        first = dim * np.sqrt(2.0) * np.exp(-0.5) / s
        pure = dim * 2.0 / s**2
        mixed = dim * (dim - 1) / 2 * 2.0 * np.exp(-1.0) / s**2
        return w * (1.0 + first + pure + mixed)


@dataclass(frozen=True)
class ProductCoupling(Coupling):
    """F(x, m) = f(x) g(m); generally not monotone."""

    f: Callable = None
    g: Callable = None
    f_grad: Callable | None = None
    a3_normalize: bool = False

    def field(self, x, m):
        return self.f(_vec(x, m.grid.dim)) * self.g(m)

    def gradient(self, x, m):
        x = _vec(x, m.grid.dim)
        if self.f_grad is not None:
            return self.f_grad(x) * self.g(m)
        return _potential_grad(self.f, x) * self.g(m)


def static_shift(model: TonelliModel, coupling: Coupling, m: GridMeasure) -> float:
    """min over grid nodes of L(z, 0) + F(z, m)."""
    pts = m.grid.points
    return float(np.min(model.static(pts) + coupling.field(pts, m)))


def mean_field_lagrangian(model: TonelliModel, coupling: Coupling, m: GridMeasure) -> TonelliModel:
    """L_m = L + F(., m), shifted to min_x L_m(x, 0) = 0 when the coupling asks for it."""
    if coupling.is_zero and not coupling.a3_normalize:
        return model
    shift = static_shift(model, coupling, m) if coupling.a3_normalize else 0.0
    pot = MeanFieldPotential(model.potential, coupling, m, shift)
    return replace(model, potential=pot, label=f"{model.label}[m]")


# --- Wasserstein-1 --------------------------------------------------------

def wasserstein1_lp(x1, w1, x2, w2) -> float:
    """Transport LP between two weighted atom sets (HiGHS)."""
    x1, x2 = np.atleast_2d(x1), np.atleast_2d(x2)
    if x1.shape[0] == 1 and x1.shape[1] != x2.shape[1]:
        x1 = x1.T
    if x2.shape[0] == 1 and x2.shape[1] != x1.shape[1]:
        x2 = x2.T
    n1, n2 = len(w1), len(w2)
    cost = np.linalg.norm(x1[:, None, :] - x2[None, :, :], axis=-1).ravel()
    rows = np.zeros((n1, n1 * n2))
    for i in range(n1):
        rows[i, i * n2:(i + 1) * n2] = 1.0
    cols = np.tile(np.eye(n2), (1, n1))
    A = np.vstack([rows, cols])
    b = np.concatenate([w1, w2])
    res = linprog(cost, A_eq=A[:-1], b_eq=b[:-1], bounds=(0, None), method="highs")
    if res.status != 0:
        raise NonConvergence(f"transport LP failed: {res.message}")
    return float(res.fun)


def _w1_dual(pts, diff) -> tuple[float, float]:
    """max sum phi_i diff_i over 1-Lipschitz phi; returns (value, primal-dual gap)."""
    n = len(diff)
    i, j = np.triu_indices(n, 1)
    dist = np.linalg.norm(pts[i] - pts[j], axis=-1)
    k = np.arange(i.size)
    data = np.concatenate([np.ones(i.size), -np.ones(i.size)])
    r = np.concatenate([k, k])
    A = sparse.coo_matrix((data, (r, np.concatenate([i, j]))), shape=(i.size, n)).tocsr()
    A = sparse.vstack([A, -A])
    b = np.concatenate([dist, dist])
    bounds = [(0, 0)] + [(None, None)] * (n - 1)
    res = linprog(-diff, A_ub=A, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise NonConvergence(f"dual W1 LP failed: {res.message}")
    dual = -float(res.fun)
    plan = -res.ineqlin.marginals
    primal = float(plan @ b)
    return dual, abs(primal - dual)


def wasserstein1(m1: GridMeasure, m2: GridMeasure, exact_atoms: int = 200) -> float:
    """d1(m1, m2) on a common grid.

    1D uses the CDF formula.  In 2D the common mass cancels and the
    transport LP runs on the remaining atoms; above ``exact_atoms`` atoms
    the 1-Lipschitz dual is solved instead.
    """
    if not m1.grid.same_as(m2.grid):
        raise GridMismatch("measures live on different grids")
    grid = m1.grid
    diff = m1.weights - m2.weights
    if grid.dim == 1:
        x = grid.points[:, 0]
        cdf = np.cumsum(diff)[:-1]
        return float(np.sum(np.abs(cdf) * np.diff(x)))
    pos = np.flatnonzero(diff > 0)
    neg = np.flatnonzero(diff < 0)
    if pos.size == 0:
        return 0.0
    if pos.size + neg.size <= exact_atoms:
        return wasserstein1_lp(grid.points[pos], diff[pos], grid.points[neg], -diff[neg])
    s = np.concatenate([pos, neg])
    value, _ = _w1_dual(grid.points[s], diff[s])
    return value


def wasserstein1_dual_gap(m1: GridMeasure, m2: GridMeasure) -> tuple[float, float]:
    """Dual value and primal-dual gap of the 1-Lipschitz formulation."""
    diff = m1.weights - m2.weights
    s = np.flatnonzero(diff != 0)
    if s.size == 0:
        return 0.0, 0.0
    return _w1_dual(m1.grid.points[s], diff[s])


def check_coupling_monotonicity(coupling: Coupling, samples) -> tuple[float, float]:
    """Minimum of lhs = <F(m1) - F(m2), m1 - m2> and of lhs / int (F(m1) - F(m2))^2.

    A ratio of +inf means the coupling fields coincided (rhs = 0).
    """
    min_lhs, min_ratio = np.inf, np.inf
    for m1, m2 in samples:
        if not m1.grid.same_as(m2.grid):
            raise GridMismatch("sample pair on different grids")
        pts = m1.grid.points
        dF = coupling.field(pts, m1) - coupling.field(pts, m2)
        lhs = float(dF @ (m1.weights - m2.weights))
        rhs = float(m1.grid.quadrature_weights() @ dF**2)
        min_lhs = min(min_lhs, lhs)
        ratio = lhs / rhs if rhs > 1e-300 else np.inf
        min_ratio = min(min_ratio, ratio)
    return min_lhs, min_ratio
