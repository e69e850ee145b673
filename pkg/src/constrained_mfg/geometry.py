"""Compact domains: signed distance, projection and feasible paths.

Supported kinds are the interval, the axis-aligned box and the disc.  All
of them are convex, so the quasiconvexity constant is 1 and straight
segments are admissible paths.  Points are arrays whose last axis is the
spatial dimension; every function here broadcasts over leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import TubeExceeded

KINDS = ("interval", "box", "disc")


@dataclass(frozen=True)
class Domain:
    """Closed region with closed-form boundary distance.

    For ``interval`` and ``box`` the geometry is given by ``lower`` and
    ``upper``; for ``disc`` by ``center`` and ``radius``.  Use the
    ``interval``, ``box`` and ``disc`` constructors below.
    """

    kind: str
    lower: np.ndarray = field(default=None)
    upper: np.ndarray = field(default=None)
    center: np.ndarray = field(default=None)
    radius: float = 0.0
    quasiconvexity: float = 1.0
    tube_radius: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "disc":
            c = np.asarray(self.center, dtype=float).reshape(2)
            if not self.radius > 0:
                raise ValueError("disc radius must be positive")
            object.__setattr__(self, "center", c)
            object.__setattr__(self, "lower", c - self.radius)
            object.__setattr__(self, "upper", c + self.radius)
            default_rho = 0.5 * self.radius
        else:
            lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
            hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
            if lo.shape != hi.shape or np.any(hi <= lo):
                raise ValueError("need lower < upper on every axis")
            if self.kind == "interval" and lo.size != 1:
                raise ValueError("interval must be one-dimensional")
            if lo.size > 2:
                raise ValueError("only d <= 2 is supported")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
            object.__setattr__(self, "center", 0.5 * (lo + hi))
            half = 0.5 * (hi - lo)
            if self.kind == "interval":
                default_rho = min(float(half[0]), 0.5)
            else:
                default_rho = 0.5 * float(half.min())
        if self.quasiconvexity < 1:
            raise ValueError("quasiconvexity constant must be >= 1")
        if self.tube_radius <= 0:
            object.__setattr__(self, "tube_radius", default_rho)

    @property
    def dim(self) -> int:
        return int(self.center.size)

    @property
    def diameter(self) -> float:
        if self.kind == "disc":
            return 2.0 * self.radius
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def volume(self) -> float:
        if self.kind == "disc":
            return float(np.pi * self.radius**2)
        return float(np.prod(self.upper - self.lower))

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        return signed_distance(self, x) <= tol


def interval(a: float = -1.0, b: float = 1.0, **kw) -> Domain:
    return Domain("interval", lower=[a], upper=[b], **kw)


def box(lower, upper, **kw) -> Domain:
    return Domain("box", lower=lower, upper=upper, **kw)


def disc(center=(0.0, 0.0), radius: float = 1.0, **kw) -> Domain:
    return Domain("disc", center=center, radius=radius, **kw)


def _as_points(domain: Domain, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if domain.dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != domain.dim:
        raise ValueError(f"expected points of dimension {domain.dim}")
    return x


def signed_distance(domain: Domain, x) -> np.ndarray:
    """b(x) = d(x, domain) - d(x, complement); negative inside."""
    x = _as_points(domain, x)
    if domain.kind == "disc":
        return np.linalg.norm(x - domain.center, axis=-1) - domain.radius
    q = np.abs(x - domain.center) - 0.5 * (domain.upper - domain.lower)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def distance(domain: Domain, x) -> np.ndarray:
    """d(x, domain), zero on the closed domain."""
    return np.maximum(signed_distance(domain, x), 0.0)


def distance_gradient(domain: Domain, x) -> np.ndarray:
    """Closed-form gradient of the signed distance (outward unit normal on the boundary)."""
    x = _as_points(domain, x)
    if domain.kind == "disc":
        r = x - domain.center
        n = np.linalg.norm(r, axis=-1, keepdims=True)
        e1 = np.zeros_like(r)
        e1[..., 0] = 1.0
        return np.where(n > 0, r / np.where(n > 0, n, 1.0), e1)
    rel = x - domain.center
    sgn = np.where(rel >= 0, 1.0, -1.0)
    q = np.abs(rel) - 0.5 * (domain.upper - domain.lower)
    qp = np.maximum(q, 0.0)
    nrm = np.linalg.norm(qp, axis=-1, keepdims=True)
    out = sgn * qp / np.where(nrm > 0, nrm, 1.0)
    # inside: normal of the nearest face
    k = np.argmax(q, axis=-1)
    ins = np.zeros_like(x)
    np.put_along_axis(ins, k[..., None], np.take_along_axis(sgn, k[..., None], -1), -1)
    return np.where(nrm > 0, out, ins)


def project(domain: Domain, x) -> np.ndarray:
    """x - d(x) Db(x); raises TubeExceeded outside the boundary tube."""
    x = _as_points(domain, x)
    d = distance(domain, x)
    if np.any(d > domain.tube_radius):
        raise TubeExceeded(
            f"distance {float(np.max(d)):.6g} exceeds tube radius {domain.tube_radius:.6g}"
        )
    y = x - d[..., None] * distance_gradient(domain, x)
    if domain.kind != "disc":
        # the box formula is exact up to rounding; clamp the last ulp
        y = np.clip(y, domain.lower, domain.upper)
    return y


def feasible_path(domain: Domain, x, y) -> tuple[float, Callable[[np.ndarray], np.ndarray]]:
    """Unit-speed segment from x to y and its duration |x - y|.

    The returned sampler maps times s in [0, tau] (array-like) to points.
    """
    x = _as_points(domain, x).reshape(domain.dim)
    y = _as_points(domain, y).reshape(domain.dim)
    d = y - x
    big = float(np.max(np.abs(d)))
    tau = big * float(np.linalg.norm(d / big)) if big > 0 else 0.0  # scaled: no underflow for tiny d
    step = (y - x) / tau if tau > 0 else np.zeros_like(x)

    def gamma(s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, tau)
        pts = x + s[..., None] * step
        if tau > 0:
            pts = np.where((s >= tau)[..., None], y, pts)
        return pts

    return domain.quasiconvexity * tau, gamma


def distance_derivative_check(domain: Domain, times, points) -> float:
    """Max defect of the chain rule d/dt d(gamma) = <Db(gamma), gamma'> 1_{outside}.

    Forward differences on each sampling interval.  Intervals whose
    endpoints lie on different sides of the boundary are skipped: the
    identity holds almost everywhere and those intervals shrink to a null
    set as the sampling is refined.
    """
    t = np.asarray(times, dtype=float)
    g = _as_points(domain, points)
    if g.ndim == 1:
        g = g[:, None]
    d = distance(domain, g)
    if np.any(d > domain.tube_radius):
        raise TubeExceeded("curve leaves the boundary tube")
    if t.size < 2:
        return 0.0
    dt = np.diff(t)
    b = signed_distance(domain, g)
    out = b > 0
    lhs = np.diff(d) / dt
    vel = np.diff(g, axis=0) / dt[:, None]
    rhs = np.einsum("ij,ij->i", distance_gradient(domain, g[:-1]), vel) * out[:-1]
    keep = out[:-1] == out[1:]
    if not np.any(keep):
        return 0.0
    return float(np.max(np.abs(lhs - rhs)[keep]))
