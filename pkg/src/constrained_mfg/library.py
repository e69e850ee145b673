"""Named built-in models and builders from plain config dicts."""
from __future__ import annotations

import numpy as np

from .geometry import Domain, box, disc, interval
from .grid import Grid, GridMeasure
from .model import (
    GaussianCoupling,
    MeanFieldPotential,
    NoCoupling,
    QuadraticWell,
    RadialWell,
    TonelliModel,
    quadratic_model,
)


def _coupled_delta0() -> TonelliModel:
    # 1/2 x^2 + F(x, delta_0) with a Gaussian kernel of width 0.5, frozen as a potential
    g = Grid(interval(), 3)
    pot = MeanFieldPotential(QuadraticWell(), GaussianCoupling(1.0, 0.5), GridMeasure.dirac(g, 0.0), 0.0)
    return TonelliModel(pot, 1, 0.0, "COUPLED_DELTA0")


MODELS = {
    "QUAD1D": lambda: quadratic_model(label="QUAD1D"),
    "SHIFTED": lambda: quadratic_model(QuadraticWell(offset=1.0), label="SHIFTED"),
    "DOUBLE_WELL": lambda: quadratic_model(RadialWell(0.5, 0.5), label="DOUBLE_WELL"),
    "FLAT_BOTTOM": lambda: quadratic_model(RadialWell(0.0, 0.2), label="FLAT_BOTTOM"),
    "OFF_CENTER": lambda: quadratic_model(QuadraticWell(center=0.31), label="OFF_CENTER"),
    "QUARTIC": lambda: quadratic_model(quartic=0.05, label="QUARTIC"),
    "COUPLED_DELTA0": _coupled_delta0,
    "QUAD2D": lambda: quadratic_model(QuadraticWell(center=(0.0, 0.0)), dim=2, label="QUAD2D"),
}

ONE_D_MODELS = [k for k in MODELS if k != "QUAD2D"]


def named_model(name: str) -> TonelliModel:
    try:
        return MODELS[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODELS)}") from None


def build_domain(conf: dict) -> Domain:
    kind = conf.get("kind", "interval")
    if kind == "interval":
        lo, hi = conf.get("lower", [-1.0]), conf.get("upper", [1.0])
        return interval(float(np.ravel(lo)[0]), float(np.ravel(hi)[0]))
    if kind == "box":
        return box(conf["lower"], conf["upper"])
    if kind == "disc":
        return disc(conf.get("center", [0.0, 0.0]), conf.get("radius", 1.0))
    raise ValueError(f"unknown domain kind {kind!r}")


def build_potential(conf: dict, dim: int):
    kind = conf.get("kind", "quadratic")
    if kind == "quadratic":
        center = conf.get("center", [0.0] * dim)
        center = center[0] if dim == 1 and isinstance(center, list) else center
        return QuadraticWell(center, conf.get("scale", 1.0), conf.get("offset", 0.0))
    if kind == "radial":
        return RadialWell(conf.get("inner", 0.0), conf.get("outer", 0.0), conf.get("offset", 0.0))
    raise ValueError(f"unknown potential kind {kind!r}")


def build_model(conf: dict, dim: int) -> TonelliModel:
    if "name" in conf:
        model = named_model(conf["name"])
        if model.dim != dim:
            raise ValueError(f"model {conf['name']} is {model.dim}-dimensional, domain is {dim}-dimensional")
        return model
    pot = build_potential(conf.get("potential", {}), dim)
    return quadratic_model(pot, dim=dim, quartic=conf.get("quartic", 0.0), label=conf.get("label", "custom"))


def build_coupling(conf: dict):
    kind = conf.get("kind", "gaussian")
    a3 = bool(conf.get("a3_normalize", False))
    if kind == "none":
        return NoCoupling(a3)
    if kind == "gaussian":
        return GaussianCoupling(conf.get("weight", 1.0), conf.get("sigma", 0.5), a3)
    raise ValueError(f"unknown coupling kind {kind!r}")


def build_measure(conf: dict, grid: Grid, rng: np.random.Generator | None = None) -> GridMeasure:
    kind = conf.get("kind", "dirac")
    if kind == "dirac":
        return GridMeasure.dirac(grid, conf.get("point", [0.0] * grid.dim))
    if kind == "uniform":
        return GridMeasure.uniform(grid)
    if kind == "random":
        rng = rng or np.random.default_rng(0)
        nodes = np.sort(rng.choice(grid.size, size=conf.get("atoms", 5), replace=False))
        w = np.zeros(grid.size)
        w[nodes] = rng.dirichlet(np.ones(nodes.size))
        return GridMeasure.from_weights(grid, w)
    raise ValueError(f"unknown measure kind {kind!r}")
