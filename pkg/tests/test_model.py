import numpy as np
import pytest
from hypothesis import given, strategies as st

from constrained_mfg.errors import GridMismatch
from constrained_mfg.geometry import disc, interval
from constrained_mfg.grid import Grid, GridMeasure
from constrained_mfg.model import (
    GaussianCoupling,
    NoCoupling,
    ProductCoupling,
    QuadraticWell,
    RadialWell,
    check_coupling_monotonicity,
    mean_field_lagrangian,
    quadratic_model,
    static_shift,
    structural_constants,
    wasserstein1,
    wasserstein1_dual_gap,
    wasserstein1_lp,
)

G1 = Grid(interval(), 41)
vel = st.floats(-4, 4, allow_nan=False)
pos = st.floats(-1, 1, allow_nan=False)


def random_measure(grid, rng, k=5):
    w = np.zeros(grid.size)
    w[rng.choice(grid.size, size=k, replace=False)] = rng.dirichlet(np.ones(k))
    return GridMeasure.from_weights(grid, w)


def test_quadratic_hamiltonian_closed_form():
    m = quadratic_model()
    assert m.hamiltonian(0.5, 2.0) == pytest.approx(0.5 * 4 - 0.5 * 0.25)


def test_reversible():
    m = quadratic_model(quartic=0.1)
    assert m.lagrangian(0.3, 1.7) == m.lagrangian(0.3, -1.7)
    assert m.reversible


@given(pos, vel, st.floats(0, 0.3))
def test_legendre_round_trip(x, p, eps):
    m = quadratic_model(quartic=eps)
    v = m.dp_hamiltonian(x, p)
    np.testing.assert_allclose(m.dv_lagrangian(x, v), [p], atol=1e-10)
    # Fenchel equality H(x, p) + L(x, v) = p v at v = D_pH
    lhs = m.hamiltonian(x, p) + m.lagrangian(x, v)
    assert float(lhs) == pytest.approx(float(p * v[0]), abs=1e-9)


@given(pos, vel, vel, st.floats(0, 0.3))
def test_fenchel_young_inequality(x, p, v, eps):
    m = quadratic_model(quartic=eps)
    assert float(m.hamiltonian(x, p) + m.lagrangian(x, v)) >= p * v - 1e-9


def test_radial_wells():
    dw = RadialWell(0.5, 0.5)
    np.testing.assert_allclose(dw(np.array([[0.5], [-0.5], [0.0]])), [0.0, 0.0, 0.125])
    flat = RadialWell(0.0, 0.2)
    assert flat(np.array([[0.1]]))[0] == 0.0


def test_shifted_model():
    m = quadratic_model().shifted(1.0)
    assert m.static(0.0) == pytest.approx(1.0)


def test_structural_constants_for_quadratic():
    c = structural_constants(quadratic_model(), G1.points)
    assert c.C1 == pytest.approx(1.0)
    assert c.C2 == 0.0
    assert c.C3 >= 0.5


def test_gaussian_field_and_lipschitz():
    cp = GaussianCoupling(1.0, 1.0)
    m = GridMeasure.dirac(G1, 0.0)
    x = np.linspace(-1, 1, 11)[:, None]
    np.testing.assert_allclose(cp.field(x, m), np.exp(-x[:, 0] ** 2))
    F = cp.field(G1.points, m)
    slope = np.max(np.abs(np.diff(F))) / G1.h
    assert slope <= cp.spatial_lipschitz
    assert cp.spatial_lipschitz == pytest.approx(np.sqrt(2) * np.exp(-0.5))


def test_field_batch_matches_field():
    cp = GaussianCoupling(0.7, 0.5)
    rng = np.random.default_rng(1)
    ms = [random_measure(G1, rng) for _ in range(3)]
    batch = cp.field_batch(G1.points, G1, np.stack([m.weights for m in ms]))
    for row, m in zip(batch, ms):
        np.testing.assert_allclose(row, cp.field(G1.points, m), rtol=1e-13)


def test_gaussian_coupling_is_monotone():
    rng = np.random.default_rng(3)
    pairs = [(random_measure(G1, rng), random_measure(G1, rng)) for _ in range(20)]
    lhs, _ = check_coupling_monotonicity(GaussianCoupling(1.0, 0.5), pairs)
    assert lhs >= -1e-12


def test_anti_monotone_coupling_is_flagged():
    rng = np.random.default_rng(4)
    pairs = [(random_measure(G1, rng), random_measure(G1, rng)) for _ in range(20)]
    lhs, _ = check_coupling_monotonicity(GaussianCoupling(-1.0, 0.5), pairs)
    assert lhs < 0


def test_product_coupling():
    cp = ProductCoupling(lambda x: x[..., 0], lambda m: float(m.weights @ m.grid.points[:, 0]))
    m = GridMeasure.dirac(G1, 0.5)
    x = np.array([[0.0], [1.0]])
    np.testing.assert_allclose(cp.field(x, m), [0.0, 0.5])
    np.testing.assert_allclose(cp.gradient(x, m), [[0.5], [0.5]], atol=1e-8)


def test_a3_shift_makes_min_zero():
    cp = GaussianCoupling(1.0, 0.5, a3_normalize=True)
    m = GridMeasure.dirac(G1, 0.0)
    Lm = mean_field_lagrangian(quadratic_model(), cp, m)
    assert float(np.min(Lm.static(G1.points))) == pytest.approx(0.0, abs=1e-14)
    assert static_shift(quadratic_model(), cp, m) > 0


def test_no_coupling_returns_base_model():
    base = quadratic_model()
    assert mean_field_lagrangian(base, NoCoupling(), GridMeasure.dirac(G1, 0.0)) is base


def test_w1_oracle_values():
    assert wasserstein1(GridMeasure.dirac(G1, 0.0), GridMeasure.dirac(G1, 0.5)) == pytest.approx(0.5)
    half = GridMeasure.uniform(G1, [G1.nearest([-0.5]), G1.nearest([0.5])])
    assert wasserstein1(GridMeasure.dirac(G1, 0.0), half) == pytest.approx(0.5)


def test_w1_grid_mismatch():
    with pytest.raises(GridMismatch):
        wasserstein1(GridMeasure.dirac(G1, 0.0), GridMeasure.dirac(Grid(interval(), 21), 0.0))


@given(st.integers(0, 10_000))
def test_w1_metric_properties(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_measure(G1, rng, int(rng.integers(1, 6))) for _ in range(3))
    ab, ba = wasserstein1(a, b), wasserstein1(b, a)
    assert ab == pytest.approx(ba, abs=1e-14)
    assert wasserstein1(a, a) == 0.0
    assert wasserstein1(a, c) <= ab + wasserstein1(b, c) + 1e-12


@given(st.integers(0, 10_000))
def test_w1_cdf_matches_lp(seed):
    rng = np.random.default_rng(seed)
    a, b = random_measure(G1, rng, 4), random_measure(G1, rng, 3)
    lp = wasserstein1_lp(G1.points[a.support], a.weights[a.support], G1.points[b.support], b.weights[b.support])
    assert wasserstein1(a, b) == pytest.approx(lp, abs=1e-9)


def test_w1_2d_exact_and_dual():
    g = Grid(disc(), 15)
    a = GridMeasure.dirac(g, [0.0, 0.0])
    b = GridMeasure.dirac(g, [g.points[g.nearest([0.5, 0.0]), 0], 0.0])
    d = wasserstein1(a, b)
    assert d == pytest.approx(np.linalg.norm(g.points[a.support[0]] - g.points[b.support[0]]))
    dual, gap = wasserstein1_dual_gap(a, b)
    assert dual == pytest.approx(d, abs=1e-9)
    assert gap <= 1e-9
