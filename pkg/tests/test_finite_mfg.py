import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from constrained_mfg.errors import NonConvergence
from constrained_mfg.finite_mfg import (
    best_response,
    energy_estimate_eval,
    equilibrium_fixed_point,
    read_path_table,
    stay_flux,
    write_path_table,
)
from constrained_mfg.geometry import interval
from constrained_mfg.grid import Grid, GridMeasure
from constrained_mfg.hjsolver import LaxOleinikOperator
from constrained_mfg.model import GaussianCoupling, NoCoupling, quadratic_model

QUAD = quadratic_model(label="QUAD1D")
CP = GaussianCoupling(1.0, 0.5, a3_normalize=True)
G = Grid(interval(), 41)
DT = G.h


def test_zero_coupling_at_mather_point_stays_put():
    m0 = GridMeasure.dirac(G, 0.0)
    path = equilibrium_fixed_point(QUAD, NoCoupling(), m0, np.zeros(G.size), 1.0, DT)
    assert path.exploitability_trace == [0.0]
    assert np.all(path.measures == m0.weights)


def test_zero_coupling_transports_toward_mather_point():
    m0 = GridMeasure.dirac(G, 0.9)
    path = equilibrium_fixed_point(QUAD, NoCoupling(), m0, np.zeros(G.size), 2.0, DT, averaging="none", tol_expl=1e-12)
    assert len(path.exploitability_trace) == 2 and abs(path.exploitability) <= 1e-12
    mean_abs = path.measures @ np.abs(G.points[:, 0])
    assert mean_abs[0] == pytest.approx(0.9)
    assert np.all(np.diff(mean_abs) <= 1e-12)
    assert mean_abs[-1] < 0.5


def test_initial_marginal_and_terminal_value_are_exact():
    m0 = GridMeasure.uniform(G)
    u_f = 0.3 * G.points[:, 0] ** 2
    path = equilibrium_fixed_point(QUAD, CP, m0, u_f, 1.0, DT, averaging="simplicial")
    np.testing.assert_array_equal(path.measures[0], m0.weights)
    np.testing.assert_array_equal(path.values[-1], u_f)
    np.testing.assert_allclose(path.measures.sum(axis=1), 1.0, atol=1e-12)
    assert path.converged and path.exploitability <= 1e-3


def test_simplicial_exploitability_matches_dynamic_programming():
    m0 = GridMeasure.dirac(G, 0.9)
    u_f = np.zeros(G.size)
    path = equilibrium_fixed_point(QUAD, CP, m0, u_f, 1.0, DT, averaging="simplicial", tol_expl=1e-6)
    _, _, expl, _ = best_response(QUAD, CP, path.measures, u_f, 1.0, DT, m0, path.flux, path.operator)
    assert expl == pytest.approx(path.exploitability, abs=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("averaging", ["fictitious", "simplicial"])
def test_equilibrium_reaches_tolerance_at_t5(averaging):
    g = Grid(interval(), 161)
    path = equilibrium_fixed_point(QUAD, CP, GridMeasure.dirac(g, 0.9), np.zeros(g.size), 5.0, g.h,
                                   averaging=averaging, tol_expl=1e-3, max_outer=200)
    assert path.exploitability < 1e-3
    assert len(path.exploitability_trace) <= 201


def test_nonconvergence_returns_path():
    with pytest.raises(NonConvergence) as info:
        equilibrium_fixed_point(QUAD, CP, GridMeasure.dirac(G, 0.9), np.zeros(G.size), 1.0, DT, max_outer=1, tol_expl=1e-14)
    path = info.value.result
    assert not path.converged and len(path.exploitability_trace) == 2


def test_unknown_averaging():
    with pytest.raises(ValueError):
        equilibrium_fixed_point(QUAD, CP, GridMeasure.uniform(G), np.zeros(G.size), 1.0, DT, averaging="x")


def test_mixed_path_needs_flux():
    W = np.tile(GridMeasure.uniform(G).weights, (21, 1))
    W[3] = GridMeasure.dirac(G, 0.0).weights
    with pytest.raises(ValueError):
        best_response(QUAD, CP, W, np.zeros(G.size), 0.5, 0.025, GridMeasure.uniform(G))


@settings(max_examples=20)
@given(st.lists(st.floats(0, 1), min_size=G.size, max_size=G.size).filter(lambda w: sum(w) > 1e-3))
def test_exploitability_is_nonnegative(w):
    m0 = GridMeasure.from_weights(G, np.array(w) / sum(w))
    op = LaxOleinikOperator(QUAD, G, DT)
    N = 8
    W = np.tile(m0.weights, (N + 1, 1))
    _, _, expl, flux_hat = best_response(QUAD, CP, W, np.zeros(G.size), N * DT, DT, m0, stay_flux(op, m0.weights, N), op)
    assert expl >= -1e-12
    # the best response itself has zero exploitability against the same path
    _, _, e2, _ = best_response(QUAD, CP, W, np.zeros(G.size), N * DT, DT, m0, flux_hat, op)
    assert abs(e2) <= 1e-12


def test_energy_vanishes_on_the_reference_measure():
    m = GridMeasure.dirac(G, 0.0)
    path = equilibrium_fixed_point(QUAD, NoCoupling(), m, np.zeros(G.size), 1.0, DT)
    assert energy_estimate_eval(path, CP, m) == 0.0
    assert energy_estimate_eval(path, CP, GridMeasure.dirac(G, 0.5)) > 0.0


def test_path_table_round_trip(tmp_path):
    path = equilibrium_fixed_point(QUAD, CP, GridMeasure.dirac(G, 0.5), np.zeros(G.size), 0.5, DT, averaging="simplicial")
    write_path_table(path, tmp_path, "T0.5")
    M, U, manifest = read_path_table(tmp_path, "T0.5")
    np.testing.assert_array_equal(M, path.measures)
    np.testing.assert_array_equal(U, path.values)
    assert manifest["steps"] == path.steps
