import numpy as np
import pytest

from constrained_mfg.errors import ConstraintQualificationFailed
from constrained_mfg.geometry import interval
from constrained_mfg.grid import Grid
from constrained_mfg.hjsolver import ergodic_solve
from constrained_mfg.library import named_model
from constrained_mfg.mather import argmin_nodes, default_tol_static, mather_measure_check, mather_set, static_lipschitz
from constrained_mfg.model import QuadraticWell, quadratic_model

G = Grid(interval(), 81)


def test_quadratic_well_has_single_mather_point():
    data = mather_set(named_model("QUAD1D"), G)
    assert data.points[:, 0].tolist() == [0.0]
    assert data.critical_value == 0.0
    assert data.measure.weights.sum() == pytest.approx(1.0)


def test_double_well_keeps_symmetric_ties():
    data = mather_set(named_model("DOUBLE_WELL"), G)
    np.testing.assert_allclose(np.sort(data.points[:, 0]), [-0.5, 0.5])
    np.testing.assert_allclose(data.measure.weights[data.nodes], [0.5, 0.5])


def test_flat_bottom_gives_an_interval():
    data = mather_set(named_model("FLAT_BOTTOM"), G)
    x = np.sort(data.points[:, 0])
    assert x[0] == pytest.approx(-0.2) and x[-1] == pytest.approx(0.2)
    assert len(x) == 17


def test_offset_shifts_critical_value():
    assert mather_set(named_model("SHIFTED"), G).critical_value == pytest.approx(-1.0)


def test_constraint_qualification_failure():
    m = quadratic_model(QuadraticWell(center=3.0))
    with pytest.raises(ConstraintQualificationFailed):
        mather_set(m, G)
    data = mather_set(m, G, check_qualification=False)
    assert data.points[0, 0] == 1.0


def test_static_tolerance_scales_with_h():
    m = named_model("QUAD1D")
    assert static_lipschitz(m, G) == pytest.approx(1.0 - G.h / 2)
    assert default_tol_static(m, G) == pytest.approx(2 * static_lipschitz(m, G) * G.h)


def test_argmin_tie_tolerance():
    v = np.array([1.0, 0.0, 1e-14, 1e-3])
    assert argmin_nodes(v).tolist() == [1, 2]
    assert argmin_nodes(v, tie_tol=1e-2).tolist() == [1, 2, 3]


@pytest.mark.parametrize("name", ["QUAD1D", "DOUBLE_WELL", "OFF_CENTER", "QUARTIC"])
def test_mather_measure_check_passes(name):
    m = named_model(name)
    sol = ergodic_solve(m, G, G.h)
    report = mather_measure_check(mather_set(m, G), sol, m)
    assert report["passed"], report
    assert report["max_speed"] <= 10 * G.h
