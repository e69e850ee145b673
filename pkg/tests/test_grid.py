import numpy as np
import pytest
from hypothesis import given, strategies as st

from constrained_mfg.errors import GridMismatch
from constrained_mfg.geometry import box, disc, interval
from constrained_mfg.grid import Grid, GridMeasure, check_same_grid


def test_default_grid_spacing_and_symmetry():
    g = Grid(interval(), 161)
    assert g.h == pytest.approx(0.0125)
    assert g.size == 161
    np.testing.assert_array_equal(g.points[::-1, 0], -g.points[:, 0])
    assert g.points[g.reference, 0] == 0.0


def test_disc_grid_keeps_only_inside_nodes():
    g = Grid(disc(), 21)
    r = np.linalg.norm(g.points, axis=1)
    assert np.all(r <= 1 + 1e-12)
    assert not np.any(g.corner)


def test_box_corners():
    g = Grid(box([0, 0], [1, 1]), 5)
    assert g.corner.sum() == 4 * 4  # a 2x2 block within h of two faces at each corner


def test_nearest_prefers_smaller_index_on_ties():
    g = Grid(interval(), 5)  # nodes -1, -0.5, 0, 0.5, 1
    assert g.nearest([0.25]) == 2


def test_quadrature_integrates_constants():
    g = Grid(interval(), 161)
    assert g.quadrature_weights().sum() == pytest.approx(2.0)


def test_measure_validation():
    g = Grid(interval(), 11)
    with pytest.raises(ValueError):
        GridMeasure(g, np.full(11, 0.2))
    with pytest.raises(ValueError):
        GridMeasure(g, np.r_[-0.1, 1.1, np.zeros(9)])
    m = GridMeasure.dirac(g, 0.0)
    assert m.support.tolist() == [5]
    with pytest.raises(ValueError):
        m.weights[0] = 1.0


@given(st.lists(st.floats(0, 10), min_size=11, max_size=11).filter(lambda w: sum(w) > 1e-3))
def test_from_weights_is_a_probability(w):
    g = Grid(interval(), 11)
    m = GridMeasure.from_weights(g, w)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(m.weights >= 0)


def test_grid_mismatch():
    with pytest.raises(GridMismatch):
        check_same_grid(Grid(interval(), 11), Grid(interval(), 21))
    check_same_grid(Grid(interval(), 11), Grid(interval(), 11))
