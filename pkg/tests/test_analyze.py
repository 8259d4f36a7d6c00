import numpy as np
import pytest

from desvq import analyze
from desvq.errors import InvalidInputError, ShapeError

from oracles import curve_ref, disturbance_ref


def test_disturbance_hand_case():
    assert analyze.disturbance_magnitude([[1, 2]], [[1.5, 2.5]]) == 0.5
    assert analyze.disturbance_magnitude(np.eye(3), np.eye(3)) == 0.0
    with pytest.raises(ShapeError):
        analyze.disturbance_magnitude(np.ones((2, 2)), np.ones((2, 3)))


def test_disturbance_matches_loop():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b = rng.standard_normal((5, 7)), rng.standard_normal((5, 7))
        assert analyze.disturbance_magnitude(a, b) == pytest.approx(disturbance_ref(a, b), rel=1e-12)


def test_curve_against_reference_svd():
    h = np.random.default_rng(1).standard_normal((32, 16))
    c = analyze.expressiveness_curve(h)
    assert np.allclose(c.points, curve_ref(h), atol=1e-9)


def test_curve_shape_properties():
    h = np.random.default_rng(2).standard_normal((10, 4))
    p = analyze.expressiveness_curve(h).points
    assert len(p) == 4 and p[-1] == 1.0 and np.all(np.diff(p) >= 0)
    q = analyze.expressiveness_curve(7.5 * h).points
    assert np.allclose(p, q, atol=1e-12)


def test_curve_all_zero_rejected():
    with pytest.raises(InvalidInputError):
        analyze.expressiveness_curve(np.zeros((3, 3)))


def test_rank_one_curve_is_flat():
    h = np.outer(np.arange(1.0, 5.0), np.ones(3))
    p = analyze.expressiveness_curve(h).points
    assert p[0] == pytest.approx(1.0)


def test_compare_curves():
    r = analyze.compare_curves([0.5, 1.0], [0.6, 1.0])
    assert r.deviation == pytest.approx(0.1) and not r.padded
    r = analyze.compare_curves([0.5, 1.0], [0.3, 0.9, 1.0])
    assert r.padded and r.deviation == pytest.approx(0.2)


def test_curves_csv():
    text = analyze.curves_csv({"a": [0.5, 1.0], "b": [1.0]})
    assert text == "index,a,b\n0,0.5,1.0\n1,1.0,1.0\n"
