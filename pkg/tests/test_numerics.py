import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from desvq import numerics
from desvq.errors import InvalidInputError, ShapeError


def orth_err(q):
    return np.max(np.abs(q.T @ q - np.eye(q.shape[1])))


def test_svd_hand_case():
    f = numerics.svd([[3.0], [4.0]])
    assert f.s == pytest.approx([5.0])
    assert np.allclose(np.abs(f.u[:, 0]), [0.6, 0.8])
    # largest-magnitude entry of each left vector is nonnegative
    assert f.u[np.argmax(np.abs(f.u[:, 0])), 0] > 0


def test_svd_random_64x32():
    m = np.random.default_rng(0).standard_normal((64, 32))
    f = numerics.svd(m)
    rec = numerics.reconstruct(f)
    assert numerics.frobenius_norm(rec - m) / numerics.frobenius_norm(m) <= 1e-5
    assert orth_err(f.u) <= 1e-6
    assert orth_err(f.v) <= 1e-6
    assert np.allclose(f.s, np.linalg.svd(m, compute_uv=False), atol=1e-10)


def test_svd_wide_and_rank_deficient():
    rng = np.random.default_rng(1)
    wide = rng.standard_normal((3, 7))
    f = numerics.svd(wide)
    assert f.u.shape == (3, 3) and f.v.shape == (7, 7) and f.s.shape == (3,)
    assert np.allclose(numerics.reconstruct(f), wide, atol=1e-12)

    low = np.outer(rng.standard_normal(6), rng.standard_normal(4))
    f = numerics.svd(low)
    assert np.all(f.s[1:] < 1e-12)
    assert orth_err(f.u) < 1e-10
    assert np.allclose(numerics.reconstruct(f), low, atol=1e-12)


def test_svd_zero_matrix():
    f = numerics.svd(np.zeros((4, 2)))
    assert np.all(f.s == 0)
    assert orth_err(f.u) < 1e-12


def test_svd_descending_and_readonly():
    f = numerics.svd(np.random.default_rng(2).standard_normal((9, 5)))
    assert np.all(np.diff(f.s) <= 0)
    with pytest.raises(ValueError):
        f.s[0] = 1.0


def test_reconstruct_8x4():
    m = np.random.default_rng(3).standard_normal((8, 4))
    rec = numerics.reconstruct(numerics.svd(m))
    assert numerics.max_abs_diff(rec, m) <= 1e-5 * numerics.frobenius_norm(m)


def test_small_helpers():
    assert np.array_equal(numerics.matmul([[1, 2], [3, 4]], [[5], [6]]), [[17], [39]])
    assert numerics.frobenius_norm([[3, 4]]) == 5.0
    assert numerics.max_abs_diff([[1]], [[-2]]) == 3.0
    d = numerics.diag_rect([1.0, 2.0], 3, 2)
    assert np.array_equal(d, [[1, 0], [0, 2], [0, 0]])


def test_validation():
    with pytest.raises(InvalidInputError):
        numerics.svd([[1.0, np.nan]])
    with pytest.raises(ShapeError):
        numerics.svd(np.zeros((2, 2, 2)))
    with pytest.raises(ShapeError):
        numerics.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        numerics.max_abs_diff(np.ones((2, 3)), np.ones((3, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_svd_property(a, b, seed):
    m = np.random.default_rng(seed).standard_normal((a, b))
    f = numerics.svd(m)
    assert np.allclose(numerics.reconstruct(f), m, atol=1e-10)
    assert orth_err(f.u) < 1e-10 and orth_err(f.v) < 1e-10
    assert np.all(f.s >= 0)
