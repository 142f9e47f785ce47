import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gasmarket.collocation import (build_grid, diff_matrix, extend_horizon, extended_hourly, interpolate,
                                   periodic_interpolator, sample_hourly)


def test_grid_basics():
    g = build_grid(24.0, 48)
    assert g.spacing == 0.5
    assert g.points[0] == 0.0 and g.points[-1] == pytest.approx(23.5)
    assert g.weights.sum() == pytest.approx(24.0)
    with pytest.raises(ValueError):
        build_grid(24.0, 1)
    with pytest.raises(ValueError):
        build_grid(0.0, 4)


def test_diff_matrix_entries():
    D = diff_matrix(build_grid(1.0, 4)).toarray()
    expect = 4.0 * (np.roll(np.eye(4), 1, axis=1) - np.eye(4))
    np.testing.assert_array_equal(D, expect)
    assert D[3, 0] == 4.0


@pytest.mark.parametrize("n", [2, 5, 24, 97])
def test_diff_matrix_structure(n):
    D = diff_matrix(build_grid(3.0, n))
    assert D.nnz == 2 * n
    assert np.abs(D @ np.ones(n)).max() == 0.0


def test_diff_matrix_first_order():
    errs = []
    for n in (50, 100, 200):
        g = build_grid(2 * np.pi, n)
        errs.append(np.abs(diff_matrix(g) @ np.sin(g.points) - np.cos(g.points)).max())
    for a, b in zip(errs, errs[1:]):
        assert 1.8 <= a / b <= 2.2


@given(arrays(float, 16, elements=st.floats(-1e3, 1e3)), st.floats(0.5, 50.0))
def test_derivative_integrates_to_zero(y, T):
    g = build_grid(T, 16)
    assert abs(np.sum((diff_matrix(g) @ y) * g.weights)) <= 1e-9 * max(1.0, np.abs(y).max())


def test_interpolation_examples():
    g = build_grid(2.0, 2)
    assert interpolate(np.array([1.0, 3.0]), g, 0.5) == pytest.approx(2.0)
    assert interpolate(np.array([1.0, 3.0]), g, 1.5) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        interpolate(np.array([1.0, 3.0]), g, 2.0)
    with pytest.raises(ValueError):
        interpolate(np.array([1.0, 3.0]), g, -0.1)
    f = periodic_interpolator(np.array([1.0, 3.0]), g)
    assert f(2.5) == pytest.approx(2.0) and f(-1.0) == pytest.approx(3.0)


@given(arrays(float, 8, elements=st.floats(-10, 10)))
def test_interpolant_hits_nodes(v):
    g = build_grid(4.0, 8)
    np.testing.assert_allclose(interpolate(v, g, g.points), v, atol=1e-12)


def test_sample_hourly():
    s = np.arange(24.0)
    np.testing.assert_array_equal(sample_hourly(s, np.array([0.0, 0.5, 23.99]), 1.0), [0, 0, 23])
    assert sample_hourly(7.0, np.array([3.0]), 1.0)[0] == 7.0
    with pytest.raises(ValueError):
        sample_hourly(s, np.array([24.0]), 1.0)


def test_extension_ramp():
    h = lambda t: 1.0 + t / 24.0 if t <= 24 else None
    ext = extend_horizon(h, 24.0, 2.0)
    assert ext(24.0) == pytest.approx(2.0)
    assert ext(25.0) == pytest.approx(1.5)
    assert ext(26.0) == pytest.approx(1.0)
    assert ext(12.0) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        extend_horizon(h, 24.0, 0.0)


def test_extension_constant_when_periodic():
    ext = extend_horizon(lambda t: 3.0, 24.0, 4.0)
    np.testing.assert_allclose(ext(np.linspace(24.0, 28.0, 5)), 3.0)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.5, 6.0))
def test_extension_closes_on_start(a, b, tau):
    ext = extend_horizon(lambda t: a + (b - a) * t / 10.0, 10.0, tau)
    assert ext(10.0 + tau) == pytest.approx(a, abs=1e-12)
    assert ext(0.0) == pytest.approx(a, abs=1e-12)


def test_extended_hourly_blocks():
    s = np.array([1.0, 1.0, 3.0])
    t = np.array([0.0, 2.0, 3.0, 4.0, 5.0])
    np.testing.assert_allclose(extended_hourly(s, t, 3.0, 2.0, 1.0), [1.0, 3.0, 3.0, 2.0, 1.0])
    inf = np.array([np.inf, np.inf, np.inf])
    assert np.all(np.isinf(extended_hourly(inf, t, 3.0, 2.0, 1.0)))
