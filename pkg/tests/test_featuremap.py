import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bayestn.featuremap import binary_map, encode, encode_image, trig_map


def trig_reference(x, d):
    """Squares of sqrt(C(d-1, i)) cos^(d-1-i) sin^i, one scalar at a time."""
    c, s = math.cos(math.pi * x / 2), math.sin(math.pi * x / 2)
    return [(math.sqrt(math.comb(d - 1, i)) * c ** (d - 1 - i) * s**i) ** 2 for i in range(d)]


@pytest.mark.parametrize("x, want", [(0.0, [1.0, 0.0]), (1.0, [0.0, 1.0]), (0.25, [0.75, 0.25])])
def test_binary_map_values(x, want):
    np.testing.assert_array_equal(binary_map(x), want)


@pytest.mark.parametrize("x", [-0.01, 1.01, np.nan])
def test_maps_reject_out_of_range(x):
    with pytest.raises(ValueError):
        binary_map(x)
    with pytest.raises(ValueError):
        trig_map(x, 3)


def test_trig_map_rejects_small_d():
    with pytest.raises(ValueError):
        trig_map(0.3, 1)


@pytest.mark.parametrize("d", range(2, 9))
def test_trig_map_at_zero_is_first_event(d):
    v = trig_map(0.0, d)
    assert v[0] == 1.0 and np.all(v[1:] == 0.0)


def test_trig_map_midpoint():
    np.testing.assert_allclose(trig_map(0.5, 2), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(trig_map(0.5, 3), [0.25, 0.5, 0.25], atol=1e-15)
    np.testing.assert_allclose(trig_map(0.5, 4), [0.125, 0.375, 0.375, 0.125], atol=1e-15)


@pytest.mark.parametrize("d", range(2, 9))
def test_trig_map_grid_properties(d):
    xs = np.linspace(0.0, 1.0, 1001)
    v = trig_map(xs, d)
    assert v.shape == (1001, d)
    assert np.all(v >= 0.0)
    assert np.max(np.abs(v.sum(axis=1) - 1.0)) < 1e-12
    # endpoint x = 1 puts (almost) all mass on the last event; cos(pi/2) is ~6e-17
    assert v[-1, -1] == pytest.approx(1.0, abs=1e-15)
    assert np.all(v[-1, :-1] < 1e-30)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(2, 8))
def test_trig_map_matches_scalar_formula(x, d):
    np.testing.assert_allclose(trig_map(x, d), trig_reference(x, d), rtol=0, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0))
def test_binary_map_second_entry_is_feature(x):
    assert binary_map(x)[1] == x


def test_encode_image_all_zero():
    s = encode_image(np.zeros(16), 3, d=4)
    assert s.label == 3
    np.testing.assert_array_equal(s.roots, np.tile([1.0, 0.0, 0.0, 0.0], (16, 1)))


def test_encode_linear_and_order():
    s = encode_image([0.0, 1.0], 0, d=2, feature_map="linear")
    np.testing.assert_array_equal(s.roots, [[1.0, 0.0], [0.0, 1.0]])
    x = np.array([[0.1, 0.9, 0.4]])
    np.testing.assert_array_equal(encode(x, 2, "linear")[0, :, 1], x[0])


def test_encode_rejects_bad_config():
    with pytest.raises(ValueError):
        encode(np.zeros(3), 3, "linear")
    with pytest.raises(ValueError):
        encode(np.zeros(3), 2, "sigmoid")
