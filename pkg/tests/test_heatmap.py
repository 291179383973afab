import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hrcount.engine import Tensor, backward
from hrcount.heatmap import (
    ActivationMap, DotAnnotation, GamConfig, gaussian_kernel, normalize_map, render_gam, splat,
)


def splat_oracle(dots, H, W, sigma, radius):
    """Per-pixel evaluation of the truncated, peak-1 Gaussian around each dot's pixel."""
    out = np.zeros((H, W))
    for x, y in dots:
        r0, c0 = math.floor(y), math.floor(x)
        for i in range(H):
            for j in range(W):
                if abs(i - r0) <= radius and abs(j - c0) <= radius:
                    out[i, j] += math.exp(-((i - r0) ** 2 + (j - c0) ** 2) / (2 * sigma ** 2))
    return out


dots_st = st.lists(st.tuples(st.floats(0, 31.999), st.floats(0, 31.999)), max_size=6)


def test_kernel_values():
    k = gaussian_kernel(2.0, 6)
    assert k.shape == (13, 13)
    assert k[6, 6] == 1.0
    assert k[6, 8] == pytest.approx(math.exp(-0.5), rel=1e-15)
    np.testing.assert_array_equal(k, k[::-1])
    np.testing.assert_array_equal(k, k.T)


@pytest.mark.parametrize("sigma,radius", [(0.0, 3), (-1.0, 3), (1.0, -1)])
def test_kernel_rejects_bad_parameters(sigma, radius):
    with pytest.raises(ValueError):
        gaussian_kernel(sigma, radius)


def test_default_radius_is_three_sigma():
    assert GamConfig(sigma=2.0).radius == 6
    assert GamConfig(sigma=1.2).radius == 4
    assert GamConfig(sigma=2.0, kernel_radius=2).radius == 2


def test_splat_matches_oracle_with_border_truncation(rng):
    dots = [(0.2, 0.7), (15.5, 3.2), (8.0, 8.0), (8.3, 8.9)]
    np.testing.assert_allclose(splat(dots, (16, 20), 1.5, 4), splat_oracle(dots, 16, 20, 1.5, 4),
                               rtol=0, atol=1e-14)


def test_no_dots_is_all_zero():
    m = render_gam(DotAnnotation(()), (64, 64), GamConfig())
    assert m.values.shape == (8, 8) and not m.values.any()


def test_coincident_dots_double_exactly():
    cfg = GamConfig(sigma=3.0)
    one = render_gam([(20.3, 40.8)], (64, 64), cfg).values
    two = render_gam([(20.3, 40.8), (20.3, 40.8)], (64, 64), cfg).values
    np.testing.assert_array_equal(two, 2 * one)


def test_centered_dot_peaks_in_central_cells():
    m = render_gam([(32.0, 32.0)], (64, 64), GamConfig(sigma=4.0, downscale=8)).values
    r, c = np.unravel_index(np.argmax(m), m.shape)
    assert r in (3, 4) and c in (3, 4)


def test_point_symmetric_dots_give_point_symmetric_map():
    # pixels 31 and 32 mirror each other under a 180-degree turn of a 64-pixel axis
    m = render_gam([(31.5, 31.5), (32.5, 32.5)], (64, 64), GamConfig(sigma=4.0)).values
    np.testing.assert_allclose(m, m[::-1, ::-1], rtol=0, atol=1e-12)
    r, c = np.unravel_index(np.argmax(m), m.shape)
    assert r in (3, 4) and c in (3, 4)


def test_interior_mass_equals_kernel_sum():
    cfg = GamConfig(sigma=2.0, downscale=8)
    k = gaussian_kernel(cfg.sigma, cfg.radius)
    # farther than radius + stride from every border
    m = render_gam([(31.7, 30.2)], (64, 64), cfg)
    assert m.values.sum() * 64 == pytest.approx(k.sum(), rel=1e-12)


@pytest.mark.parametrize("ann,extents", [([(64.0, 10.0)], (64, 64)), ([(-0.1, 3.0)], (64, 64)),
                                         ([(1.0, 1.0)], (60, 64))])
def test_render_gam_errors(ann, extents):
    with pytest.raises(ValueError):
        render_gam(ann, extents, GamConfig())


def test_activation_map_checks_tiling():
    with pytest.raises(ValueError):
        ActivationMap(np.zeros((4, 4)), 8, (64, 64))


def test_normalize_examples():
    assert not normalize_map(np.full((3, 3), 5.0)).any()
    np.testing.assert_array_equal(normalize_map(np.array([[0.0, 1.0, 2.0]]), eps=0.0),
                                  [[0.0, 0.5, 1.0]])


def test_normalize_tensor_per_map_with_constant_stats():
    x = Tensor(np.array([[[0.0, 1.0], [2.0, 4.0]], [[1.0, 1.0], [1.0, 3.0]]]), requires_grad=True)
    y = normalize_map(x, eps=0.0)
    np.testing.assert_allclose(y.data[0], [[0, 0.25], [0.5, 1]])
    np.testing.assert_allclose(y.data[1], [[0, 0], [0, 1]])
    backward(y.sum())
    # min and max carry no gradient: every entry gets 1 / range
    np.testing.assert_allclose(x.grad[0], np.full((2, 2), 0.25))
    np.testing.assert_allclose(x.grad[1], np.full((2, 2), 0.5))


@settings(max_examples=50, deadline=None)
@given(dots_st)
def test_sum_conservation_under_downscaling(dots):
    cfg = GamConfig(sigma=1.5, downscale=4)
    full = splat(dots, (32, 32), cfg.sigma, cfg.radius)
    down = render_gam(dots, (32, 32), cfg).values
    assert down.sum() == pytest.approx(full.sum() / 16, rel=1e-9, abs=1e-300)


@settings(max_examples=50, deadline=None)
@given(dots_st, st.tuples(st.floats(0, 31.999), st.floats(0, 31.999)))
def test_adding_a_dot_never_decreases_a_cell(dots, extra):
    cfg = GamConfig(sigma=2.0, downscale=4)
    a = render_gam(dots, (32, 32), cfg).values
    b = render_gam(dots + [extra], (32, 32), cfg).values
    assert np.all(b >= a)


@settings(max_examples=50, deadline=None)
@given(dots_st, st.randoms(use_true_random=False))
def test_permutation_invariance(dots, rnd):
    cfg = GamConfig(sigma=2.0, downscale=4)
    shuffled = list(dots)
    rnd.shuffle(shuffled)
    np.testing.assert_allclose(render_gam(dots, (32, 32), cfg).values,
                               render_gam(shuffled, (32, 32), cfg).values, rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=16), st.floats(1e-9, 1.0))
def test_normalized_range_within_unit_interval(vals, eps):
    y = normalize_map(np.array(vals).reshape(1, -1), eps)
    assert y.min() >= 0 and y.max() <= 1
