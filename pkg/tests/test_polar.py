import numpy as np
import pytest

from flowscan import (PolarGridSpec, RejectedInputError, cartesian_to_polar,
                      density_weights, polar_to_cartesian, validity_mask)


def _smooth_cart(spec, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:spec.cart_h, 0:spec.cart_w].astype(float)
    field = 0.5 + 0.25 * np.sin(2 * np.pi * yy / spec.cart_h) * np.cos(
        2 * np.pi * xx / spec.cart_w)
    field += 0.05 * rng.standard_normal()  # constant offset, stays smooth
    return np.clip(field, 0.0, 1.0)


# ---------------------------------------------------------------------------
# spec validation
# ---------------------------------------------------------------------------

def test_default_spec_geometry():
    spec = PolarGridSpec()
    assert spec.n_r == 64 and spec.n_gamma == 64
    assert spec.cart_h == 112 and spec.cart_w == 112
    assert spec.n_pixels == 64 * 64
    assert spec.radii().shape == (64,)
    assert spec.angles().shape == (64,)
    assert spec.radii()[0] == 0.0
    np.testing.assert_allclose(spec.radii()[-1], spec.r_max)
    np.testing.assert_allclose(spec.angles()[0], -spec.gamma_max)
    np.testing.assert_allclose(spec.angles()[-1], spec.gamma_max)


@pytest.mark.parametrize("kw", [
    {"n_r": 0}, {"n_gamma": 1}, {"r_max": 0.0}, {"r_max": -1.0},
    {"gamma_min": 0.7}, {"cart_h": 0}, {"cart_w": 1},
])
def test_invalid_spec_rejected(kw):
    with pytest.raises(RejectedInputError):
        PolarGridSpec(**kw)


# ---------------------------------------------------------------------------
# resampling transforms
# ---------------------------------------------------------------------------

def test_constant_cartesian_maps_to_constant_polar(tiny_spec):
    cart = np.full((tiny_spec.cart_h, tiny_spec.cart_w), 0.5)
    polar = cartesian_to_polar(cart, tiny_spec)
    assert polar.shape == (tiny_spec.n_r, tiny_spec.n_gamma)
    np.testing.assert_allclose(polar, 0.5, atol=1e-12)


def test_constant_polar_maps_to_constant_inside_sector(tiny_spec):
    polar = np.full((tiny_spec.n_r, tiny_spec.n_gamma), 0.25)
    cart = polar_to_cartesian(polar, tiny_spec)
    mask = validity_mask(tiny_spec)
    assert cart.shape == (tiny_spec.cart_h, tiny_spec.cart_w)
    np.testing.assert_allclose(cart[mask], 0.25, atol=1e-12)
    np.testing.assert_array_equal(cart[~mask], 0.0)


def test_transforms_are_linear(tiny_spec):
    rng = np.random.default_rng(1)
    a, b = 0.7, -0.3
    x = rng.random((tiny_spec.cart_h, tiny_spec.cart_w))
    y = rng.random((tiny_spec.cart_h, tiny_spec.cart_w))
    lhs = cartesian_to_polar(a * x + b * y, tiny_spec)
    rhs = a * cartesian_to_polar(x, tiny_spec) + b * cartesian_to_polar(
        y, tiny_spec)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    p = rng.random((tiny_spec.n_r, tiny_spec.n_gamma))
    q = rng.random((tiny_spec.n_r, tiny_spec.n_gamma))
    lhs = polar_to_cartesian(a * p + b * q, tiny_spec)
    rhs = a * polar_to_cartesian(p, tiny_spec) + b * polar_to_cartesian(
        q, tiny_spec)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_round_trip_preserves_smooth_fields(tiny_spec):
    cart = _smooth_cart(tiny_spec)
    mask = validity_mask(tiny_spec)
    back = polar_to_cartesian(cartesian_to_polar(cart, tiny_spec), tiny_spec)
    err = np.abs(back - cart)[mask]
    assert err.mean() < 0.02
    assert err.max() < 0.15


def test_transform_rejects_wrong_shape(tiny_spec):
    with pytest.raises(RejectedInputError):
        cartesian_to_polar(np.zeros((5, 5)), tiny_spec)
    with pytest.raises(RejectedInputError):
        polar_to_cartesian(np.zeros((5, 5)), tiny_spec)


def test_transform_rejects_non_finite(tiny_spec):
    cart = np.zeros((tiny_spec.cart_h, tiny_spec.cart_w))
    cart[3, 3] = np.nan
    with pytest.raises(RejectedInputError):
        cartesian_to_polar(cart, tiny_spec)


# ---------------------------------------------------------------------------
# validity mask
# ---------------------------------------------------------------------------

def test_validity_mask_covers_apex_not_corners(tiny_spec):
    mask = validity_mask(tiny_spec)
    assert mask.dtype == bool
    # pixels just below the apex sit inside the sector cone
    assert mask[1, (tiny_spec.cart_w - 1) // 2]
    assert mask[1, tiny_spec.cart_w // 2]
    assert not mask[0, 0]
    assert not mask[0, -1]
    assert not mask[-1, 0]
    assert not mask[-1, -1]
    # a sector occupies a strict subset of the canvas but is non-trivial
    frac = mask.mean()
    assert 0.15 < frac < 0.9


def test_validity_mask_matches_transform_support(tiny_spec):
    ones = np.ones((tiny_spec.n_r, tiny_spec.n_gamma))
    cart = polar_to_cartesian(ones, tiny_spec)
    mask = validity_mask(tiny_spec)
    np.testing.assert_array_equal(cart > 0, mask)


# ---------------------------------------------------------------------------
# depth-proportional loss weights
# ---------------------------------------------------------------------------

def test_density_weights_shape_and_normalization(tiny_spec):
    w = density_weights(tiny_spec)
    assert w.shape == (tiny_spec.n_r, tiny_spec.n_gamma)
    assert (w > 0).all()
    np.testing.assert_allclose(w.mean(), 1.0, atol=1e-12)
    # identical across columns
    np.testing.assert_array_equal(w, np.repeat(w[:, :1], tiny_spec.n_gamma,
                                               axis=1))


def test_density_weights_proportional_to_radius(tiny_spec):
    w = density_weights(tiny_spec)[:, 0]
    # doubling the radius doubles the weight (rows 2i vs i, i >= 1)
    for i in range(1, tiny_spec.n_r // 2):
        np.testing.assert_allclose(w[2 * i] / w[i], 2.0, rtol=1e-9)
    # rows are non-decreasing with depth
    assert (np.diff(w) >= -1e-15).all()


def test_density_weights_apex_row_positive_fraction(tiny_spec):
    w = density_weights(tiny_spec)[:, 0]
    # the apex row has zero radius but keeps a small positive weight
    assert 0 < w[0] < w[1]
    np.testing.assert_allclose(w[0] / w[1], 0.125, rtol=1e-9)


def test_weighted_mean_of_constant_field_is_identity(tiny_spec):
    w = density_weights(tiny_spec)
    const = np.full_like(w, 0.37)
    np.testing.assert_allclose((w * const).mean(), 0.37, rtol=1e-12)
