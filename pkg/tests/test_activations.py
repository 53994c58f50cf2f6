"""Tests for knot-parametrized activations."""

import numpy as np
import pytest

from flowrecon.activations import (
    ActivationKnots,
    apply_activation,
    apply_complex,
    pl_activation,
    rbf_activation,
)
from flowrecon.const import VN_KNOT_SPACING, VN_KNOTS
from flowrecon.models import ConfigError

KINDS = ["piecewise_linear", "rbf"]


def test_piecewise_linear_identity_is_exact_inside_range(rng):
    knots = ActivationKnots.identity(VN_KNOTS, VN_KNOT_SPACING)
    edge = knots.abscissae[-1]
    h = rng.uniform(-edge, edge, 1000)
    result = pl_activation(h, knots)
    np.testing.assert_allclose(result.value, h, atol=1e-12)
    np.testing.assert_allclose(result.slope, 1.0, atol=1e-9)


def test_piecewise_linear_clamps_outside_range():
    knots = ActivationKnots.identity(11, 0.5)
    result = pl_activation(np.array([-10.0, 10.0]), knots)
    np.testing.assert_allclose(result.value, [-2.5, 2.5])
    np.testing.assert_array_equal(result.slope, [0.0, 0.0])


def test_rbf_identity_inside_range(rng):
    knots = ActivationKnots.identity(VN_KNOTS, VN_KNOT_SPACING, kind="rbf")
    h = rng.uniform(-5.0, 5.0, 500)
    result = rbf_activation(h, knots)
    np.testing.assert_allclose(result.value, h, atol=1e-6)
    np.testing.assert_allclose(result.slope, 1.0, atol=1e-5)


def test_rbf_of_zero_knots_is_zero(rng):
    knots = ActivationKnots(np.zeros(VN_KNOTS), VN_KNOT_SPACING)
    result = rbf_activation(rng.uniform(-10.0, 10.0, 300), knots)
    assert np.all(result.value == 0)
    assert np.all(result.slope == 0)


def test_rbf_single_knot_is_gaussian_bump():
    phi = np.zeros(11)
    phi[7] = 2.0
    knots = ActivationKnots(phi, 0.5)
    center = knots.abscissae[7]
    h = center + np.linspace(-2.0, 2.0, 401)
    result = rbf_activation(h, knots)
    np.testing.assert_allclose(result.value, 2.0 * np.exp(-((h - center) ** 2) / 0.5), atol=1e-10)
    assert h[np.argmax(result.value)] == pytest.approx(center, abs=1e-10)
    assert result.value.max() == pytest.approx(2.0, abs=1e-10)


def test_piecewise_linear_maps_non_finite_to_nan():
    knots = ActivationKnots.identity(11, 0.5)
    result = pl_activation(np.array([np.nan, 0.25, np.inf, -np.inf]), knots)
    assert np.isnan(result.value[[0, 2, 3]]).all()
    assert np.isnan(result.slope[[0, 2, 3]]).all()
    assert result.value[1] == pytest.approx(0.25)


def test_constant_knots():
    knots = ActivationKnots.constant(21, 0.0, 0.5)
    assert knots.abscissae[0] == 0.0
    assert knots.abscissae[-1] == pytest.approx(0.5)
    assert pl_activation(np.asarray(0.1), knots).value == pytest.approx(1.0)


@pytest.mark.parametrize("kind", KINDS)
def test_input_slope_matches_finite_differences(kind, rng):
    knots = ActivationKnots(rng.standard_normal(15), 0.3)
    h = rng.uniform(-1.9, 1.9, 200)
    eps = 1e-6
    slope = apply_activation(kind, h, knots).slope
    plus = apply_activation(kind, h + eps, knots).value
    minus = apply_activation(kind, h - eps, knots).value
    numeric = (plus - minus) / (2 * eps)
    if kind == "piecewise_linear":
        # skip inputs within eps of a knot
        s = (h - knots.origin) / knots.omega
        away = np.abs(s - np.round(s)) > 1e-4
        np.testing.assert_allclose(slope[away], numeric[away], rtol=1e-6, atol=1e-6)
    else:
        np.testing.assert_allclose(slope, numeric, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_knot_gradient_matches_finite_differences(kind, rng):
    phi = rng.standard_normal((3, 9))
    knots = ActivationKnots(phi, 0.4)
    h = rng.uniform(-2.5, 2.5, (3, 4, 5))
    g = rng.standard_normal(h.shape)
    grad = apply_activation(kind, h, knots).knot_gradient(g)
    assert grad.shape == phi.shape
    direction = rng.standard_normal(phi.shape)
    eps = 1e-6

    def loss(values):
        return np.sum(g * apply_activation(kind, h, ActivationKnots(values, 0.4)).value)

    numeric = (loss(phi + eps * direction) - loss(phi - eps * direction)) / (2 * eps)
    assert np.sum(grad * direction) == pytest.approx(numeric, rel=1e-6)


@pytest.mark.parametrize("kind", KINDS)
def test_complex_activation_backward(kind, rng):
    knots = ActivationKnots(rng.standard_normal(13), 0.35)
    h = rng.uniform(-2, 2, 50) + 1j * rng.uniform(-2, 2, 50)
    g = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    act = apply_complex(kind, h, knots)
    d = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    eps = 1e-7

    def loss(x):
        return np.vdot(g, apply_complex(kind, x, knots).value).real

    numeric = (loss(h + eps * d) - loss(h - eps * d)) / (2 * eps)
    assert np.vdot(act.backward(g), d).real == pytest.approx(numeric, rel=1e-5)


def test_per_filter_knots_need_matching_rows(rng):
    knots = ActivationKnots(rng.standard_normal((2, 5)), 0.5)
    with pytest.raises(ConfigError):
        pl_activation(np.zeros((3, 4)), knots)


def test_invalid_knots():
    with pytest.raises(ConfigError):
        ActivationKnots(np.zeros(1), 0.1)
    with pytest.raises(ConfigError):
        ActivationKnots(np.zeros(5), 0.0)
    with pytest.raises(ConfigError):
        apply_activation("tanh", np.zeros(3), ActivationKnots(np.zeros(5), 0.1))
