"""Tests for the 3D filter banks."""

import numpy as np
import pytest
from scipy import ndimage

from flowrecon.const import FILTER_BANKS
from flowrecon.filters import (
    conv_adjoint,
    conv_bank_apply,
    conv_forward,
    conv_kernel_grad,
    identity_kernels,
    random_kernels,
)
from flowrecon.models import DimensionError

SHAPE = (3, 4, 8, 8)


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.mark.parametrize("bank", list(FILTER_BANKS))
def test_adjoint_identity(bank, rng):
    axes = FILTER_BANKS[bank]
    for _ in range(25):
        kernels = rng.standard_normal((4, 3, 3, 3))
        x = _complex(rng, SHAPE)
        y = _complex(rng, (4,) + SHAPE)
        lhs = np.vdot(conv_forward(x, kernels, axes), y)
        rhs = np.vdot(x, conv_adjoint(y, kernels, axes))
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


@pytest.mark.parametrize("bank", list(FILTER_BANKS))
def test_matches_zero_padded_convolution(bank, rng):
    axes = FILTER_BANKS[bank]
    kernel = rng.standard_normal((5, 5, 5))
    x = rng.standard_normal(SHAPE)
    padded = np.expand_dims(kernel, [a for a in range(4) if a not in axes])
    expected = ndimage.convolve(x, padded, mode="constant")
    np.testing.assert_allclose(conv_forward(x, kernel[None], axes)[0], expected, atol=1e-10)


def test_identity_kernel(rng):
    x = _complex(rng, SHAPE)
    out = conv_forward(x, identity_kernels(2, 5), FILTER_BANKS["xyz"])
    np.testing.assert_allclose(out, np.stack([x, x]), atol=1e-12)


def test_leading_axes_are_swept(rng):
    kernels = rng.standard_normal((2, 3, 3, 3))
    x = _complex(rng, (2,) + SHAPE)
    out = conv_forward(x, kernels, FILTER_BANKS["yzt"])
    assert out.shape == (2, 2) + SHAPE
    np.testing.assert_allclose(out[:, 1], conv_forward(x[1], kernels, FILTER_BANKS["yzt"]), atol=1e-12)


@pytest.mark.parametrize("bank", list(FILTER_BANKS))
def test_kernel_gradient(bank, rng):
    axes = FILTER_BANKS[bank]
    kernels = rng.standard_normal((3, 3, 3, 3))
    x = _complex(rng, SHAPE)
    g = _complex(rng, (3,) + SHAPE)
    grad = conv_kernel_grad(x, g, kernels.shape, axes)
    # the loss is linear in the kernels, so the check is exact up to rounding
    for _ in range(3):
        d = rng.standard_normal(kernels.shape)
        numeric = np.vdot(g, conv_forward(x, d, axes)).real
        assert np.sum(grad * d) == pytest.approx(numeric, rel=1e-9)


def test_bank_apply_adjoint_sums_banks(rng):
    kernels = {bank: rng.standard_normal((2, 3, 3, 3)) for bank in FILTER_BANKS}
    x = _complex(rng, SHAPE)
    responses = conv_bank_apply(x, kernels)
    assert set(responses) == set(FILTER_BANKS)
    y = {bank: _complex(rng, (2,) + SHAPE) for bank in FILTER_BANKS}
    lhs = sum(np.vdot(responses[bank], y[bank]) for bank in FILTER_BANKS)
    rhs = np.vdot(x, conv_bank_apply(y, kernels, adjoint=True))
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_random_kernels(rng):
    kernels = random_kernels(6, 5, rng, 0.05)
    np.testing.assert_allclose(kernels.mean(axis=(1, 2, 3)), 0, atol=1e-15)
    np.testing.assert_allclose(np.linalg.norm(kernels.reshape(6, -1), axis=1), 0.05)


def test_kernel_shape_validation(rng):
    with pytest.raises(DimensionError):
        conv_forward(rng.standard_normal(SHAPE), np.ones((1, 4, 4, 4)), FILTER_BANKS["xyz"])
    with pytest.raises(DimensionError):
        conv_forward(rng.standard_normal(SHAPE), np.ones((3, 3, 3)), FILTER_BANKS["xyz"])
