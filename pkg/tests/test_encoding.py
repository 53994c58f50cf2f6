"""Tests for the encoding operator and the velocity codec."""

import numpy as np
import pytest

from flowrecon.encoding import (
    adjoint_encode,
    fft3c,
    forward_encode,
    ifft3c,
    normalize_kspace,
    velocity_decode,
    velocity_encode,
)
from flowrecon.models import (
    CoilSet,
    ConfigError,
    DimensionError,
    KSpaceData,
    NormalizationError,
    VelocityEncoding,
)
from flowrecon.sampling import pattern_for_acceleration


def _inner(a, b):
    return np.vdot(a, b)


def test_adjoint_identity_random_trials(tiny_grid, tiny_coils, rng):
    shape = tiny_grid.image_shape
    kshape = tiny_grid.kspace_shape
    for trial in range(100):
        mask = pattern_for_acceleration(
            float(rng.uniform(1.5, 4.0)), tiny_grid.ny, tiny_grid.nz, tiny_grid.nt, seed=trial, warn=False
        )
        x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        y = rng.standard_normal(kshape) + 1j * rng.standard_normal(kshape)
        lhs = _inner(forward_encode(x, tiny_coils, mask).samples, y)
        rhs = _inner(x, adjoint_encode(KSpaceData(y, mask.mask), tiny_coils))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_full_mask_is_unitary(tiny_coils, tiny_images):
    assert tiny_coils.is_normalized()
    b = forward_encode(tiny_images, tiny_coils)
    np.testing.assert_allclose(adjoint_encode(b, tiny_coils), tiny_images, atol=1e-12)


def test_unsampled_entries_are_exactly_zero(tiny_coils, tiny_images, tiny_mask):
    b = forward_encode(tiny_images, tiny_coils, tiny_mask)
    unsampled = ~np.broadcast_to(b.expanded_mask(), b.samples.shape)
    assert np.all(b.samples[unsampled] == 0)
    assert np.any(b.samples[~unsampled] != 0)


def test_fft_is_centered_and_orthonormal(rng):
    x = np.ones((4, 6, 8))
    k = fft3c(x)
    assert abs(k[2, 3, 4]) == pytest.approx(np.sqrt(x.size))
    k[2, 3, 4] = 0
    np.testing.assert_allclose(k, 0, atol=1e-12)
    y = rng.standard_normal((2, 5, 6, 7)) + 1j * rng.standard_normal((2, 5, 6, 7))
    assert np.linalg.norm(fft3c(y)) == pytest.approx(np.linalg.norm(y))
    np.testing.assert_allclose(ifft3c(fft3c(y)), y, atol=1e-12)


def test_leading_encoding_axis(tiny_coils, tiny_images, tiny_mask):
    stack = np.stack([tiny_images, 2 * tiny_images])
    b = forward_encode(stack, tiny_coils, tiny_mask)
    assert b.has_encodings
    single = forward_encode(tiny_images, tiny_coils, tiny_mask)
    np.testing.assert_allclose(b.samples[1], 2 * single.samples)


def test_coil_shape_mismatch(tiny_images):
    coils = CoilSet(np.ones((2, 4, 8, 7)))
    with pytest.raises(DimensionError):
        forward_encode(tiny_images, coils)


def test_velocity_round_trip_below_venc(rng):
    enc = VelocityEncoding(venc=150.0)
    mag = rng.uniform(0.5, 1.0, (3, 4, 5, 6))
    v = rng.uniform(-140, 140, (3,) + mag.shape)
    decoded, valid = velocity_decode(velocity_encode(mag, v, enc), enc)
    assert valid.all()
    np.testing.assert_allclose(decoded, v, atol=1e-9)


def test_velocity_beyond_venc_aliases():
    enc = VelocityEncoding(venc=100.0)
    mag = np.ones((1, 1, 1, 1))
    v = np.zeros((3, 1, 1, 1, 1))
    v[2] = 150.0
    decoded, _ = velocity_decode(velocity_encode(mag, v, enc), enc)
    assert decoded[2].item() == pytest.approx(-50.0)


def test_velocity_decode_flags_zero_magnitude():
    enc = VelocityEncoding(venc=100.0)
    mag = np.array([0.0, 1.0]).reshape(1, 1, 1, 2)
    v = np.full((3,) + mag.shape, 30.0)
    decoded, valid = velocity_decode(velocity_encode(mag, v, enc), enc, threshold=0.1)
    assert valid.tolist() == [[[[False, True]]]]
    assert np.all(decoded[..., 0] == 0)
    np.testing.assert_allclose(decoded[..., 1], 30.0)


def test_velocity_encoding_validation():
    with pytest.raises(ConfigError):
        VelocityEncoding(venc=0.0)
    with pytest.raises(ConfigError):
        VelocityEncoding(venc=1.0, phi=np.eye(4, 3))
    with pytest.raises(DimensionError):
        velocity_encode(np.ones((2, 2, 2, 2)), np.ones((2, 2, 2, 2, 2)), VelocityEncoding(venc=1.0))


def test_normalize_kspace(tiny_coils, tiny_images, tiny_mask):
    b = forward_encode(tiny_images, tiny_coils, tiny_mask)
    normalized, scale = normalize_kspace(b)
    assert np.linalg.norm(normalized.samples) == pytest.approx(np.count_nonzero(tiny_mask))
    np.testing.assert_allclose(normalized.samples, scale * b.samples)


def test_normalize_all_zero_raises(tiny_grid, tiny_mask):
    b = KSpaceData(np.zeros(tiny_grid.kspace_shape), tiny_mask)
    with pytest.raises(NormalizationError):
        normalize_kspace(b)
