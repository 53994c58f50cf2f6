"""Phase-contrast signal model and the multi-coil Fourier encoding operator.

The spatial encoding operator ``E`` maps an image stack ``[..][t][z][y][x]`` to
multi-coil k-space ``[..][coil][t][kz][ky][kx]``: each coil image ``c_k * p`` is
Fourier transformed over the three spatial axes with an orthonormal, centered FFT
(DC at index ``n // 2``). ``E^H`` is its exact adjoint, so with coil maps of unit
sum-of-squares and a full mask ``E^H E`` is the identity.
"""

from __future__ import annotations

import numpy as np
from scipy import fft

from .const import LOGGER
from .models import (
    CoilSet,
    DimensionError,
    KSpaceData,
    MaskSeries,
    NormalizationError,
    VelocityEncoding,
    expand_mask,
)

_AXES = (-3, -2, -1)


def fft3c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 3D FFT over the last three axes."""
    return fft.fftshift(
        fft.fftn(fft.ifftshift(x, axes=_AXES), axes=_AXES, norm="ortho", workers=-1),
        axes=_AXES,
    )


def ifft3c(k: np.ndarray) -> np.ndarray:
    """Centered orthonormal inverse 3D FFT over the last three axes."""
    return fft.fftshift(
        fft.ifftn(fft.ifftshift(k, axes=_AXES), axes=_AXES, norm="ortho", workers=-1),
        axes=_AXES,
    )


def encode(p: np.ndarray, maps: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Apply ``M * E`` to an image stack; ``mask`` is already expanded or None."""
    coil_images = p[..., None, :, :, :, :] * maps[:, None]
    k = fft3c(coil_images)
    if mask is not None:
        k *= mask
    return k


def decode(k: np.ndarray, maps: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Apply ``E^H M`` to multi-coil k-space; ``mask`` is already expanded or None."""
    if mask is not None:
        k = k * mask
    coil_images = ifft3c(k)
    return np.sum(np.conj(maps[:, None]) * coil_images, axis=-5)


def _mask_array(mask: MaskSeries | np.ndarray | None, image_shape: tuple[int, ...]) -> np.ndarray:
    """Return a boolean ``[..][t][kz][ky]`` mask for an image stack."""
    if mask is None:
        return np.ones(image_shape[:-1], dtype=bool)
    if isinstance(mask, MaskSeries):
        mask = mask.mask
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-3:] != image_shape[-4:-1]:
        raise DimensionError(
            f"Mask {mask.shape} does not match image [t][z][y] {image_shape[-4:-1]}"
        )
    leading = mask.shape[:-3]
    if leading and leading != image_shape[: len(leading)]:
        raise DimensionError(f"Mask leading axes {leading} do not match image {image_shape}")
    return mask


def _check_coils(image_shape: tuple[int, ...], coils: CoilSet) -> None:
    if coils.spatial_shape != tuple(image_shape[-3:]):
        raise DimensionError(
            f"Coil maps {coils.maps.shape} do not match image [z][y][x] {image_shape[-3:]}"
        )


def forward_encode(
    p: np.ndarray,
    coils: CoilSet,
    mask: MaskSeries | np.ndarray | None = None,
) -> KSpaceData:
    """Return ``M * E p`` with entries outside the mask exactly zero."""
    p = np.asarray(p)
    if p.ndim < 4:
        raise DimensionError(f"Image must be [..][t][z][y][x], got shape {p.shape}")
    _check_coils(p.shape, coils)
    mask = _mask_array(mask, p.shape)
    samples = encode(p, coils.maps, expand_mask(mask))
    return KSpaceData(samples, mask)


def adjoint_encode(b: KSpaceData, coils: CoilSet) -> np.ndarray:
    """Return ``E^H b``, the zero-filled reconstruction."""
    _check_coils(b.samples.shape, coils)
    if coils.nc != b.n_coils:
        raise DimensionError(f"{b.n_coils} coil channels but {coils.nc} coil maps")
    return decode(b.samples, coils.maps, b.expanded_mask())


def velocity_encode(
    mag: np.ndarray,
    v: np.ndarray,
    enc: VelocityEncoding,
) -> np.ndarray:
    """Return the four encoded images ``mag * exp(j pi (Phi v)_i / venc)``.

    ``v`` holds the ``(x, y, z)`` components on the leading axis. Velocities
    beyond ``venc`` wrap, as they do on the scanner.
    """
    mag = np.asarray(mag, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,) + mag.shape:
        raise DimensionError(f"Velocity {v.shape} must be [3] + magnitude {mag.shape}")
    phase = np.tensordot(enc.phi, v, axes=(1, 0)) * (np.pi / enc.venc)
    return mag[None] * np.exp(1j * phase)


def velocity_decode(
    images: np.ndarray,
    enc: VelocityEncoding,
    threshold: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Recover velocities from the phase differences to the reference encoding.

    Returns the ``(x, y, z)`` velocity field and a validity map; voxels whose
    reference magnitude does not exceed ``threshold`` are flagged invalid and
    decoded as zero.
    """
    images = np.asarray(images)
    if images.shape[0] != enc.phi.shape[0]:
        raise DimensionError(
            f"Expected {enc.phi.shape[0]} encoded images, got {images.shape[0]}"
        )
    reference = images[0]
    valid = np.abs(reference) > threshold
    velocity = (enc.venc / np.pi) * np.angle(images[1:] * np.conj(reference)[None])
    velocity = np.where(valid[None], velocity, 0.0)
    n_invalid = valid.size - np.count_nonzero(valid)
    if n_invalid:
        LOGGER.debug("Velocity decoding excluded %d zero-magnitude voxels", n_invalid)
    return velocity, valid


def normalize_kspace(b: KSpaceData) -> tuple[KSpaceData, float]:
    """Scale k-space by ``||M||_1 / ||B||_F``; returns the data and the factor."""
    norm = float(np.linalg.norm(b.samples))
    if norm == 0.0 or not np.isfinite(norm):
        raise NormalizationError()
    scale = b.mask_l1() / norm
    LOGGER.debug("Normalizing k-space by %.6g (||M||_1=%d)", scale, b.mask_l1())
    return KSpaceData(b.samples * scale, b.mask), scale
