"""3D filter banks over subsets of the ``(t, z, y, x)`` axes.

Each bank convolves three of the four image axes with ``F`` real ``n^3``
kernels and sweeps the remaining axis. Convolutions are linear (zero-padded
borders) and computed with FFTs padded to ``L + n - 1`` per axis, so the
adjoint is the exact transpose. Real kernels act on real and imaginary parts
alike, which makes every operator here complex-linear.
"""

from __future__ import annotations

import numpy as np
from scipy import fft

from .const import FILTER_BANKS
from .models import DimensionError


def _conv_axes(ndim: int, bank_axes: tuple[int, int, int]) -> tuple[int, ...]:
    """Map bank axes of ``(t, z, y, x)`` onto the trailing axes of an array."""
    return tuple(ndim - 4 + a for a in bank_axes)


def _kernel_spectrum(
    kernels: np.ndarray,
    ndim: int,
    axes: tuple[int, ...],
    sizes: tuple[int, ...],
) -> np.ndarray:
    """FFT of ``(F, n, n, n)`` kernels laid out to broadcast against ``(F, ...)`` data."""
    shape = [kernels.shape[0]] + [1] * ndim
    for axis, n in zip(axes, kernels.shape[1:]):
        shape[1 + axis] = n
    return fft.fftn(kernels.reshape(shape), s=sizes, axes=[1 + a for a in axes], workers=-1)


def _check(kernels: np.ndarray) -> int:
    if kernels.ndim != 4 or len(set(kernels.shape[1:])) != 1 or kernels.shape[1] % 2 == 0:
        raise DimensionError(f"Kernels must be (F, n, n, n) with odd n, got {kernels.shape}")
    return kernels.shape[1] // 2


def _crop(full: np.ndarray, axes: tuple[int, ...], lengths: tuple[int, ...], start: int) -> np.ndarray:
    index = [slice(None)] * full.ndim
    for axis, length in zip(axes, lengths):
        index[axis] = slice(start, start + length)
    return full[tuple(index)]


def conv_forward(x: np.ndarray, kernels: np.ndarray, bank_axes: tuple[int, int, int]) -> np.ndarray:
    """Return the ``(F, ...)`` stack of ``x`` convolved with each kernel."""
    c = _check(kernels)
    axes = _conv_axes(x.ndim, bank_axes)
    lengths = tuple(x.shape[a] for a in axes)
    sizes = tuple(n + 2 * c for n in lengths)
    spectrum = fft.fftn(x, s=sizes, axes=axes, workers=-1)
    full = fft.ifftn(
        spectrum[None] * _kernel_spectrum(kernels, x.ndim, axes, sizes),
        axes=[1 + a for a in axes],
        workers=-1,
    )
    out = _crop(full, [1 + a for a in axes], lengths, c)
    return out.real if np.isrealobj(x) else out


def conv_adjoint(y: np.ndarray, kernels: np.ndarray, bank_axes: tuple[int, int, int]) -> np.ndarray:
    """Transpose of ``conv_forward``: correlate each channel and sum over filters."""
    c = _check(kernels)
    ndim = y.ndim - 1
    axes = _conv_axes(ndim, bank_axes)
    lengths = tuple(y.shape[1 + a] for a in axes)
    sizes = tuple(n + 2 * c for n in lengths)
    flipped = kernels[:, ::-1, ::-1, ::-1]
    spectrum = fft.fftn(y, s=sizes, axes=[1 + a for a in axes], workers=-1)
    spectrum = np.sum(spectrum * _kernel_spectrum(flipped, ndim, axes, sizes), axis=0)
    out = _crop(fft.ifftn(spectrum, axes=axes, workers=-1), axes, lengths, c)
    return out.real if np.isrealobj(y) else out


def conv_kernel_grad(
    x: np.ndarray,
    g: np.ndarray,
    kernels_shape: tuple[int, ...],
    bank_axes: tuple[int, int, int],
) -> np.ndarray:
    """Gradient of ``Re <g, conv_forward(x, k)>`` with respect to the kernels ``k``."""
    n = kernels_shape[1]
    c = n // 2
    axes = _conv_axes(x.ndim, bank_axes)
    sizes = tuple(x.shape[a] + 2 * c for a in axes)
    spectrum_x = fft.fftn(x, s=sizes, axes=axes, workers=-1)
    spectrum_g = fft.fftn(g, s=sizes, axes=[1 + a for a in axes], workers=-1)
    cross = np.conj(spectrum_g) * spectrum_x[None]
    batch = tuple(a for a in range(1, cross.ndim) if a - 1 not in axes)
    if batch:
        cross = np.sum(cross, axis=batch)
    corr = fft.ifftn(cross, axes=(1, 2, 3), workers=-1).real
    # dk[j] = corr[c - j] for lags in [-c, c]
    lags = [(c - np.arange(n)) % size for size in sizes]
    return corr[:, lags[0][:, None, None], lags[1][None, :, None], lags[2][None, None, :]]


def conv_bank_apply(
    p_img: np.ndarray,
    kernels: dict[str, np.ndarray],
    adjoint: bool = False,
) -> dict[str, np.ndarray] | np.ndarray:
    """Apply every bank of ``kernels`` (keyed by bank name).

    Forward returns the filtered ``(F, ...)`` stack per bank; with ``adjoint``
    the input is such a dict and the transposed responses are summed into one
    image.
    """
    if adjoint:
        return sum(conv_adjoint(p_img[name], k, FILTER_BANKS[name]) for name, k in kernels.items())
    return {name: conv_forward(p_img, k, FILTER_BANKS[name]) for name, k in kernels.items()}


def identity_kernels(count: int, size: int) -> np.ndarray:
    """Kernels with a single unit tap in the center."""
    kernels = np.zeros((count, size, size, size))
    kernels[:, size // 2, size // 2, size // 2] = 1.0
    return kernels


def random_kernels(count: int, size: int, rng: np.random.Generator, scale: float) -> np.ndarray:
    """Zero-mean Gaussian kernels normalized to norm ``scale``."""
    kernels = rng.standard_normal((count, size, size, size))
    kernels -= kernels.mean(axis=(1, 2, 3), keepdims=True)
    norms = np.linalg.norm(kernels.reshape(count, -1), axis=1)
    return scale * kernels / norms[:, None, None, None]
