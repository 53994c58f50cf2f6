"""Data model shared by the flowrecon modules.

Array layouts follow the acquisition: images are stacked as ``[t][z][y][x]``,
k-space as ``[coil][t][kz][ky][kx]`` and masks as ``[t][kz][ky]`` (the readout
``kx`` is always fully sampled). Arrays may carry one extra leading axis for the
four velocity encodings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .const import FOUR_POINT_PHI, N_ENCODINGS


class FlowReconError(Exception):
    """Base class for exceptions in this package."""


class DimensionError(FlowReconError, ValueError):
    """Exception raised when array shapes do not fit together."""

    def __init__(self, message: str | None = None) -> None:
        """Initialize the dimension error."""
        super().__init__(message or "Dimension mismatch")


class ConfigError(FlowReconError, ValueError):
    """Exception raised when a configuration fails validation."""

    def __init__(self, message: str | None = None) -> None:
        """Initialize the configuration error."""
        super().__init__(message or "Invalid configuration")


class SamplingError(FlowReconError):
    """Exception raised for empty or malformed undersampling masks."""

    def __init__(self, message: str | None = None) -> None:
        """Initialize the sampling error."""
        super().__init__(message or "Invalid sampling mask")


class NormalizationError(FlowReconError):
    """Exception raised when k-space data cannot be normalized."""

    def __init__(self) -> None:
        """Initialize the normalization error."""
        super().__init__("Cannot normalize all-zero k-space data")


class NumericalError(FlowReconError):
    """Exception raised when a computation produced non-finite values."""

    def __init__(self, location: str) -> None:
        """Initialize the numerical error."""
        self.location = location
        super().__init__(f"Non-finite values in {location}")


class DivergenceError(FlowReconError):
    """Exception raised when an iterative scheme diverges."""

    def __init__(self, message: str | None = None) -> None:
        """Initialize the divergence error."""
        super().__init__(message or "Iteration diverged")


class OrderingError(FlowReconError):
    """Exception raised when measured run times break the expected method order."""

    def __init__(self, message: str | None = None) -> None:
        """Initialize the ordering error."""
        super().__init__(message or "Run times out of the expected order")


class ContainerError(FlowReconError):
    """Exception raised for malformed dataset containers or weight files."""

    def __init__(self, message: str | None = None) -> None:
        """Initialize the container error."""
        super().__init__(message or "Malformed container")


def expand_mask(mask: np.ndarray) -> np.ndarray:
    """Broadcast a ``[..][t][kz][ky]`` mask against ``[..][coil][t][kz][ky][kx]`` samples."""
    return np.expand_dims(mask[..., None], -5)


@dataclass(frozen=True)
class Grid:
    """Sizes of the reconstruction problem."""

    nx: int
    ny: int
    nz: int
    nt: int
    nc: int = 1
    n_enc: int = N_ENCODINGS

    def __post_init__(self) -> None:
        """Check that every count is positive."""
        for name in ("nx", "ny", "nz", "nt", "nc", "n_enc"):
            if getattr(self, name) < 1:
                raise DimensionError(f"Grid.{name} must be >= 1")

    @property
    def image_shape(self) -> tuple[int, int, int, int]:
        """Return the ``[t][z][y][x]`` image shape."""
        return (self.nt, self.nz, self.ny, self.nx)

    @property
    def kspace_shape(self) -> tuple[int, int, int, int, int]:
        """Return the ``[coil][t][kz][ky][kx]`` k-space shape."""
        return (self.nc, self.nt, self.nz, self.ny, self.nx)

    @property
    def mask_shape(self) -> tuple[int, int, int]:
        """Return the ``[t][kz][ky]`` mask shape."""
        return (self.nt, self.nz, self.ny)

    @property
    def n_voxels(self) -> int:
        """Return the number of voxels of one cardiac phase."""
        return self.nx * self.ny * self.nz

    @classmethod
    def from_arrays(cls, image: np.ndarray, maps: np.ndarray) -> Grid:
        """Create a grid from an image stack and coil maps."""
        nt, nz, ny, nx = image.shape[-4:]
        return cls(nx=nx, ny=ny, nz=nz, nt=nt, nc=maps.shape[0])


@dataclass
class CoilSet:
    """Complex coil sensitivities ``[coil][z][y][x]``."""

    maps: np.ndarray

    def __post_init__(self) -> None:
        """Check the map layout."""
        self.maps = np.asarray(self.maps, dtype=np.complex128)
        if self.maps.ndim != 4:
            raise DimensionError(
                f"Coil maps must be [coil][z][y][x], got shape {self.maps.shape}"
            )

    @property
    def nc(self) -> int:
        """Return the number of coils."""
        return self.maps.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        """Return the ``[z][y][x]`` shape the maps live on."""
        return self.maps.shape[1:]

    def sum_of_squares(self) -> np.ndarray:
        """Return the voxelwise sum of squared coil magnitudes."""
        return np.sum(np.abs(self.maps) ** 2, axis=0)

    def is_normalized(self, support: np.ndarray | None = None, tol: float = 1e-6) -> bool:
        """Return whether the maps have unit sum-of-squares inside the support."""
        sos = self.sum_of_squares()
        if support is not None:
            sos = sos[support]
        return bool(np.all(np.abs(sos - 1.0) <= tol))

    def crop_x(self, start: int, width: int) -> CoilSet:
        """Return the maps restricted to a readout window."""
        return CoilSet(self.maps[..., start : start + width])


@dataclass
class KSpaceData:
    """Zero-filled multi-coil k-space samples and their undersampling mask."""

    samples: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        """Check that mask and samples fit together."""
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.samples.ndim < 5 or self.mask.ndim < 3:
            raise DimensionError(
                f"Expected samples [..][coil][t][kz][ky][kx] and mask [..][t][kz][ky], "
                f"got {self.samples.shape} and {self.mask.shape}"
            )
        if self.mask.shape[-3:] != self.samples.shape[-4:-1]:
            raise DimensionError(
                f"Mask {self.mask.shape} does not match samples {self.samples.shape}"
            )
        leading = self.mask.shape[:-3]
        if leading and leading != self.samples.shape[: len(leading)]:
            raise DimensionError(
                f"Mask leading axes {leading} do not match samples {self.samples.shape}"
            )

    @property
    def n_coils(self) -> int:
        """Return the number of coils."""
        return self.samples.shape[-5]

    @property
    def image_shape(self) -> tuple[int, ...]:
        """Return the shape of the image stack these samples encode."""
        return self.samples.shape[:-5] + self.samples.shape[-4:]

    @property
    def has_encodings(self) -> bool:
        """Return whether the samples carry a leading velocity-encoding axis."""
        return self.samples.ndim == 6

    def expanded_mask(self) -> np.ndarray:
        """Return the mask broadcastable against the samples."""
        return expand_mask(self.mask)

    def mask_l1(self) -> float:
        """Return the number of sampled ``(t, kz, ky)`` locations."""
        reps = int(np.prod(self.samples.shape[:-5])) if self.mask.ndim == 3 else 1
        return float(np.count_nonzero(self.mask)) * reps

    def encoding(self, index: int) -> KSpaceData:
        """Return the data of one velocity encoding."""
        if not self.has_encodings:
            raise DimensionError("KSpaceData has no velocity-encoding axis")
        mask = self.mask[index] if self.mask.ndim == 4 else self.mask
        return KSpaceData(self.samples[index], mask)

    def mask_for_encoding(self, index: int) -> np.ndarray:
        """Return the ``[t][kz][ky]`` mask used by one encoding."""
        return self.mask[index] if self.mask.ndim == 4 else self.mask

    @classmethod
    def stack(cls, parts: list[KSpaceData]) -> KSpaceData:
        """Stack single-encoding data along a new leading axis."""
        masks = [part.mask for part in parts]
        if all(np.array_equal(masks[0], m) for m in masks[1:]):
            mask = masks[0]
        else:
            mask = np.stack(masks)
        return cls(np.stack([part.samples for part in parts]), mask)


@dataclass(frozen=True)
class VelocityEncoding:
    """Four-point referenced velocity encoding."""

    venc: float
    phi: np.ndarray = field(default_factory=lambda: np.array(FOUR_POINT_PHI, float))

    def __post_init__(self) -> None:
        """Check the encoding matrix and the encoding velocity."""
        if not self.venc > 0:
            raise ConfigError(f"venc must be positive, got {self.venc}")
        if not np.array_equal(np.asarray(self.phi), np.array(FOUR_POINT_PHI, float)):
            raise ConfigError("Only the four-point referenced encoding matrix is supported")


@dataclass
class MaskSeries:
    """Binary ``[t][kz][ky]`` undersampling mask."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        """Check the center-line invariant."""
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 3:
            raise DimensionError(f"Mask must be [t][kz][ky], got {self.mask.shape}")
        nz, ny = self.mask.shape[1:]
        if not np.all(self.mask[:, nz // 2, ny // 2]):
            raise SamplingError("Every cardiac phase must sample the k-space center line")

    @property
    def nt(self) -> int:
        """Return the number of cardiac phases."""
        return self.mask.shape[0]

    @property
    def acceleration(self) -> float:
        """Return the measured acceleration factor."""
        return self.mask.size / np.count_nonzero(self.mask)


@dataclass
class PhantomTruth:
    """Ground truth of a synthetic flow phantom."""

    magnitude: np.ndarray
    velocity: np.ndarray
    segmentation: np.ndarray

    def __post_init__(self) -> None:
        """Check the field layouts."""
        if self.velocity.shape != (3,) + self.magnitude.shape:
            raise DimensionError(
                f"Velocity {self.velocity.shape} must be [3] + magnitude {self.magnitude.shape}"
            )
        if self.segmentation.shape != self.magnitude.shape[1:]:
            raise DimensionError(
                f"Segmentation {self.segmentation.shape} must be [z][y][x] of "
                f"magnitude {self.magnitude.shape}"
            )

    @property
    def support(self) -> np.ndarray:
        """Return the voxels with signal in any cardiac phase."""
        return np.any(self.magnitude > 0, axis=0)

    @property
    def lumen(self) -> np.ndarray:
        """Return the vessel segmentation broadcast over cardiac phases."""
        return np.broadcast_to(self.segmentation, self.magnitude.shape)
