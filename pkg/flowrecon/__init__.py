"""Reconstruction of undersampled 4D flow MRI.

The toolkit simulates phase-contrast acquisitions of a flow phantom,
undersamples them with golden-angle pseudo-radial masks and reconstructs them
by zero filling, locally low-rank compressed sensing or the FlowVN unrolled
network.
"""

from .const import LOGGER, NAME, VERSION
from .models import (
    CoilSet,
    ConfigError,
    ContainerError,
    DimensionError,
    DivergenceError,
    FlowReconError,
    KSpaceData,
    MaskSeries,
    NormalizationError,
    NumericalError,
    PhantomTruth,
    SamplingError,
    VelocityEncoding,
)

__version__ = VERSION

__all__ = [
    "LOGGER",
    "NAME",
    "VERSION",
    "CoilSet",
    "ConfigError",
    "ContainerError",
    "DimensionError",
    "DivergenceError",
    "FlowReconError",
    "KSpaceData",
    "MaskSeries",
    "NormalizationError",
    "NumericalError",
    "PhantomTruth",
    "SamplingError",
    "VelocityEncoding",
]
