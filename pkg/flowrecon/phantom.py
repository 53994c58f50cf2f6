"""Synthetic pulsatile-flow phantom, coil maps and simulated acquisitions."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .config import PHANTOM_SCHEMA, validate
from .const import DEFAULT_VENC_CM_S, LOGGER, PHANTOM_PROFILES, VELOCITY_AXES
from .encoding import encode, velocity_encode
from .metrics import FlowPlane
from .models import (
    CoilSet,
    ConfigError,
    Grid,
    KSpaceData,
    MaskSeries,
    PhantomTruth,
    VelocityEncoding,
)
from .sampling import retrospective_undersample


@dataclass
class PhantomConfig:
    """Straight vessel with Poiseuille flow inside static tissue."""

    nx: int = 32
    ny: int = 32
    nz: int = 16
    nt: int = 8
    n_coils: int = 5
    tube_radius: float = 5.0
    tube_axis: str = "z"
    peak_velocity: float = 100.0
    venc: float = DEFAULT_VENC_CM_S
    systolic_peak_fraction: float = 0.25
    systolic_width: float = 0.4
    diastolic_level: float = 0.1
    background_magnitude: float = 0.5
    blood_magnitude: float = 1.0
    inflow_enhancement: float = 0.2
    noise_snr: float | None = None
    voxel_size_cm: float = 0.25
    seed: int | None = 0

    def __post_init__(self) -> None:
        """Validate the configuration."""
        for key, value in validate(PHANTOM_SCHEMA, asdict(self), "PhantomConfig").items():
            setattr(self, key, value)
        if not self.peak_velocity < 2 * self.venc:
            raise ConfigError(
                f"Peak velocity {self.peak_velocity} must stay below 2*venc={2 * self.venc}"
            )

    @classmethod
    def from_profile(cls, name: str, **overrides) -> PhantomConfig:
        """Create a configuration from a named geometry profile."""
        if name not in PHANTOM_PROFILES:
            raise ConfigError(f"Unknown phantom profile {name!r}")
        return cls(**(PHANTOM_PROFILES[name] | overrides))

    @property
    def grid(self) -> Grid:
        """Return the reconstruction grid."""
        return Grid(nx=self.nx, ny=self.ny, nz=self.nz, nt=self.nt, nc=self.n_coils)

    @property
    def encoding(self) -> VelocityEncoding:
        """Return the velocity encoding."""
        return VelocityEncoding(venc=self.venc)

    @property
    def center(self) -> tuple[int, int, int]:
        """Return the ``(z, y, x)`` voxel the vessel centerline passes through."""
        return (self.nz // 2, self.ny // 2, self.nx // 2)

    @property
    def voxel_area_cm2(self) -> float:
        """Return the area of one voxel face."""
        return self.voxel_size_cm**2


@dataclass
class Phantom:
    """Ground truth together with everything needed to simulate data from it."""

    config: PhantomConfig
    truth: PhantomTruth
    coils: CoilSet
    images: np.ndarray

    @property
    def encoding(self) -> VelocityEncoding:
        """Return the velocity encoding."""
        return self.config.encoding


def waveform(cfg: PhantomConfig) -> np.ndarray:
    """Return the raised-cosine systolic waveform, one value per cardiac phase."""
    nt = cfg.nt
    peak = int(round(cfg.systolic_peak_fraction * nt)) % nt
    t = np.arange(nt)
    distance = np.minimum(np.abs(t - peak), nt - np.abs(t - peak)) / nt
    half = cfg.systolic_width / 2
    pulse = np.where(distance < half, 0.5 * (1 + np.cos(np.pi * distance / half)), 0.0)
    return cfg.diastolic_level + (1 - cfg.diastolic_level) * pulse


def peak_phase(cfg: PhantomConfig) -> int:
    """Return the cardiac phase of peak systole."""
    return int(np.argmax(waveform(cfg)))


def _radial_distance(cfg: PhantomConfig) -> np.ndarray:
    """Return each voxel's distance to the vessel centerline, in voxels."""
    z, y, x = np.meshgrid(
        np.arange(cfg.nz), np.arange(cfg.ny), np.arange(cfg.nx), indexing="ij"
    )
    cz, cy, cx = cfg.center
    offsets = {"x": (y - cy, z - cz), "y": (x - cx, z - cz), "z": (x - cx, y - cy)}
    a, b = offsets[cfg.tube_axis]
    return np.sqrt(a**2 + b**2)


def _check_tube(cfg: PhantomConfig) -> None:
    sizes = {"x": cfg.nx, "y": cfg.ny, "z": cfg.nz}
    centers = dict(zip(("z", "y", "x"), cfg.center))
    for axis in VELOCITY_AXES:
        if axis == cfg.tube_axis:
            continue
        if centers[axis] - cfg.tube_radius < 0 or centers[axis] + cfg.tube_radius > sizes[axis] - 1:
            raise ConfigError(
                f"Tube of radius {cfg.tube_radius} does not fit along {axis} ({sizes[axis]} voxels)"
            )


def make_phantom(cfg: PhantomConfig) -> PhantomTruth:
    """Build magnitude, velocity and segmentation of the straight-tube phantom."""
    _check_tube(cfg)
    r = _radial_distance(cfg)
    lumen = r < cfg.tube_radius
    profile = np.where(lumen, 1.0 - (r / cfg.tube_radius) ** 2, 0.0)
    w = waveform(cfg)

    z, y, x = np.meshgrid(
        *(np.linspace(-1.0, 1.0, n) for n in (cfg.nz, cfg.ny, cfg.nx)), indexing="ij"
    )
    rho2 = (z / 0.9) ** 2 + (y / 0.9) ** 2 + (x / 0.9) ** 2
    tissue = np.where(
        (rho2 <= 1.0) & ~lumen,
        cfg.background_magnitude * (0.7 + 0.3 * np.exp(-2.0 * rho2)),
        0.0,
    )
    blood = cfg.blood_magnitude * (1 - cfg.inflow_enhancement * (1 - w))
    magnitude = tissue[None] + lumen[None] * blood[:, None, None, None]

    velocity = np.zeros((3, cfg.nt, cfg.nz, cfg.ny, cfg.nx))
    component = VELOCITY_AXES.index(cfg.tube_axis)
    velocity[component] = cfg.peak_velocity * w[:, None, None, None] * profile[None]

    LOGGER.debug(
        "Phantom %dx%dx%d nt=%d: %d lumen voxels, peak %.1f cm/s",
        cfg.nx,
        cfg.ny,
        cfg.nz,
        cfg.nt,
        np.count_nonzero(lumen),
        velocity.max(),
    )
    return PhantomTruth(magnitude=magnitude, velocity=velocity, segmentation=lumen)


def make_coils(grid: Grid, nc: int, seed: int | None = 0) -> CoilSet:
    """Smooth Gaussian-lobe coil maps with unit sum-of-squares everywhere."""
    if nc < 1:
        raise ConfigError(f"Coil count must be >= 1, got {nc}")
    shape = (grid.nz, grid.ny, grid.nx)
    if nc == 1:
        return CoilSet(np.ones((1,) + shape, dtype=np.complex128))
    rng = np.random.default_rng(seed)
    z, y, x = np.meshgrid(*(np.linspace(-1.0, 1.0, n) for n in shape), indexing="ij")
    maps = np.empty((nc,) + shape, dtype=np.complex128)
    for k in range(nc):
        angle = 2 * np.pi * k / nc + rng.uniform(-0.3, 0.3)
        cy, cx = 0.9 * np.sin(angle), 0.9 * np.cos(angle)
        cz = rng.uniform(-0.2, 0.2)
        width = rng.uniform(0.6, 0.9)
        lobe = np.exp(-((z - cz) ** 2 + (y - cy) ** 2 + (x - cx) ** 2) / (2 * width**2))
        ramp_y, ramp_x = rng.uniform(-np.pi / 2, np.pi / 2, size=2)
        phase = rng.uniform(-np.pi, np.pi) + ramp_y * y + ramp_x * x
        maps[k] = lobe * np.exp(1j * phase)
    maps /= np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return CoilSet(maps)


def build_phantom(cfg: PhantomConfig) -> Phantom:
    """Build the truth, the coils and the noise-free encoded images."""
    truth = make_phantom(cfg)
    coils = make_coils(cfg.grid, cfg.n_coils, cfg.seed)
    images = velocity_encode(truth.magnitude, truth.velocity, cfg.encoding)
    return Phantom(config=cfg, truth=truth, coils=coils, images=images)


def noise_sigma(truth: PhantomTruth, noise_snr: float | None) -> float:
    """Return the complex noise standard deviation for an SNR in dB."""
    if noise_snr is None or not np.isfinite(noise_snr):
        return 0.0
    support = np.broadcast_to(truth.support, truth.magnitude.shape)
    mean_signal = float(np.mean(truth.magnitude[support]))
    return mean_signal / 10 ** (noise_snr / 20)


def simulate_acquisition(
    truth: PhantomTruth,
    coils: CoilSet,
    enc: VelocityEncoding,
    mask: MaskSeries | np.ndarray,
    noise_snr: float | None = None,
    seed: int | None = 0,
) -> tuple[KSpaceData, KSpaceData]:
    """Encode the truth, add white noise and undersample.

    Returns the undersampled data and the fully sampled (noisy) reference.
    """
    images = velocity_encode(truth.magnitude, truth.velocity, enc)
    full = encode(images, coils.maps)
    sigma = noise_sigma(truth, noise_snr)
    if sigma > 0:
        rng = np.random.default_rng(seed)
        full = full + (sigma / np.sqrt(2)) * (
            rng.standard_normal(full.shape) + 1j * rng.standard_normal(full.shape)
        )
    nt, nz, ny = full.shape[-4:-1]
    reference = KSpaceData(full, np.ones((nt, nz, ny), dtype=bool))
    LOGGER.debug("Simulated acquisition with noise sigma %.4g", sigma)
    return retrospective_undersample(reference, mask), reference


def flow_plane(cfg: PhantomConfig, truth: PhantomTruth, index: int | None = None) -> FlowPlane:
    """Return the cross-section plane through the middle of the vessel."""
    axis = cfg.tube_axis
    array_axis = {"z": 0, "y": 1, "x": 2}[axis]
    if index is None:
        index = cfg.center[array_axis]
    lumen = np.take(truth.segmentation, index, axis=array_axis)
    return FlowPlane.axial(axis, index, lumen, cfg.voxel_area_cm2)


def with_seed(cfg: PhantomConfig, seed: int) -> PhantomConfig:
    """Return a copy of the configuration with another seed."""
    return replace(cfg, seed=seed)


def phantom_family(cfg: PhantomConfig, count: int, seed: int | None = 0) -> list[Phantom]:
    """Build ``count`` phantoms that differ in coils, vessel radius and peak velocity."""
    rng = np.random.default_rng(seed)
    fit = min(size for axis, size in zip("xyz", (cfg.nx, cfg.ny, cfg.nz)) if axis != cfg.tube_axis)
    largest = min(cfg.tube_radius * 1.2, (fit - 1) / 2 - 1)
    phantoms = []
    for index in range(count):
        member = replace(
            cfg,
            seed=int(rng.integers(2**31)),
            tube_radius=float(rng.uniform(max(2.0, cfg.tube_radius * 0.7), max(2.0, largest))),
            peak_velocity=float(rng.uniform(0.6, 1.0) * min(cfg.peak_velocity, 1.9 * cfg.venc)),
        )
        LOGGER.debug(
            "Phantom %d: radius %.2f, peak %.1f cm/s", index, member.tube_radius, member.peak_velocity
        )
        phantoms.append(build_phantom(member))
    return phantoms
