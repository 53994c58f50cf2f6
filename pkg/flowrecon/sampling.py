"""Cartesian pseudo-radial golden-angle undersampling."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .config import SAMPLING_SCHEMA, validate
from .const import ACCELERATION_TOLERANCE, GOLDEN_ANGLE_DEG, LOGGER
from .models import DimensionError, KSpaceData, MaskSeries, SamplingError, expand_mask


@dataclass
class SamplingConfig:
    """Pseudo-radial sampling of the ``(ky, kz)`` phase-encoding plane."""

    ny: int
    nz: int
    nt: int
    spokes_per_phase: float = 1.0
    angle_increment_deg: float = GOLDEN_ANGLE_DEG
    seed: int | None = None

    def __post_init__(self) -> None:
        """Validate the configuration."""
        for key, value in validate(SAMPLING_SCHEMA, asdict(self), "SamplingConfig").items():
            setattr(self, key, value)

    @property
    def total_spokes(self) -> int:
        """Return the number of spokes dealt over all cardiac phases."""
        return max(self.nt, int(round(self.spokes_per_phase * self.nt)))

    def start_angle(self) -> float:
        """Return the angle of the first spoke in degrees."""
        if self.seed is None:
            return 0.0
        return float(np.random.default_rng(self.seed).uniform(0.0, 180.0))


def _rasterize(cfg: SamplingConfig, total: int, first_spoke: int = 0) -> np.ndarray:
    """Snap ``total`` spokes onto the grid; spoke ``g`` belongs to phase ``g mod nt``."""
    ny, nz, nt = cfg.ny, cfg.nz, cfg.nt
    spoke = np.arange(first_spoke, first_spoke + total)
    theta = np.deg2rad(cfg.start_angle() + spoke * cfg.angle_increment_deg)
    half = max(ny, nz) / 2.0
    # one grid unit per step along the longest axis, out to the corners
    reach = int(np.ceil(np.sqrt(2.0) * half))
    s = np.arange(-reach, reach + 1) / half
    ky = np.rint(ny // 2 + s[None, :] * (ny / 2.0) * np.cos(theta)[:, None]).astype(int)
    kz = np.rint(nz // 2 + s[None, :] * (nz / 2.0) * np.sin(theta)[:, None]).astype(int)
    phase = np.broadcast_to(((spoke - first_spoke) % nt)[:, None], ky.shape)
    inside = (ky >= 0) & (ky < ny) & (kz >= 0) & (kz < nz)
    mask = np.zeros((nt, nz, ny), dtype=bool)
    mask[phase[inside], kz[inside], ky[inside]] = True
    return mask


def generate_pattern(cfg: SamplingConfig) -> MaskSeries:
    """Generate the golden-angle mask for every cardiac phase."""
    mask = _rasterize(cfg, cfg.total_spokes)
    LOGGER.debug(
        "Generated %d spokes over %d phases (R=%.2f)",
        cfg.total_spokes,
        cfg.nt,
        mask.size / np.count_nonzero(mask),
    )
    return MaskSeries(mask)


def generate_encoding_masks(
    cfg: SamplingConfig,
    n_enc: int,
    independent: bool = False,
) -> np.ndarray:
    """Return one mask shared by all encodings, or ``n_enc`` masks continuing the counter."""
    if not independent:
        return generate_pattern(cfg).mask
    total = cfg.total_spokes
    return np.stack(
        [MaskSeries(_rasterize(cfg, total, first_spoke=e * total)).mask for e in range(n_enc)]
    )


def measured_acceleration(mask: MaskSeries | np.ndarray) -> tuple[float, float]:
    """Return the acceleration factor ``R`` and the mean sampling rate ``1/R``."""
    mask = mask.mask if isinstance(mask, MaskSeries) else np.asarray(mask, dtype=bool)
    count = np.count_nonzero(mask)
    if count == 0:
        raise SamplingError("Cannot measure the acceleration of an empty mask")
    rate = count / mask.size
    return 1.0 / rate, rate


def config_for_acceleration(
    target: float,
    ny: int,
    nz: int,
    nt: int,
    angle_increment_deg: float = GOLDEN_ANGLE_DEG,
    seed: int | None = None,
    warn: bool = True,
) -> SamplingConfig:
    """Search the spoke budget whose measured acceleration is closest to ``target``.

    Grids too small to reach ``target`` with one spoke per phase yield the
    sparsest reachable mask.
    """

    def make(total: int) -> SamplingConfig:
        return SamplingConfig(
            ny=ny,
            nz=nz,
            nt=nt,
            spokes_per_phase=total / nt,
            angle_increment_deg=angle_increment_deg,
            seed=seed,
        )

    def accel(total: int) -> float:
        return measured_acceleration(_rasterize(make(total), total))[0]

    low, high = nt, nt
    while accel(high) > target:
        low, high = high, high * 2
        if high > nt * 64 * max(ny, nz):
            raise SamplingError(f"Acceleration {target} is not reachable")
    # smallest budget with R <= target lies in (low, high]
    while high - low > 1:
        middle = (low + high) // 2
        if accel(middle) > target:
            low = middle
        else:
            high = middle
    candidates = [high] if high == nt else [high - 1, high]
    best = min(candidates, key=lambda total: abs(accel(total) - target))
    achieved = accel(best)
    if abs(achieved - target) > ACCELERATION_TOLERANCE * target:
        (LOGGER.warning if warn else LOGGER.debug)(
            "Requested R=%.2f, closest reachable R=%.2f on a %dx%d grid",
            target,
            achieved,
            ny,
            nz,
        )
    return make(best)


def pattern_for_acceleration(
    target: float,
    ny: int,
    nz: int,
    nt: int,
    angle_increment_deg: float = GOLDEN_ANGLE_DEG,
    seed: int | None = None,
    warn: bool = True,
) -> MaskSeries:
    """Return the golden-angle mask closest to acceleration ``target``; R <= 1 samples everything."""
    if target <= 1.0:
        return MaskSeries(np.ones((nt, nz, ny), dtype=bool))
    return generate_pattern(
        config_for_acceleration(target, ny, nz, nt, angle_increment_deg, seed, warn)
    )


def retrospective_undersample(
    full_k: KSpaceData,
    mask: MaskSeries | np.ndarray,
) -> KSpaceData:
    """Zero-fill every k-space entry outside the mask and attach the mask."""
    if isinstance(mask, MaskSeries):
        mask = mask.mask
    mask = np.asarray(mask, dtype=bool)
    for series in mask.reshape((-1,) + mask.shape[-3:]):
        MaskSeries(series)
    if mask.shape[-3:] != full_k.samples.shape[-4:-1]:
        raise DimensionError(
            f"Mask {mask.shape} does not match k-space {full_k.samples.shape}"
        )
    return KSpaceData(full_k.samples * expand_mask(mask), mask)
