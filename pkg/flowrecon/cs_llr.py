"""FISTA reconstruction with locally-low-rank regularization."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .config import LLR_SCHEMA, validate
from .const import DIVERGENCE_FACTOR, LLR_LAMBDA, LLR_MAX_ITERS, LLR_PATCH_SIZE, LOGGER, POWER_ITERATIONS
from .encoding import decode, encode
from .models import CoilSet, ConfigError, DivergenceError, KSpaceData, NumericalError


@dataclass
class LLRConfig:
    """Settings of the CS-LLR solver."""

    patch_size: int = LLR_PATCH_SIZE
    lam: float = LLR_LAMBDA
    max_iters: int = LLR_MAX_ITERS
    random_shift: bool = True
    seed: int | None = 0

    def __post_init__(self) -> None:
        """Validate the configuration."""
        for key, value in validate(LLR_SCHEMA, asdict(self), "LLRConfig").items():
            setattr(self, key, value)


def svt(a: np.ndarray, tau: float) -> np.ndarray:
    """Soft-threshold the singular values of ``a`` (batched over leading axes)."""
    if tau < 0:
        raise ConfigError(f"SVT threshold must be >= 0, got {tau}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("svt input")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (u * s[..., None, :]) @ vh


def nuclear_norm(a: np.ndarray) -> np.ndarray:
    """Return the nuclear norm of each matrix in a batch."""
    return np.sum(np.linalg.svd(a, compute_uv=False), axis=-1)


def _patch_shape(spatial: tuple[int, int, int], p: int) -> tuple[int, int, int]:
    return tuple(min(p, n) for n in spatial)


def to_patches(img: np.ndarray, p: int) -> tuple[np.ndarray, tuple[int, ...]]:
    """Cut a ``[t][z][y][x]`` image into non-overlapping ``(voxels, t)`` patch matrices.

    Axes that do not divide evenly are padded by reflection. Returns the patch
    stack and the padded shape needed by ``from_patches``.
    """
    nt = img.shape[0]
    pz, py, px = _patch_shape(img.shape[1:], p)
    pads = [(0, 0)] + [(0, -n % q) for n, q in zip(img.shape[1:], (pz, py, px))]
    padded = np.pad(img, pads, mode="symmetric")
    _, nz, ny, nx = padded.shape
    blocks = padded.reshape(nt, nz // pz, pz, ny // py, py, nx // px, px)
    blocks = blocks.transpose(1, 3, 5, 2, 4, 6, 0).reshape(-1, pz * py * px, nt)
    return blocks, padded.shape


def from_patches(
    blocks: np.ndarray,
    padded_shape: tuple[int, ...],
    shape: tuple[int, ...],
    p: int,
) -> np.ndarray:
    """Reassemble patch matrices and crop the reflection padding."""
    nt, nz, ny, nx = padded_shape
    pz, py, px = _patch_shape(shape[1:], p)
    img = blocks.reshape(nz // pz, ny // py, nx // px, pz, py, px, nt)
    img = img.transpose(6, 0, 3, 1, 4, 2, 5).reshape(padded_shape)
    return img[:, : shape[1], : shape[2], : shape[3]]


def llr_prox(
    p_img: np.ndarray,
    tau: float,
    cfg: LLRConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Proximal step of the locally-low-rank penalty.

    With ``cfg.random_shift`` the patch grid is cyclically shifted by an offset
    drawn from ``rng`` (a fresh one seeded from ``cfg.seed`` if None).
    Leading axes beyond ``[t][z][y][x]`` are processed independently.
    """
    p_img = np.asarray(p_img)
    if p_img.ndim > 4:
        if cfg.random_shift and rng is None:
            rng = np.random.default_rng(cfg.seed)
        return np.stack([llr_prox(part, tau, cfg, rng) for part in p_img])
    if tau == 0:
        return p_img.copy()
    shift = (0, 0, 0)
    if cfg.random_shift:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        shift = tuple(int(rng.integers(0, q)) for q in _patch_shape(p_img.shape[1:], cfg.patch_size))
    rolled = np.roll(p_img, [-s for s in shift], axis=(1, 2, 3))
    blocks, padded_shape = to_patches(rolled, cfg.patch_size)
    blocks = svt(blocks, tau)
    out = from_patches(blocks, padded_shape, p_img.shape, cfg.patch_size)
    return np.roll(out, shift, axis=(1, 2, 3))


def llr_penalty(p_img: np.ndarray, cfg: LLRConfig) -> float:
    """Sum of patch nuclear norms over the fixed, unshifted partition."""
    p_img = np.asarray(p_img)
    if p_img.ndim > 4:
        return float(sum(llr_penalty(part, cfg) for part in p_img))
    blocks, _ = to_patches(p_img, cfg.patch_size)
    return float(np.sum(nuclear_norm(blocks)))


def llr_objective(p_img: np.ndarray, b: KSpaceData, coils: CoilSet, cfg: LLRConfig) -> float:
    """Return ``1/2 ||M (E P - B)||^2 + lambda * sum_i ||T_i P||_*``."""
    mask = b.expanded_mask()
    residual = encode(p_img, coils.maps, mask) - b.samples * mask
    data = 0.5 * float(np.vdot(residual, residual).real)
    if cfg.lam == 0:
        return data
    return data + cfg.lam * llr_penalty(p_img, cfg)


def lipschitz_constant(b: KSpaceData, coils: CoilSet, iterations: int = POWER_ITERATIONS) -> float:
    """Estimate the largest eigenvalue of ``E^H M E`` by power iteration."""
    mask = b.expanded_mask()
    rng = np.random.default_rng(0)
    shape = b.image_shape
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    value = 0.0
    for _ in range(iterations):
        y = decode(encode(x, coils.maps, mask), coils.maps, mask)
        value = float(np.linalg.norm(y))
        if value == 0.0:
            break
        x = y / value
    return value if value > 0 else 1.0


def fista_reconstruct(
    b: KSpaceData,
    coils: CoilSet,
    cfg: LLRConfig,
) -> tuple[np.ndarray, list[float]]:
    """Reconstruct ``b`` (already normalized) with FISTA and the LLR prox.

    Returns the image and the per-iteration objective over the fixed patch
    partition. Without random shifts the monotone variant is used, so that
    trace never increases.
    """
    mask = b.expanded_mask()
    data = b.samples * mask
    rng = np.random.default_rng(cfg.seed)
    lipschitz = lipschitz_constant(b, coils)
    step = 1.0 / lipschitz
    monotone = not cfg.random_shift

    x = decode(data, coils.maps, mask)
    y = x.copy()
    t = 1.0
    objective = llr_objective(x, b, coils, cfg)
    initial = objective
    floor = 1e-12 * (float(np.vdot(data, data).real) + 1.0)
    trace: list[float] = []
    LOGGER.debug("FISTA: L=%.4g, initial objective %.6g", lipschitz, initial)

    for k in range(cfg.max_iters):
        gradient = decode(encode(y, coils.maps, mask) - data, coils.maps, mask)
        z = llr_prox(y - step * gradient, cfg.lam * step, cfg, rng)
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"FISTA iteration {k}")
        t_next = (1 + np.sqrt(1 + 4 * t * t)) / 2
        if monotone:
            z_objective = llr_objective(z, b, coils, cfg)
            x_prev = x
            if z_objective <= objective:
                x, objective = z, z_objective
            y = x + (t / t_next) * (z - x) + ((t - 1) / t_next) * (x - x_prev)
        else:
            x_prev, x = x, z
            objective = llr_objective(x, b, coils, cfg)
            y = x + ((t - 1) / t_next) * (x - x_prev)
        t = t_next
        trace.append(objective)
        LOGGER.debug("FISTA iteration %d: objective %.6g", k, objective)
        if objective > DIVERGENCE_FACTOR * max(initial, floor):
            raise DivergenceError(
                f"FISTA objective {objective:.4g} exceeded {DIVERGENCE_FACTOR}x the initial {initial:.4g}"
            )
    return x, trace
