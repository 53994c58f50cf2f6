"""Reverse-mode gradients through the unrolled network, ADAM and the training loop."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import TRAIN_SCHEMA, validate
from .const import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    ADAM_LR,
    FILTER_BANKS,
    LOGGER,
    TAU_RATE,
    TRAIN_METRICS_COLUMNS,
    TRAIN_PROFILES,
)
from .encoding import forward_encode, normalize_kspace, velocity_decode
from .filters import conv_adjoint, conv_forward, conv_kernel_grad
from .flowvn import (
    LayerState,
    NetworkConfig,
    NetworkParams,
    Problem,
    infer,
    init_params,
    layer_forward,
    layer_step,
    save_weights,
)
from .metrics import rel_err
from .models import CoilSet, ConfigError, DivergenceError, KSpaceData, NumericalError, VelocityEncoding
from .monitor import CheckpointMonitor, CheckpointRecord
from .sampling import pattern_for_acceleration


@dataclass
class TrainConfig:
    """Optimizer, schedule and data-augmentation settings."""

    iters: int = TRAIN_PROFILES["desk"]["iters"]
    lr: float = ADAM_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    batch: int = 3
    tau_rate: float = TAU_RATE
    crop_x: int = TRAIN_PROFILES["desk"]["crop_x"]
    crop_t: int = TRAIN_PROFILES["desk"]["crop_t"]
    r_min: float = 6.0
    r_max: float = 22.0
    exp_weighting: bool = True
    checkpoint_every: int = TRAIN_PROFILES["desk"]["checkpoint_every"]
    validation_r: float = 10.0
    workers: int = 1
    seed: int | None = 0

    def __post_init__(self) -> None:
        """Validate the configuration."""
        for key, value in validate(TRAIN_SCHEMA, asdict(self), "TrainConfig").items():
            setattr(self, key, value)
        if self.r_min > self.r_max:
            raise ConfigError(f"r_min {self.r_min} exceeds r_max {self.r_max}")

    @classmethod
    def from_profile(cls, name: str, **overrides) -> TrainConfig:
        """Create a configuration from a named training profile."""
        if name not in TRAIN_PROFILES:
            raise ConfigError(f"Unknown training profile {name!r}")
        return cls(**(TRAIN_PROFILES[name] | overrides))


def loss_weights(layers: int, tau: float, exp_weighting: bool = True) -> np.ndarray:
    """Weights ``exp(-tau (K - k))`` of the layer outputs ``k = 1..K``."""
    if tau < 0:
        raise ConfigError(f"tau must be >= 0, got {tau}")
    if not exp_weighting:
        weights = np.zeros(layers)
        weights[-1] = 1.0
        return weights
    log_weights = -tau * (layers - np.arange(1, layers + 1))
    return np.exp(log_weights)


def l1_norm(x: np.ndarray) -> float:
    """Sum of absolute real and imaginary parts."""
    return float(np.sum(np.abs(x.real)) + np.sum(np.abs(x.imag)))


def exp_weighted_loss(
    intermediates: list[np.ndarray],
    target: np.ndarray,
    tau: float,
    exp_weighting: bool = True,
) -> float:
    """Return ``sum_k exp(-tau (K - k)) ||P_k - P*||_1`` over the layer outputs ``P_1..P_K``."""
    for p in intermediates:
        if p.shape != target.shape:
            raise ConfigError(f"Layer output {p.shape} does not match target {target.shape}")
    weights = loss_weights(len(intermediates), tau, exp_weighting)
    return float(sum(w * l1_norm(p - target) for w, p in zip(weights, intermediates) if w > 0))


def _l1_subgradient(x: np.ndarray) -> np.ndarray:
    return np.sign(x.real) + 1j * np.sign(x.imag)


def backward(
    b: KSpaceData,
    coils: CoilSet,
    params: NetworkParams,
    target: np.ndarray,
    tau: float,
    exp_weighting: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    """Return the loss and its gradient with respect to every parameter.

    The forward pass keeps only the states ``(P, S)`` between layers; layer
    internals are recomputed on the way back. Parameters frozen by the variant
    flags get zero gradients.
    """
    cfg = params.config
    problem = Problem(b, coils)
    states = [LayerState(p=params.alpha0 * problem.zero_filled, s=np.zeros_like(problem.zero_filled))]
    for k in range(cfg.layers):
        states.append(layer_step(states[-1], problem, params.layer(k), cfg, k))

    weights = loss_weights(cfg.layers, tau, exp_weighting)
    loss = float(
        sum(w * l1_norm(s.p - target) for w, s in zip(weights, states[1:]) if w > 0)
    )
    grads = {name: np.zeros_like(value) for name, value in params.values.items()}
    p_bar = np.zeros_like(states[0].p)
    s_bar = np.zeros_like(states[0].p)

    for k in reversed(range(cfg.layers)):
        if weights[k] > 0:
            p_bar = p_bar + weights[k] * _l1_subgradient(states[k + 1].p - target)
        # P_{k+1} = P_k - S_{k+1}
        s_bar = s_bar - p_bar
        state = states[k]
        layer = params.layer(k)
        _, cache = layer_forward(state, problem, layer, cfg, k)

        # S_{k+1} = alpha S_k + G
        g_bar = s_bar
        if cfg.momentum:
            grads[f"layer{k}.momentum"] = np.asarray(np.vdot(s_bar, state.s).real)
            s_bar = layer.momentum * s_bar
        else:
            s_bar = np.zeros_like(s_bar)

        if cfg.modulation:
            a_data_bar = float(np.vdot(g_bar, cache.data_grad).real)
            a_reg_bar = float(np.vdot(g_bar, cache.reg_grad).real)
            grads[f"layer{k}.mod_data"] = cache.mod_data_act.knot_gradient(a_data_bar)
            grads[f"layer{k}.mod_reg"] = cache.mod_reg_act.knot_gradient(a_reg_bar)

        # data term a_d E^H M phi_d(M(E P - B))
        q_bar = problem.encode(cache.a_data * g_bar)
        if cfg.data_activation:
            grads[f"layer{k}.data_knots"] = cache.residual_act.knot_gradient(q_bar)
            q_bar = cache.residual_act.backward(q_bar)
        p_bar_layer = problem.decode(q_bar)

        # regularizer a_r sum_i D_i^T phi_r(D_i P)
        reg_bar = cache.a_reg * g_bar
        for bank, kernels in layer.kernels.items():
            axes = FILTER_BANKS[bank]
            act = cache.filter_acts[bank]
            z_bar = conv_forward(reg_bar, kernels, axes)
            grads[f"layer{k}.reg_knots.{bank}"] = act.knot_gradient(z_bar)
            u_bar = act.backward(z_bar)
            p_bar_layer = p_bar_layer + conv_adjoint(u_bar, kernels, axes)
            grads[f"layer{k}.kernel.{bank}"] = conv_kernel_grad(
                reg_bar, act.value, kernels.shape, axes
            ) + conv_kernel_grad(state.p, u_bar, kernels.shape, axes)
        p_bar = p_bar + p_bar_layer

    grads["alpha0"] = np.asarray(np.vdot(p_bar, problem.zero_filled).real)
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"gradient of {name}")
    return loss, grads


@dataclass
class AdamState:
    """First and second moments per parameter and the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: NetworkParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[NetworkParams, AdamState]:
    """Apply one bias-corrected ADAM update to the trainable parameters."""
    params = params.copy()
    step = state.step + 1
    bc1 = 1.0 - cfg.beta1**step
    bc2 = 1.0 - cfg.beta2**step
    m, v = dict(state.m), dict(state.v)
    for name in params.trainable_names():
        g = grads[name]
        if g.shape != params.values[name].shape:
            raise ConfigError(f"Gradient of {name} has shape {g.shape}, expected {params.values[name].shape}")
        m[name] = cfg.beta1 * m.get(name, np.zeros_like(g)) + (1 - cfg.beta1) * g
        v[name] = cfg.beta2 * v.get(name, np.zeros_like(g)) + (1 - cfg.beta2) * (g * g)
        params.values[name] = params.values[name] - cfg.lr * (m[name] / bc1) / (
            np.sqrt(v[name] / bc2) + ADAM_EPS
        )
    return params, AdamState(m=m, v=v, step=step)


@dataclass
class TrainingVolume:
    """A fully sampled four-encoding image stack and its coils."""

    images: np.ndarray
    coils: CoilSet
    segmentation: np.ndarray | None = None


@dataclass
class TrainingExample:
    """A cropped target and the normalized undersampled data simulated from it."""

    target: np.ndarray
    b: KSpaceData
    coils: CoilSet
    acceleration: float


def sample_training_example(
    volume: TrainingVolume,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> TrainingExample:
    """Draw a random encoding, readout crop, circular time crop and acceleration."""
    images = volume.images
    if images.ndim == 5:
        images = images[rng.integers(images.shape[0])]
    nt, nz, ny, nx = images.shape
    if cfg.crop_x > nx or cfg.crop_t > nt:
        raise ConfigError(f"Crop {cfg.crop_x}x{cfg.crop_t} exceeds volume nx={nx}, nt={nt}")
    x0 = int(rng.integers(0, nx - cfg.crop_x + 1))
    t0 = int(rng.integers(0, nt))
    times = (t0 + np.arange(cfg.crop_t)) % nt
    target = images[times][..., x0 : x0 + cfg.crop_x]
    coils = volume.coils.crop_x(x0, cfg.crop_x)
    acceleration = float(rng.uniform(cfg.r_min, cfg.r_max))
    mask = pattern_for_acceleration(
        acceleration, ny, nz, cfg.crop_t, seed=int(rng.integers(2**31)), warn=False
    )
    b, scale = normalize_kspace(forward_encode(target, coils, mask))
    return TrainingExample(target=target * scale, b=b, coils=coils, acceleration=acceleration)


@dataclass
class ValidationCase:
    """A fixed full-size undersampled volume used to track progress."""

    problems: list[KSpaceData]
    targets: np.ndarray
    coils: CoilSet
    segmentation: np.ndarray | None


def make_validation_case(volume: TrainingVolume, acceleration: float, seed: int | None) -> ValidationCase:
    """Undersample every encoding of ``volume`` with one mask and normalize each."""
    nt, nz, ny, _ = volume.images.shape[-4:]
    mask = pattern_for_acceleration(acceleration, ny, nz, nt, seed=seed, warn=False)
    problems, targets = [], []
    for image in volume.images.reshape((-1,) + volume.images.shape[-4:]):
        b, scale = normalize_kspace(forward_encode(image, volume.coils, mask))
        problems.append(b)
        targets.append(image * scale)
    return ValidationCase(problems, np.stack(targets), volume.coils, volume.segmentation)


def validation_errors(
    params: NetworkParams,
    cases: list[ValidationCase],
    tau: float,
    exp_weighting: bool,
) -> tuple[float, float, float]:
    """Return the loss, the relative image l1 error and the in-lumen velocity RelErr."""
    enc = VelocityEncoding(venc=1.0)
    losses, l1_errors, velocity_errors = [], [], []
    for case in cases:
        recons = []
        for b, target in zip(case.problems, case.targets):
            p, states = infer(b, case.coils, params, keep_intermediates=True)
            losses.append(exp_weighted_loss([s.p for s in states[1:]], target, tau, exp_weighting))
            recons.append(p)
        recons = np.stack(recons)
        l1_errors.append(l1_norm(recons - case.targets) / l1_norm(case.targets))
        if case.segmentation is not None and len(recons) == 4:
            # phase differences do not depend on venc
            v, _ = velocity_decode(recons, enc)
            v_ref, _ = velocity_decode(case.targets, enc)
            lumen = np.broadcast_to(case.segmentation, v.shape[1:])
            velocity_errors.append(
                rel_err(np.linalg.norm(v, axis=0)[lumen], np.linalg.norm(v_ref, axis=0)[lumen])
            )
    velocity = float(np.mean(velocity_errors)) if velocity_errors else float("nan")
    return float(np.mean(losses)), float(np.mean(l1_errors)), velocity


@dataclass
class TrainResult:
    """Outcome of a training run."""

    params: NetworkParams
    losses: list[float]
    checkpoints: list[CheckpointRecord]


def _write_checkpoint(out_dir: Path, params: NetworkParams, records: list[CheckpointRecord]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_weights(out_dir / "weights.flowvn", params)
    with (out_dir / "train_metrics.csv").open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=TRAIN_METRICS_COLUMNS)
        writer.writeheader()
        for record in records:
            writer.writerow(record.as_row())


def _diverged(
    out_dir: Path | None,
    params: NetworkParams,
    records: list[CheckpointRecord],
    detail: str,
) -> DivergenceError:
    if out_dir is not None:
        _write_checkpoint(out_dir, params, records)
    return DivergenceError(f"Training diverged {detail}")


def train(
    volumes: list[TrainingVolume],
    cfg: TrainConfig,
    network: NetworkConfig,
    out_dir: Path | str | None = None,
    validation: list[TrainingVolume] | None = None,
) -> TrainResult:
    """Train the network on random crops of fully sampled volumes.

    ``tau`` grows as ``iteration * tau_rate``. Checkpoints evaluate the loss,
    image l1 error and velocity error on fixed validation cases (the first
    training volume if none are given) and, with ``out_dir``, write the weights
    and the metrics CSV.
    """
    if not volumes:
        raise ConfigError("Training needs at least one volume")
    out_dir = Path(out_dir) if out_dir is not None else None
    rng = np.random.default_rng(cfg.seed)
    params = init_params(network, "random", cfg.seed)
    adam = AdamState()
    cases = [
        make_validation_case(volume, cfg.validation_r, seed=i)
        for i, volume in enumerate(validation or volumes[:1])
    ]
    monitor = CheckpointMonitor()
    records: list[CheckpointRecord] = []
    losses: list[float] = []
    LOGGER.info(
        "Training %d trainable parameters on %d volumes for %d iterations",
        params.parameter_count(),
        len(volumes),
        cfg.iters,
    )

    def checkpoint(iteration: int, tau: float) -> None:
        loss, image_l1, velocity = validation_errors(params, cases, tau, cfg.exp_weighting)
        record = CheckpointRecord(iteration, loss, image_l1, velocity, tau)
        records.append(record)
        monitor.add_checkpoint(record)
        if out_dir is not None:
            _write_checkpoint(out_dir, params, records)
        trend = monitor.calculate_trend("image_l1")
        LOGGER.info(
            "Checkpoint %d: loss %.4g, image l1 %.4f, velocity RelErr %.4f (%s)",
            iteration,
            loss,
            image_l1,
            velocity,
            trend["description"],
        )

    checkpoint(0, 0.0)
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for iteration in range(1, cfg.iters + 1):
            tau = iteration * cfg.tau_rate
            examples = [
                sample_training_example(volumes[int(rng.integers(len(volumes)))], cfg, rng)
                for _ in range(cfg.batch)
            ]

            def run(example: TrainingExample, tau: float = tau) -> tuple[float, dict]:
                return backward(example.b, example.coils, params, example.target, tau, cfg.exp_weighting)

            try:
                if cfg.workers > 1:
                    results = list(pool.map(run, examples))
                else:
                    results = [run(example) for example in examples]
            except NumericalError as e:
                raise _diverged(out_dir, params, records, f"at iteration {iteration}: {e}") from e
            # fixed accumulation order keeps runs reproducible
            loss = sum(result[0] for result in results) / cfg.batch
            grads = {
                name: sum(result[1][name] for result in results) / cfg.batch
                for name in params.values
            }
            losses.append(loss)
            if not np.isfinite(loss):
                raise _diverged(out_dir, params, records, f"with loss {loss} at iteration {iteration}")
            params, adam = adam_step(params, grads, adam, cfg)
            LOGGER.debug("Iteration %d: loss %.6g, tau %.3f", iteration, loss, tau)
            if iteration % cfg.checkpoint_every == 0 or iteration == cfg.iters:
                try:
                    checkpoint(iteration, tau)
                except NumericalError as e:
                    raise _diverged(out_dir, params, records, f"at checkpoint {iteration}: {e}") from e

    if not (monitor.decreased("image_l1") and monitor.decreased("velocity_relerr")):
        LOGGER.warning("Validation errors did not both decrease over training")
    return TrainResult(params=params, losses=losses, checkpoints=records)
