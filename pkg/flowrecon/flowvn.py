"""The FlowVN unrolled variational network and its HamVN-style variants.

Each layer takes one gradient step with momentum on a learned energy::

    G = a_d(M) E^H(M phi_d(M (E P - B))) + a_r(M) sum_i D_i^T phi_r,i(D_i P)
    S <- alpha S + G
    P <- P - S

where ``M`` is the mean sampling rate of the mask, ``D_i`` the filters of the
4 banks and all activations act on real and imaginary parts separately.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .activations import ActivationKnots, ComplexActivation, apply_activation, apply_complex, pl_activation
from .config import NETWORK_SCHEMA, validate
from .const import (
    FILTER_BANKS,
    LOGGER,
    VN_FILTER_INIT_SCALE,
    VN_FILTERS,
    VN_KERNEL_SIZE,
    VN_KNOT_SPACING,
    VN_KNOTS,
    VN_LAYERS,
    VN_MODULATION_KNOTS,
    VN_MODULATION_RANGE,
    WEIGHTS_FORMAT,
    WEIGHTS_MAGIC,
)
from .encoding import decode, encode
from .filters import conv_adjoint, conv_forward, random_kernels
from .models import CoilSet, ConfigError, ContainerError, KSpaceData, NumericalError


@dataclass
class NetworkConfig:
    """Architecture and variant flags of the unrolled network."""

    layers: int = VN_LAYERS
    n_filters: int = VN_FILTERS
    kernel_size: int = VN_KERNEL_SIZE
    n_knots: int = VN_KNOTS
    knot_spacing: float = VN_KNOT_SPACING
    modulation_knots: int = VN_MODULATION_KNOTS
    banks: list[str] = field(default_factory=lambda: list(FILTER_BANKS))
    momentum: bool = True
    modulation: bool = True
    data_activation: bool = True
    activation_kind: str = "piecewise_linear"
    filter_init_scale: float = VN_FILTER_INIT_SCALE

    def __post_init__(self) -> None:
        """Validate the configuration."""
        for key, value in validate(NETWORK_SCHEMA, asdict(self), "NetworkConfig").items():
            setattr(self, key, value)

    def to_dict(self) -> dict:
        """Return a JSON-serializable copy."""
        return asdict(self)


def flowvn_config(**overrides) -> NetworkConfig:
    """The full FlowVN architecture."""
    return NetworkConfig(**overrides)


def hamvn_config(**overrides) -> NetworkConfig:
    """Radial-basis activations without momentum, data activation or modulation."""
    settings = {
        "activation_kind": "rbf",
        "momentum": False,
        "modulation": False,
        "data_activation": False,
    }
    return NetworkConfig(**(settings | overrides))


@dataclass
class LadderStep:
    """One rung of the ablation ladder from HamVN to FlowVN."""

    name: str
    network: NetworkConfig
    exp_weighting: bool


def ladder_configs(**overrides) -> list[LadderStep]:
    """Return the accumulated modifications leading from HamVN to FlowVN."""
    changes = [
        ("hamvn", {}, False),
        ("+linear_activation", {"activation_kind": "piecewise_linear"}, False),
        ("+momentum", {"momentum": True}, False),
        ("+data_activation", {"data_activation": True}, False),
        ("+modulation", {"modulation": True}, False),
        ("flowvn", {}, True),
    ]
    steps = []
    settings: dict = {}
    for name, change, exp_weighting in changes:
        settings |= change
        steps.append(LadderStep(name, hamvn_config(**(settings | overrides)), exp_weighting))
    return steps


@dataclass
class LayerParams:
    """Views on the parameters of one layer."""

    kernels: dict[str, np.ndarray]
    reg_knots: dict[str, ActivationKnots]
    data_knots: ActivationKnots
    mod_data: ActivationKnots
    mod_reg: ActivationKnots
    momentum: float


def _modulation_knots(values: np.ndarray) -> ActivationKnots:
    low, high = VN_MODULATION_RANGE
    return ActivationKnots(values, (high - low) / (values.shape[-1] - 1), origin=low)


@dataclass
class NetworkParams:
    """All parameters of the network as a flat mapping of named arrays.

    Names follow ``layer{k}.kernel.{bank}``, ``layer{k}.reg_knots.{bank}``,
    ``layer{k}.data_knots``, ``layer{k}.mod_data``, ``layer{k}.mod_reg``,
    ``layer{k}.momentum`` and ``alpha0``.
    """

    config: NetworkConfig
    values: dict[str, np.ndarray]

    @property
    def alpha0(self) -> float:
        """Return the scale of the initial zero-filled estimate."""
        return float(self.values["alpha0"])

    def layer(self, k: int) -> LayerParams:
        """Return parameter views for layer ``k``."""
        cfg, v = self.config, self.values
        return LayerParams(
            kernels={bank: v[f"layer{k}.kernel.{bank}"] for bank in cfg.banks},
            reg_knots={
                bank: ActivationKnots(v[f"layer{k}.reg_knots.{bank}"], cfg.knot_spacing)
                for bank in cfg.banks
            },
            data_knots=ActivationKnots(v[f"layer{k}.data_knots"], cfg.knot_spacing),
            mod_data=_modulation_knots(v[f"layer{k}.mod_data"]),
            mod_reg=_modulation_knots(v[f"layer{k}.mod_reg"]),
            momentum=float(v[f"layer{k}.momentum"]),
        )

    def is_trainable(self, name: str) -> bool:
        """Return whether a parameter is updated under the variant flags."""
        cfg = self.config
        if name.endswith(".momentum"):
            return cfg.momentum
        if name.endswith((".mod_data", ".mod_reg")):
            return cfg.modulation
        if name.endswith(".data_knots"):
            return cfg.data_activation
        return True

    def trainable_names(self) -> list[str]:
        """Return the names of all trainable parameters."""
        return [name for name in self.values if self.is_trainable(name)]

    def parameter_count(self) -> int:
        """Return the number of trainable scalars."""
        return int(sum(self.values[name].size for name in self.trainable_names()))

    def copy(self) -> NetworkParams:
        """Return a deep copy."""
        return NetworkParams(self.config, {k: v.copy() for k, v in self.values.items()})

    def check_finite(self) -> None:
        """Raise NumericalError naming the first non-finite parameter."""
        for name, value in self.values.items():
            if not np.all(np.isfinite(value)):
                raise NumericalError(name)


def init_params(
    cfg: NetworkConfig,
    filter_init: str = "random",
    seed: int | None = 0,
) -> NetworkParams:
    """Initialize the network.

    Activations start as identities, the modulation as the constant 1,
    momentum at 0 and ``alpha0`` at 1. With ``filter_init="zero"`` the network
    is plain unrolled gradient descent on the data term.
    """
    if filter_init not in ("zero", "random"):
        raise ConfigError(f"Unknown filter initialization {filter_init!r}")
    rng = np.random.default_rng(seed)
    n, f, size = cfg.n_knots, cfg.n_filters, cfg.kernel_size
    identity = ActivationKnots.identity(n, cfg.knot_spacing, cfg.activation_kind).phi
    values: dict[str, np.ndarray] = {}
    for k in range(cfg.layers):
        for bank in cfg.banks:
            if filter_init == "zero":
                kernels = np.zeros((f, size, size, size))
            else:
                kernels = random_kernels(f, size, rng, cfg.filter_init_scale)
            values[f"layer{k}.kernel.{bank}"] = kernels
            values[f"layer{k}.reg_knots.{bank}"] = np.tile(identity, (f, 1))
        values[f"layer{k}.data_knots"] = identity.copy()
        values[f"layer{k}.mod_data"] = np.ones(cfg.modulation_knots)
        values[f"layer{k}.mod_reg"] = np.ones(cfg.modulation_knots)
        values[f"layer{k}.momentum"] = np.zeros(())
    values["alpha0"] = np.ones(())
    return NetworkParams(cfg, values)


def parameter_count(params: NetworkParams) -> int:
    """Return the number of trainable scalars of ``params``."""
    return params.parameter_count()


def mean_sampling_rate(mask: np.ndarray) -> float:
    """Return the fraction of sampled ``(t, kz, ky)`` locations."""
    mask = np.asarray(mask, dtype=bool)
    return float(np.count_nonzero(mask) / mask.size)


@dataclass
class Problem:
    """Data a network reconstructs from, with the masked samples precomputed."""

    b: KSpaceData
    coils: CoilSet

    def __post_init__(self) -> None:
        """Cache the expanded mask, the masked data and the sampling rate."""
        self.mask = self.b.expanded_mask()
        self.data = self.b.samples * self.mask
        self.mbar = mean_sampling_rate(self.b.mask)
        self.zero_filled = decode(self.data, self.coils.maps, self.mask)

    def encode(self, p: np.ndarray) -> np.ndarray:
        """Return ``M E p``."""
        return encode(p, self.coils.maps, self.mask)

    def decode(self, k: np.ndarray) -> np.ndarray:
        """Return ``E^H M k``."""
        return decode(k, self.coils.maps, self.mask)


@dataclass
class LayerState:
    """Iterate and momentum accumulator."""

    p: np.ndarray
    s: np.ndarray


def _require_finite(x: np.ndarray, index: int) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"layer {index}")
    return x


@dataclass
class LayerCache:
    """Intermediate values of one layer step, as needed by the reverse pass."""

    residual_act: ComplexActivation | None
    filter_acts: dict[str, ComplexActivation]
    data_grad: np.ndarray
    reg_grad: np.ndarray
    a_data: float
    a_reg: float
    mod_data_act: object | None
    mod_reg_act: object | None


def layer_forward(
    state: LayerState,
    problem: Problem,
    layer: LayerParams,
    cfg: NetworkConfig,
    index: int = 0,
) -> tuple[LayerState, LayerCache]:
    """Run one layer and keep what the reverse pass needs.

    Raises NumericalError naming the layer when an activation input is not finite.
    """
    p = state.p
    residual = problem.encode(p) - problem.data
    residual_act = None
    if cfg.data_activation:
        _require_finite(residual, index)
        residual_act = apply_complex(cfg.activation_kind, residual, layer.data_knots)
        residual = residual_act.value
    data_grad = problem.decode(residual)

    filter_acts = {}
    reg_grad = np.zeros_like(p)
    for bank, kernels in layer.kernels.items():
        axes = FILTER_BANKS[bank]
        response = _require_finite(conv_forward(p, kernels, axes), index)
        act = apply_complex(cfg.activation_kind, response, layer.reg_knots[bank])
        filter_acts[bank] = act
        reg_grad += conv_adjoint(act.value, kernels, axes)

    mod_data_act = mod_reg_act = None
    a_data = a_reg = 1.0
    if cfg.modulation:
        mod_data_act = pl_activation(np.asarray(problem.mbar), layer.mod_data)
        mod_reg_act = pl_activation(np.asarray(problem.mbar), layer.mod_reg)
        a_data, a_reg = float(mod_data_act.value), float(mod_reg_act.value)

    g = a_data * data_grad + a_reg * reg_grad
    s = layer.momentum * state.s + g if cfg.momentum else g
    cache = LayerCache(
        residual_act=residual_act,
        filter_acts=filter_acts,
        data_grad=data_grad,
        reg_grad=reg_grad,
        a_data=a_data,
        a_reg=a_reg,
        mod_data_act=mod_data_act,
        mod_reg_act=mod_reg_act,
    )
    return LayerState(p=p - s, s=s), cache


def layer_step(
    state: LayerState,
    problem: Problem,
    layer: LayerParams,
    cfg: NetworkConfig,
    index: int = 0,
) -> LayerState:
    """Advance ``(P, S)`` by one layer; raises NumericalError naming the layer."""
    new_state, _ = layer_forward(state, problem, layer, cfg, index)
    if not np.all(np.isfinite(new_state.p)):
        raise NumericalError(f"layer {index}")
    return new_state


def infer(
    b: KSpaceData,
    coils: CoilSet,
    params: NetworkParams,
    keep_intermediates: bool = False,
) -> np.ndarray | tuple[np.ndarray, list[LayerState]]:
    """Reconstruct normalized k-space with the network.

    With ``keep_intermediates`` the states ``(P, S)`` before every layer and
    after the last one are returned too.
    """
    problem = Problem(b, coils)
    state = LayerState(p=params.alpha0 * problem.zero_filled, s=np.zeros_like(problem.zero_filled))
    states = [state]
    for k in range(params.config.layers):
        state = layer_step(state, problem, params.layer(k), params.config, k)
        if keep_intermediates:
            states.append(state)
    LOGGER.debug("Network inference through %d layers (M=%.4f)", params.config.layers, problem.mbar)
    if keep_intermediates:
        return state.p, states
    return state.p


def activation_curve(knots: ActivationKnots, kind: str, h: np.ndarray) -> np.ndarray:
    """Evaluate one learned activation on ``h`` (for plotting)."""
    return apply_activation(kind, h, knots).value


def save_weights(path: Path | str, params: NetworkParams) -> None:
    """Write the parameters as magic, header length, JSON header and float64 payload."""
    path = Path(path)
    arrays = []
    offset = 0
    for name, value in params.values.items():
        arrays.append({"name": name, "shape": list(value.shape), "offset": offset})
        offset += value.size * 8
    cfg = params.config
    header = {
        "format": WEIGHTS_FORMAT,
        "layers": cfg.layers,
        "n_filters": cfg.n_filters,
        "kernel_size": cfg.kernel_size,
        "n_knots": cfg.n_knots,
        "omega": cfg.knot_spacing,
        "config": cfg.to_dict(),
        "arrays": arrays,
    }
    encoded = json.dumps(header).encode()
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in params.values.values())
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(WEIGHTS_MAGIC + struct.pack("<Q", len(encoded)) + encoded + payload)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    LOGGER.debug("Wrote %d parameters to %s", sum(v.size for v in params.values.values()), path)


def load_weights(path: Path | str) -> NetworkParams:
    """Read parameters written by ``save_weights``."""
    raw = Path(path).read_bytes()
    start = len(WEIGHTS_MAGIC) + 8
    if len(raw) < start or raw[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise ContainerError(f"{path} is not a network weights file")
    (length,) = struct.unpack("<Q", raw[len(WEIGHTS_MAGIC) : start])
    try:
        header = json.loads(raw[start : start + length])
    except ValueError as e:
        raise ContainerError(f"{path} has a corrupt header") from e
    if header.get("format") != WEIGHTS_FORMAT:
        raise ContainerError(f"Unsupported weights format {header.get('format')!r}")
    payload = raw[start + length :]
    values = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = entry["offset"] + count * 8
        if end > len(payload):
            raise ContainerError(f"{path} is truncated at {entry['name']}")
        values[entry["name"]] = (
            np.frombuffer(payload[entry["offset"] : end], dtype="<f8")
            .astype(np.float64)
            .reshape(entry["shape"])
        )
    return NetworkParams(NetworkConfig(**header["config"]), values)
