"""Reconstruction drivers shared by the CLI and the benchmark."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np

from .config import RUN_SCHEMA, validate
from .const import LOGGER, METHODS
from .cs_llr import LLRConfig, fista_reconstruct
from .encoding import adjoint_encode, normalize_kspace
from .flowvn import (
    NetworkConfig,
    NetworkParams,
    flowvn_config,
    hamvn_config,
    infer,
    init_params,
    load_weights,
)
from .models import CoilSet, ConfigError, KSpaceData


@dataclass
class RunConfig:
    """Everything needed to reproduce one CLI run."""

    method: str = "zerofill"
    seed: int | None = 0
    acceleration: float | None = None
    independent_masks: bool = False
    phantom: dict[str, Any] = field(default_factory=dict)
    sampling: dict[str, Any] = field(default_factory=dict)
    llr: dict[str, Any] = field(default_factory=dict)
    network: dict[str, Any] = field(default_factory=dict)
    train: dict[str, Any] = field(default_factory=dict)
    weights: str | None = None

    def __post_init__(self) -> None:
        """Validate the configuration."""
        data = {key: value for key, value in asdict(self).items() if value is not None}
        for key, value in validate(RUN_SCHEMA, data, "RunConfig").items():
            setattr(self, key, value)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunConfig:
        """Create a configuration from its dict form."""
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"Unknown RunConfig keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict[str, Any]:
        """Return a JSON-serializable copy."""
        return asdict(self)

    def llr_config(self) -> LLRConfig:
        """Return the CS-LLR settings."""
        return LLRConfig(**({"seed": self.seed} | self.llr))

    def network_config(self) -> NetworkConfig:
        """Return the network architecture for the configured method."""
        if self.method == "hamvn":
            return hamvn_config(**self.network)
        return flowvn_config(**self.network)


@dataclass
class ReconResult:
    """Reconstructed four-encoding images and how long they took."""

    images: np.ndarray
    seconds: float
    traces: list[list[float]] = field(default_factory=list)


def network_variant(cfg: NetworkConfig) -> str:
    """Return the method that runs a network: ``hamvn`` for rbf activations, else ``flowvn``."""
    return "hamvn" if cfg.activation_kind == "rbf" else "flowvn"


def network_params(run: RunConfig) -> NetworkParams:
    """Load trained weights, or fall back to the untrained unrolled gradient descent."""
    if run.weights:
        params = load_weights(run.weights)
        variant = network_variant(params.config)
        if variant != run.method:
            raise ConfigError(f"Weights {run.weights} hold a {variant} network, not {run.method}")
        return params
    LOGGER.warning("No weights given for %s; using the untrained identity initialization", run.method)
    return init_params(run.network_config(), "zero")


def reconstruct(
    method: str,
    b: KSpaceData,
    coils: CoilSet,
    llr: LLRConfig | None = None,
    params: NetworkParams | None = None,
) -> ReconResult:
    """Reconstruct each velocity encoding separately.

    Every encoding is normalized before and rescaled after reconstruction, so
    the result lives on the scale of the input data.
    """
    if method not in METHODS:
        raise ConfigError(f"Unknown method {method!r}, expected one of {METHODS}")
    if method == "csllr" and llr is None:
        llr = LLRConfig()
    if method in ("flowvn", "hamvn") and params is None:
        raise ConfigError(f"Method {method} needs network parameters")
    parts = [b.encoding(i) for i in range(b.samples.shape[0])] if b.has_encodings else [b]

    start = time.perf_counter()
    images, traces = [], []
    for index, part in enumerate(parts):
        normalized, scale = normalize_kspace(part)
        if method == "zerofill":
            image = adjoint_encode(normalized, coils)
        elif method == "csllr":
            image, trace = fista_reconstruct(normalized, coils, llr)
            traces.append(trace)
        else:
            image = infer(normalized, coils, params)
        images.append(image / scale)
        LOGGER.debug("Encoding %d reconstructed with %s", index, method)
    seconds = time.perf_counter() - start
    result = np.stack(images) if b.has_encodings else images[0]
    LOGGER.info("%s reconstruction finished in %.2f s", method, seconds)
    return ReconResult(images=result, seconds=seconds, traces=traces)
