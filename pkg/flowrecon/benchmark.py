"""Wall-clock comparison of the reconstruction methods."""

from __future__ import annotations

import csv
import platform
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .const import LOGGER, N_ENCODINGS
from .cs_llr import LLRConfig
from .flowvn import NetworkParams, flowvn_config, hamvn_config, init_params
from .models import ConfigError, OrderingError
from .phantom import PhantomConfig, build_phantom, simulate_acquisition
from .recon import reconstruct
from .sampling import pattern_for_acceleration

# expected from fastest to slowest
EXPECTED_ORDER = ("zerofill", "flowvn", "hamvn", "csllr")
BENCHMARK_COLUMNS = ("method", "seconds", "runs", "spread")


@dataclass
class Timing:
    """Median wall time of repeated runs of one method."""

    method: str
    seconds: float
    runs: int
    spread: float


def _network(method: str, seed: int | None) -> NetworkParams | None:
    if method == "flowvn":
        return init_params(flowvn_config(), "random", seed)
    if method == "hamvn":
        return init_params(hamvn_config(), "random", seed)
    return None


def benchmark(
    phantom: PhantomConfig,
    methods: tuple[str, ...] = EXPECTED_ORDER,
    acceleration: float = 10.0,
    repeats: int = 1,
    llr: LLRConfig | None = None,
    seed: int | None = 0,
    strict: bool = False,
) -> list[Timing]:
    """Time every method on one simulated four-encoding acquisition.

    Network timings use randomly initialized weights; the cost of inference
    does not depend on their values. ``spread`` is ``(max - min) / median``.
    With ``strict`` an out-of-order result raises OrderingError.
    """
    if repeats < 1:
        raise ConfigError("Benchmark needs at least one run per method")
    volume = build_phantom(phantom)
    cfg = volume.config
    mask = pattern_for_acceleration(acceleration, cfg.ny, cfg.nz, cfg.nt, seed=seed)
    b, _ = simulate_acquisition(volume.truth, volume.coils, volume.encoding, mask, cfg.noise_snr, seed)
    LOGGER.info(
        "Benchmarking %s on %dx%dx%d, nt=%d, %d coils, %d encodings on %s",
        ", ".join(methods),
        cfg.nx,
        cfg.ny,
        cfg.nz,
        cfg.nt,
        cfg.n_coils,
        N_ENCODINGS,
        platform.processor() or platform.machine(),
    )

    timings = []
    for method in methods:
        params = _network(method, seed)
        seconds = [reconstruct(method, b, volume.coils, llr, params).seconds for _ in range(repeats)]
        median = float(np.median(seconds))
        timings.append(
            Timing(
                method=method,
                seconds=median,
                runs=repeats,
                spread=float((max(seconds) - min(seconds)) / median) if median > 0 else 0.0,
            )
        )
        LOGGER.info("%s: %.2f s", method, median)
    check_ordering(timings, strict)
    return timings


def check_ordering(timings: list[Timing], strict: bool = False) -> bool:
    """Check that the timed methods run in the order zerofill < flowvn < hamvn < csllr."""
    seconds = {t.method: t.seconds for t in timings}
    present = [method for method in EXPECTED_ORDER if method in seconds]
    ordered = all(seconds[a] < seconds[b] for a, b in zip(present, present[1:]))
    if not ordered:
        message = "Reconstruction times out of the expected order: " + ", ".join(
            f"{m} {seconds[m]:.2f} s" for m in present
        )
        if strict:
            raise OrderingError(message)
        LOGGER.warning("%s", message)
    return ordered


def write_timings(path: Path | str, timings: list[Timing]) -> None:
    """Write the timing table as CSV."""
    with Path(path).open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=BENCHMARK_COLUMNS)
        writer.writeheader()
        writer.writerows(asdict(t) for t in timings)
