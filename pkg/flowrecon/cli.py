"""Command-line driver: phantom, sample, recon, train, eval, report and benchmark."""

from __future__ import annotations

import argparse
import json
import logging
from collections.abc import Sequence
from dataclasses import asdict
from pathlib import Path

import colorlog
import numpy as np

from .benchmark import EXPECTED_ORDER, benchmark, write_timings
from .const import (
    ACCELERATION_TOLERANCE,
    CONTAINER_FORMAT,
    GOLDEN_ANGLE_DEG,
    LLR_LAMBDA,
    LOGGER,
    METHODS,
    METRICS_FORMAT,
    NAME,
    PHANTOM_PROFILES,
    TRAIN_PROFILES,
    VERSION,
    WEIGHTS_FORMAT,
)
from .cs_llr import LLRConfig
from .dataset import Dataset, read_container, write_container
from .encoding import velocity_decode, velocity_encode
from .flowvn import ladder_configs
from .metrics import MetricsRow, error_metrics, flow_quant, write_metrics_csv
from .models import ContainerError, FlowReconError
from .phantom import PhantomConfig, build_phantom, flow_plane, phantom_family, simulate_acquisition
from .recon import RunConfig, network_params, reconstruct
from .report import REFERENCE_METHOD, write_report
from .sampling import (
    config_for_acceleration,
    generate_encoding_masks,
    generate_pattern,
    measured_acceleration,
    retrospective_undersample,
)
from .training import TrainConfig, TrainingVolume, train
from .units import FLOW_UNITS, VELOCITY_UNITS, get_unit

LOG_FORMAT = "%(log_color)s%(levelname)-8s%(reset)s %(name)s: %(message)s"


def setup_logging(verbose: bool = False) -> None:
    """Send package log records to a colored stderr handler."""
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT))
    LOGGER.handlers[:] = [handler]
    LOGGER.setLevel(logging.DEBUG if verbose else logging.INFO)


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _suffixed(path: Path, label: str) -> Path:
    return path.with_name(f"{path.name}_{label}")


def cmd_phantom(args: argparse.Namespace) -> int:
    """Simulate a fully sampled phantom acquisition."""
    overrides = {"seed": args.seed, "n_coils": args.coils, "noise_snr": args.snr, "venc": args.venc}
    cfg = PhantomConfig.from_profile(
        args.profile, **{key: value for key, value in overrides.items() if value is not None}
    )
    phantom = build_phantom(cfg)
    full_mask = np.ones((cfg.nt, cfg.nz, cfg.ny), dtype=bool)
    _, full = simulate_acquisition(
        phantom.truth, phantom.coils, phantom.encoding, full_mask, cfg.noise_snr, cfg.seed
    )
    run = RunConfig(seed=cfg.seed, acceleration=1.0, phantom=asdict(cfg))
    dataset = Dataset(
        arrays={
            "kspace": full.samples,
            "mask": full.mask,
            "coils": phantom.coils.maps,
            "truth_magnitude": phantom.truth.magnitude,
            "truth_velocity": phantom.truth.velocity,
            "segmentation": phantom.truth.segmentation,
        },
        attributes={
            "venc": cfg.venc,
            "acceleration": 1.0,
            "phantom": asdict(cfg),
            "run": run.to_dict(),
        },
    )
    write_container(args.out, dataset)
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    """Undersample a fully sampled container retrospectively."""
    dataset = read_container(args.container)
    full = dataset.kspace_data()
    if not full.mask.all():
        LOGGER.warning("%s is already undersampled; masking it further", args.container)
    nt, nz, ny = full.mask.shape[-3:]
    run = RunConfig(
        seed=args.seed,
        acceleration=max(args.R, 1.0),
        independent_masks=args.independent_masks,
        sampling={"angle_increment_deg": args.angle},
        phantom=dataset.attributes.get("phantom", {}),
    )
    if args.R <= 1.0:
        mask = np.ones((nt, nz, ny), dtype=bool)
    else:
        cfg = config_for_acceleration(args.R, ny, nz, nt, args.angle, args.seed)
        if full.has_encodings:
            mask = generate_encoding_masks(cfg, full.samples.shape[0], args.independent_masks)
        else:
            mask = generate_pattern(cfg).mask
    undersampled = retrospective_undersample(full, mask)
    acceleration = measured_acceleration(mask)[0]
    LOGGER.info("Sampled R=%.2f (requested %.2f)", acceleration, args.R)
    arrays = {role: a for role, a in dataset.arrays.items() if role != "recon"}
    arrays |= {"kspace": undersampled.samples, "mask": undersampled.mask}
    attributes = dataset.attributes | {
        "acceleration": acceleration,
        "acceleration_requested": run.acceleration,
        "run": run.to_dict(),
    }
    write_container(args.out, Dataset(arrays=arrays, attributes=attributes))
    return 0


def cmd_recon(args: argparse.Namespace) -> int:
    """Reconstruct an undersampled container."""
    dataset = read_container(args.container)
    b = dataset.kspace_data()
    coils = dataset.coil_set()
    lambdas = args.lam or [LLR_LAMBDA]
    if args.method != "csllr" and (args.lam or args.iters):
        LOGGER.warning("--lambda and --iters only apply to csllr; ignoring them for %s", args.method)
        lambdas = [LLR_LAMBDA]
    out = Path(args.out)
    for lam in lambdas:
        llr = {"lam": lam, "random_shift": not args.fixed_partition}
        if args.iters:
            llr["max_iters"] = args.iters
        run = RunConfig(
            method=args.method,
            seed=args.seed,
            acceleration=dataset.attributes.get("acceleration"),
            phantom=dataset.attributes.get("phantom", {}),
            llr=llr if args.method == "csllr" else {},
            weights=args.weights,
        )
        params = network_params(run) if args.method in ("flowvn", "hamvn") else None
        result = reconstruct(args.method, b, coils, run.llr_config(), params)
        attributes = dataset.attributes | {
            "method": args.method,
            "seconds": result.seconds,
            "run": run.to_dict(),
        }
        if args.method == "csllr":
            attributes["objective"] = [[float(v) for v in trace] for trace in result.traces]
        target = out if len(lambdas) == 1 else _suffixed(out, f"lam{lam:g}")
        arrays = dataset.arrays | {"recon": result.images}
        write_container(target, Dataset(arrays=arrays, attributes=attributes))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Train a network variant on simulated phantoms."""
    steps = {step.name: step for step in ladder_configs()}
    step = steps[args.variant]
    overrides = {"iters": args.iters, "workers": args.workers, "seed": args.seed}
    cfg = TrainConfig.from_profile(
        args.profile,
        exp_weighting=step.exp_weighting,
        **{key: value for key, value in overrides.items() if value is not None},
    )
    phantom_cfg = PhantomConfig.from_profile(args.phantom_profile)
    phantoms = phantom_family(phantom_cfg, args.volumes + 1, args.seed)
    volumes = [
        TrainingVolume(images=p.images, coils=p.coils, segmentation=p.truth.segmentation)
        for p in phantoms
    ]
    out = Path(args.out)
    run = RunConfig(
        method="hamvn" if step.name == "hamvn" else "flowvn",
        seed=args.seed,
        phantom=asdict(phantom_cfg),
        network=step.network.to_dict(),
        train=asdict(cfg),
        weights=str(out / "weights.flowvn"),
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(json.dumps(run.to_dict() | {"variant": step.name}, indent=2))
    # the last phantom is held out for validation
    result = train(volumes[:-1], cfg, step.network, out_dir=out, validation=volumes[-1:])
    first, last = result.checkpoints[0], result.checkpoints[-1]
    LOGGER.info(
        "Trained %s: validation loss %.4g -> %.4g, image l1 %.4f -> %.4f",
        step.name,
        first.loss,
        last.loss,
        first.image_l1,
        last.image_l1,
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Compare a reconstruction with the ground truth and append a metrics row."""
    dataset = read_container(args.container)
    dataset.require("recon")
    truth = dataset.truth()
    enc = dataset.encoding()
    if "phantom" not in dataset.attributes:
        raise ContainerError(f"{args.container} does not record its phantom configuration")
    recon = dataset.arrays["recon"].astype(np.complex128)
    reference = velocity_encode(truth.magnitude, truth.velocity, enc)
    errors = error_metrics(recon, reference, truth.segmentation, enc)

    plane = flow_plane(PhantomConfig(**dataset.attributes["phantom"]), truth)
    velocity, _ = velocity_decode(recon, enc)
    measured = flow_quant(velocity, plane)
    expected = flow_quant(truth.velocity, plane)
    method = args.label or dataset.attributes.get("method", "unknown")
    acceleration = float(dataset.attributes.get("acceleration", 1.0))
    requested = dataset.attributes.get("acceleration_requested")
    if requested is not None and abs(acceleration - requested) > ACCELERATION_TOLERANCE * requested:
        LOGGER.warning("%s was sampled at R=%.2f, requested R=%.2f", args.container, acceleration, requested)
    rows = [
        MetricsRow(
            method=method,
            R=acceleration,
            nRMSE=errors.nrmse,
            RelErr=errors.rel_err,
            AngErr=errors.ang_err,
            SSIM=errors.ssim,
            peak_flow=measured.peak_flow,
            peak_velocity=measured.peak_velocity,
            seconds=float(dataset.attributes.get("seconds", 0.0)),
            R_requested=requested,
        )
    ]
    if not args.no_reference:
        rows.append(
            MetricsRow(
                method=REFERENCE_METHOD,
                R=acceleration,
                nRMSE=0.0,
                RelErr=0.0,
                AngErr=0.0,
                SSIM=1.0,
                peak_flow=expected.peak_flow,
                peak_velocity=expected.peak_velocity,
                seconds=0.0,
                R_requested=requested,
            )
        )
    write_metrics_csv(args.out, rows, append=args.append)
    flow = get_unit(FLOW_UNITS, "ml/s")
    speed = get_unit(VELOCITY_UNITS, "cm/s")
    LOGGER.info(
        "%s at R=%.2f: nRMSE %.4f, RelErr %.4f, AngErr %.2f deg, SSIM %.4f, "
        "peak flow %s (true %s), peak velocity %s",
        method,
        acceleration,
        errors.nrmse,
        errors.rel_err,
        errors.ang_err,
        errors.ssim,
        flow.format(measured.peak_flow),
        flow.format(expected.peak_flow),
        speed.format(measured.peak_velocity),
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Aggregate metrics CSVs into plot-data files."""
    files = write_report(args.csv, args.out, args.flow_unit, args.velocity_unit)
    for kind, path in files.items():
        print(f"{kind}: {path}")
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    """Time the reconstruction methods on one phantom volume."""
    cfg = PhantomConfig.from_profile(args.profile, seed=args.seed)
    llr = LLRConfig(max_iters=args.iters) if args.iters else LLRConfig()
    timings = benchmark(cfg, tuple(args.methods), args.R, args.repeats, llr, args.seed, args.strict)
    for timing in timings:
        print(
            f"{timing.method:<10} {timing.seconds:10.2f} s  (runs {timing.runs}, spread {timing.spread:.0%})"
        )
    if args.out:
        write_timings(args.out, timings)
    return 0


def build_parser() -> argparse.ArgumentParser:
    """Return the argument parser with every subcommand."""
    parser = argparse.ArgumentParser(prog=NAME, description="4D flow MRI reconstruction toolkit")
    parser.add_argument(
        "--version",
        action="version",
        version=f"{NAME} {VERSION} ({CONTAINER_FORMAT}, {WEIGHTS_FORMAT}, {METRICS_FORMAT})",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log debug messages")
    commands = parser.add_subparsers(dest="command", required=True)

    phantom = commands.add_parser("phantom", help="simulate a fully sampled phantom")
    phantom.add_argument("--out", required=True)
    phantom.add_argument("--profile", choices=list(PHANTOM_PROFILES), default="desk")
    phantom.add_argument("--seed", type=int)
    phantom.add_argument("--coils", type=int)
    phantom.add_argument("--snr", type=float, help="noise level in dB (default noise free)")
    phantom.add_argument("--venc", type=float)
    phantom.set_defaults(func=cmd_phantom)

    sample = commands.add_parser("sample", help="undersample a container retrospectively")
    sample.add_argument("container")
    sample.add_argument("--out", required=True)
    sample.add_argument("--R", type=float, required=True, help="target acceleration")
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument(
        "--angle", type=float, default=GOLDEN_ANGLE_DEG, help="spoke angle increment in degrees"
    )
    sample.add_argument("--independent-masks", action="store_true", help="one mask per velocity encoding")
    sample.set_defaults(func=cmd_sample)

    recon = commands.add_parser("recon", help="reconstruct an undersampled container")
    recon.add_argument("container")
    recon.add_argument("--out", required=True)
    recon.add_argument("--method", choices=METHODS, default="zerofill")
    recon.add_argument("--weights", help="trained network weights")
    recon.add_argument(
        "--lambda", dest="lam", type=_float_list, help="LLR weight, or a comma-separated sweep"
    )
    recon.add_argument("--iters", type=int, help="FISTA iterations")
    recon.add_argument("--fixed-partition", action="store_true", help="disable random patch shifts")
    recon.add_argument("--seed", type=int, default=0)
    recon.set_defaults(func=cmd_recon)

    train_parser = commands.add_parser("train", help="train a network on simulated phantoms")
    train_parser.add_argument("--out", required=True)
    train_parser.add_argument("--profile", choices=list(TRAIN_PROFILES), default="desk")
    train_parser.add_argument("--iters", type=int)
    train_parser.add_argument(
        "--variant", choices=[step.name for step in ladder_configs()], default="flowvn"
    )
    train_parser.add_argument("--phantom-profile", choices=list(PHANTOM_PROFILES), default="desk")
    train_parser.add_argument("--volumes", type=int, default=2, help="training phantoms")
    train_parser.add_argument("--workers", type=int)
    train_parser.add_argument("--seed", type=int, default=0)
    train_parser.set_defaults(func=cmd_train)

    evaluate = commands.add_parser("eval", help="write metrics of a reconstruction")
    evaluate.add_argument("container")
    evaluate.add_argument("--out", required=True, help="metrics CSV")
    evaluate.add_argument("--append", action="store_true")
    evaluate.add_argument("--label", help="method name in the CSV")
    evaluate.add_argument("--no-reference", action="store_true", help="skip the ground-truth flow row")
    evaluate.set_defaults(func=cmd_eval)

    report = commands.add_parser("report", help="aggregate metrics CSVs into plot data")
    report.add_argument("csv", nargs="+")
    report.add_argument("--out", required=True)
    report.add_argument("--flow-unit", choices=[u.unit_of_measurement for u in FLOW_UNITS], default="ml/s")
    report.add_argument(
        "--velocity-unit", choices=[u.unit_of_measurement for u in VELOCITY_UNITS], default="cm/s"
    )
    report.set_defaults(func=cmd_report)

    bench = commands.add_parser("benchmark", help="time the reconstruction methods")
    bench.add_argument("--profile", choices=list(PHANTOM_PROFILES), default="paper-geometry")
    bench.add_argument("--methods", nargs="+", choices=METHODS, default=list(EXPECTED_ORDER))
    bench.add_argument("--R", type=float, default=10.0)
    bench.add_argument("--repeats", type=int, default=1)
    bench.add_argument("--iters", type=int, help="FISTA iterations")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", help="timing CSV")
    bench.add_argument(
        "--strict", action="store_true", help="fail unless the methods run in the expected order"
    )
    bench.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command line; usage errors exit with status 2."""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except FlowReconError as e:
        LOGGER.error("%s", e)
    except OSError as e:
        LOGGER.error("%s: %s", type(e).__name__, e)
    return 1
