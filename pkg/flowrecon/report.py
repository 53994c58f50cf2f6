"""Aggregate metrics CSVs into plot-data files."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from .const import LOGGER, METRICS_FORMAT
from .metrics import MetricsRow, bland_altman, linreg_corr, read_metrics_csv
from .models import ContainerError, DimensionError
from .units import FLOW_UNITS, VELOCITY_UNITS, get_unit

REFERENCE_METHOD = "reference"
CURVE_COLUMNS = ("method", "R", "R_requested", "count", "nRMSE", "RelErr", "AngErr", "SSIM")
FLOW_QUANTITIES = ("peak_flow", "peak_velocity")


def error_curves(rows: list[MetricsRow]) -> list[dict[str, Any]]:
    """Average the error metrics per method and measured acceleration, sorted by R.

    ``R_requested`` lists the targets that produced each measured R; saturated
    grids map several targets onto one pattern.
    """
    groups: dict[tuple[str, float], list[MetricsRow]] = defaultdict(list)
    for row in rows:
        if row.method != REFERENCE_METHOD:
            groups[(row.method, row.R)].append(row)
    curves = []
    for (method, acceleration), group in sorted(groups.items()):
        requested = sorted({row.R_requested for row in group if row.R_requested is not None})
        curves.append(
            {
                "method": method,
                "R": acceleration,
                "R_requested": ";".join(f"{r:g}" for r in requested),
                "count": len(group),
                **{
                    key: float(np.mean([getattr(row, key) for row in group]))
                    for key in ("nRMSE", "RelErr", "AngErr", "SSIM")
                },
            }
        )
    return curves


def generalization_trend(rows: list[MetricsRow]) -> dict[str, float]:
    """Spearman rank correlation of nRMSE against R for every method."""
    by_method: dict[str, list[MetricsRow]] = defaultdict(list)
    for row in rows:
        if row.method != REFERENCE_METHOD:
            by_method[row.method].append(row)
    trend = {}
    for method, group in sorted(by_method.items()):
        if len({row.R for row in group}) < 2:
            LOGGER.debug("Skipping trend of %s: fewer than two accelerations", method)
            continue
        rho = stats.spearmanr([row.R for row in group], [row.nRMSE for row in group]).statistic
        trend[method] = float(rho)
    return trend


def paired_values(
    rows: list[MetricsRow],
    method: str,
    quantity: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Pair a method's values of ``quantity`` with the reference rows of the same R.

    Repeated runs at one R are paired in the order they were written.
    """
    reference: dict[float, list[float]] = defaultdict(list)
    measured: dict[float, list[float]] = defaultdict(list)
    for row in rows:
        if row.method == REFERENCE_METHOD:
            reference[row.R].append(getattr(row, quantity))
        elif row.method == method:
            measured[row.R].append(getattr(row, quantity))
    x, y = [], []
    for acceleration, values in sorted(measured.items()):
        pairs = list(zip(reference.get(acceleration, []), values))
        if len(pairs) < len(values):
            LOGGER.warning(
                "%d %s rows at R=%g have no reference row",
                len(values) - len(pairs),
                method,
                acceleration,
            )
        x.extend(p[0] for p in pairs)
        y.extend(p[1] for p in pairs)
    return np.asarray(x), np.asarray(y)


def agreement(rows: list[MetricsRow]) -> tuple[dict[str, Any], dict[str, Any]]:
    """Return Bland-Altman point lists and scatter plots with fitted lines."""
    methods = sorted({row.method for row in rows} - {REFERENCE_METHOD})
    ba: dict[str, Any] = {}
    scatter: dict[str, Any] = {}
    for method in methods:
        for quantity in FLOW_QUANTITIES:
            x, y = paired_values(rows, method, quantity)
            if x.size == 0:
                continue
            result = bland_altman(x, y)
            ba.setdefault(method, {})[quantity] = {
                "mean_diff": result.mean_diff,
                "sd_diff": result.sd_diff,
                "lower": result.lower,
                "upper": result.upper,
                "points": np.column_stack([result.means, result.diffs]).tolist(),
            }
            entry: dict[str, Any] = {"x": x.tolist(), "y": y.tolist()}
            try:
                entry["fit"] = asdict(linreg_corr(x, y))
            except DimensionError:
                entry["fit"] = None
            scatter.setdefault(method, {})[quantity] = entry
    return ba, scatter


def _write_json(path: Path, payload: dict[str, Any]) -> None:
    path.write_text(json.dumps({"format": METRICS_FORMAT} | payload, indent=2, sort_keys=True))


def write_report(
    csv_paths: list[Path | str],
    out_dir: Path | str,
    flow_unit: str = "ml/s",
    velocity_unit: str = "cm/s",
) -> dict[str, Path]:
    """Read metrics CSVs and write the curve, agreement and trend files.

    Returns the written files by kind.
    """
    flow = get_unit(FLOW_UNITS, flow_unit)
    velocity = get_unit(VELOCITY_UNITS, velocity_unit)
    rows: list[MetricsRow] = []
    for path in csv_paths:
        if not Path(path).is_file():
            raise ContainerError(f"Metrics file {path} does not exist")
        rows.extend(read_metrics_csv(path))
    if not rows:
        raise ContainerError("No metrics rows to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    files = {
        "curves": out_dir / "error_curves.csv",
        "bland_altman": out_dir / "bland_altman.json",
        "scatter": out_dir / "scatter.json",
        "trend": out_dir / "trend.json",
    }
    with files["curves"].open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CURVE_COLUMNS)
        writer.writeheader()
        writer.writerows(error_curves(rows))

    ba, scatter = agreement(rows)
    _write_json(files["bland_altman"], {"bland_altman": ba})
    _write_json(files["scatter"], {"scatter": scatter})
    _write_json(files["trend"], {"spearman_nrmse_vs_R": generalization_trend(rows)})

    for method, quantities in ba.items():
        if "peak_flow" in quantities:
            entry = quantities["peak_flow"]
            LOGGER.info(
                "%s peak flow bias %s, limits [%s, %s]",
                method,
                flow.format(entry["mean_diff"]),
                flow.format(entry["lower"]),
                flow.format(entry["upper"]),
            )
        if "peak_velocity" in quantities:
            LOGGER.info(
                "%s peak velocity bias %s",
                method,
                velocity.format(quantities["peak_velocity"]["mean_diff"]),
            )
    LOGGER.info("Report of %d rows written to %s", len(rows), out_dir)
    return files
