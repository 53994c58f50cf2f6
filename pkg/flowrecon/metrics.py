"""Image and velocity error metrics, SSIM, flow quantification and agreement statistics."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, stats

from .const import (
    ANGERR_MIN_SPEED_CM_S,
    LOGGER,
    METRICS_COLUMNS,
    OPTIONAL_METRICS_COLUMNS,
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_TRUNCATE,
    VELOCITY_AXES,
)
from .encoding import velocity_decode
from .models import DimensionError, VelocityEncoding


def _lumen_mask(lumen: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    lumen = np.broadcast_to(np.asarray(lumen, dtype=bool), shape)
    if not lumen.any():
        raise DimensionError("Lumen mask is empty")
    return lumen


def nrmse(a: np.ndarray, a_ref: np.ndarray) -> float:
    """Root-mean-square error normalized by the reference maximum."""
    a = np.asarray(a, dtype=np.float64)
    a_ref = np.asarray(a_ref, dtype=np.float64)
    if a.shape != a_ref.shape:
        raise DimensionError(f"Cannot compare {a.shape} with {a_ref.shape}")
    peak = float(np.max(np.abs(a_ref)))
    if peak == 0.0:
        return 0.0 if not np.any(a) else float("inf")
    return float(np.sqrt(np.mean((a - a_ref) ** 2)) / peak)


def rel_err(a: np.ndarray, a_ref: np.ndarray) -> float:
    """Return ``||a - a_ref|| / ||a_ref||`` as a fraction."""
    a = np.asarray(a, dtype=np.float64)
    a_ref = np.asarray(a_ref, dtype=np.float64)
    denominator = float(np.linalg.norm(a_ref))
    if denominator == 0.0:
        return 0.0 if not np.any(a) else float("inf")
    return float(np.linalg.norm(a - a_ref) / denominator)


def ang_err(u: np.ndarray, v: np.ndarray, min_speed: float = ANGERR_MIN_SPEED_CM_S) -> float:
    """Mean angle in degrees between vector fields with components on axis 0.

    Voxels where either vector is not faster than ``min_speed`` are skipped.
    """
    u = np.asarray(u, dtype=np.float64).reshape(u.shape[0], -1)
    v = np.asarray(v, dtype=np.float64).reshape(v.shape[0], -1)
    nu = np.linalg.norm(u, axis=0)
    nv = np.linalg.norm(v, axis=0)
    keep = (nu > min_speed) & (nv > min_speed)
    if not keep.any():
        return 0.0
    cosine = np.sum(u[:, keep] * v[:, keep], axis=0) / (nu[keep] * nv[keep])
    return float(np.degrees(np.mean(np.arccos(np.clip(cosine, -1.0, 1.0)))))


@dataclass
class ErrorMetrics:
    """Errors of one reconstruction against its reference."""

    nrmse: float
    rel_err: float
    ang_err: float
    ssim: float | None = None


def velocity_error_metrics(
    magnitude: np.ndarray,
    velocity: np.ndarray,
    ref_magnitude: np.ndarray,
    ref_velocity: np.ndarray,
    lumen: np.ndarray,
) -> ErrorMetrics:
    """Compute nRMSE of the magnitude and in-lumen RelErr and AngErr of the velocities."""
    if velocity.shape != ref_velocity.shape or velocity.shape[0] != len(VELOCITY_AXES):
        raise DimensionError(f"Velocity fields {velocity.shape} and {ref_velocity.shape} differ")
    inside = _lumen_mask(lumen, velocity.shape[1:])
    speed = np.linalg.norm(velocity, axis=0)[inside]
    ref_speed = np.linalg.norm(ref_velocity, axis=0)[inside]
    return ErrorMetrics(
        nrmse=nrmse(magnitude, ref_magnitude),
        rel_err=rel_err(speed, ref_speed),
        ang_err=ang_err(velocity[:, inside], ref_velocity[:, inside]),
    )


def error_metrics(
    recon: np.ndarray,
    ref: np.ndarray,
    lumen: np.ndarray,
    enc: VelocityEncoding,
) -> ErrorMetrics:
    """Compare two four-encoding image stacks.

    The magnitude is the mean over encodings; velocities are decoded from both
    stacks and compared inside the lumen.
    """
    recon = np.asarray(recon)
    ref = np.asarray(ref)
    if recon.shape != ref.shape:
        raise DimensionError(f"Reconstruction {recon.shape} does not match reference {ref.shape}")
    magnitude = np.mean(np.abs(recon), axis=0)
    ref_magnitude = np.mean(np.abs(ref), axis=0)
    velocity, _ = velocity_decode(recon, enc)
    ref_velocity, _ = velocity_decode(ref, enc)
    result = velocity_error_metrics(magnitude, velocity, ref_magnitude, ref_velocity, lumen)
    result.ssim = ssim_series(magnitude, ref_magnitude)
    return result


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    sigma: float = SSIM_SIGMA,
    data_range: float | None = None,
) -> float:
    """Mean structural similarity of ``a`` against the reference ``b``.

    Local statistics use a Gaussian window truncated at 3.5 sigma with
    reflective borders. A border of one window radius is left out when every
    axis is wider than the window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"Cannot compare {a.shape} with {b.shape}")
    if data_range is None:
        data_range = float(b.max() - b.min())
    if data_range <= 0:
        data_range = 1.0

    def blur(x: np.ndarray) -> np.ndarray:
        return ndimage.gaussian_filter(x, sigma=sigma, truncate=SSIM_TRUNCATE, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    local = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    )
    window = 2 * int(SSIM_TRUNCATE * sigma + 0.5) + 1
    radius = (window - 1) // 2
    if all(n > window for n in local.shape):
        local = local[tuple(slice(radius, n - radius) for n in local.shape)]
    return float(local.mean())


def ssim_series(a: np.ndarray, b: np.ndarray, sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over cardiac phases of ``[t][z][y][x]`` magnitude series."""
    data_range = float(np.max(b) - np.min(b))
    return float(np.mean([ssim(a[t], b[t], sigma, data_range) for t in range(b.shape[0])]))


@dataclass
class FlowPlane:
    """Cross-section on which flow is integrated.

    Lumen pixel ``(i, j)`` sits at ``origin + i * row_dir + j * col_dir`` in
    ``(x, y, z)`` voxel coordinates.
    """

    origin: np.ndarray
    normal: np.ndarray
    lumen: np.ndarray
    voxel_area: float
    row_dir: np.ndarray = field(default=None)
    col_dir: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        """Check the plane geometry, deriving in-plane axes if missing."""
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.normal = np.asarray(self.normal, dtype=np.float64)
        self.lumen = np.asarray(self.lumen, dtype=bool)
        if self.origin.shape != (3,) or self.normal.shape != (3,) or self.lumen.ndim != 2:
            raise DimensionError("FlowPlane needs a 3-vector origin, a 3-vector normal and a 2D lumen")
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise DimensionError(f"Plane normal {self.normal} is not a unit vector")
        if self.row_dir is None or self.col_dir is None:
            self.row_dir, self.col_dir = _in_plane_axes(self.normal)
        self.row_dir = np.asarray(self.row_dir, dtype=np.float64)
        self.col_dir = np.asarray(self.col_dir, dtype=np.float64)
        for axis in (self.row_dir, self.col_dir):
            if abs(axis @ self.normal) > 1e-9 or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
                raise DimensionError("In-plane axes must be unit vectors orthogonal to the normal")

    @classmethod
    def axial(cls, axis: str, index: int, lumen: np.ndarray, voxel_area: float) -> FlowPlane:
        """Plane perpendicular to one grid axis; ``lumen`` is indexed like the array slice."""
        eye = np.eye(3)
        normal = eye[VELOCITY_AXES.index(axis)]
        in_plane = [eye[VELOCITY_AXES.index(a)] for a in ("z", "y", "x") if a != axis]
        origin = normal * index
        return cls(origin, normal, lumen, voxel_area, row_dir=in_plane[0], col_dir=in_plane[1])

    @classmethod
    def oblique(
        cls,
        center: np.ndarray,
        normal: np.ndarray,
        lumen: np.ndarray,
        voxel_area: float,
    ) -> FlowPlane:
        """Plane of any orientation whose lumen grid is centered on ``center``."""
        normal = np.asarray(normal, dtype=np.float64)
        normal = normal / np.linalg.norm(normal)
        row_dir, col_dir = _in_plane_axes(normal)
        lumen = np.asarray(lumen, dtype=bool)
        ci, cj = (lumen.shape[0] - 1) / 2, (lumen.shape[1] - 1) / 2
        origin = np.asarray(center, dtype=np.float64) - ci * row_dir - cj * col_dir
        return cls(origin, normal, lumen, voxel_area, row_dir=row_dir, col_dir=col_dir)

    def points(self) -> np.ndarray:
        """Return the ``(x, y, z)`` coordinates of the lumen pixels, shape ``(3, n)``."""
        i, j = np.nonzero(self.lumen)
        return self.origin[:, None] + i[None] * self.row_dir[:, None] + j[None] * self.col_dir[:, None]


def _in_plane_axes(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    col_dir = helper - (helper @ normal) * normal
    col_dir /= np.linalg.norm(col_dir)
    row_dir = np.cross(normal, col_dir)
    return row_dir, col_dir


@dataclass
class FlowQuantification:
    """Flow through a plane over the cardiac cycle."""

    flow: np.ndarray
    peak_flow: float
    peak_velocity: float


def flow_quant(velocity: np.ndarray, plane: FlowPlane) -> FlowQuantification:
    """Integrate the through-plane velocity over the lumen for every cardiac phase.

    Velocities are sampled at the lumen points by linear interpolation, so planes
    aligned with the grid read voxel values exactly.
    """
    velocity = np.asarray(velocity, dtype=np.float64)
    if velocity.ndim != 5 or velocity.shape[0] != 3:
        raise DimensionError(f"Velocity must be [3][t][z][y][x], got {velocity.shape}")
    if not plane.lumen.any():
        raise DimensionError("Flow plane lumen is empty")
    nt, nz, ny, nx = velocity.shape[1:]
    x, y, z = plane.points()
    inside = (
        (x >= 0) & (x <= nx - 1) & (y >= 0) & (y <= ny - 1) & (z >= 0) & (z <= nz - 1)
    )
    if not inside.any():
        raise DimensionError("Flow plane does not intersect the grid")
    if not inside.all():
        LOGGER.debug("Flow plane: %d lumen points fall outside the grid", np.count_nonzero(~inside))
    coords = np.stack([z[inside], y[inside], x[inside]])
    through = np.zeros((nt, coords.shape[1]))
    for c in range(3):
        if plane.normal[c] == 0.0:
            continue
        for t in range(nt):
            sampled = ndimage.map_coordinates(velocity[c, t], coords, order=1, mode="nearest")
            through[t] += plane.normal[c] * sampled
    flow = through.sum(axis=1) * plane.voxel_area
    return FlowQuantification(
        flow=flow,
        peak_flow=float(flow.max()),
        peak_velocity=float(through.max()),
    )


@dataclass
class BlandAltmanResult:
    """Agreement of paired measurements."""

    mean_diff: float
    sd_diff: float
    lower: float
    upper: float
    means: np.ndarray
    diffs: np.ndarray


def bland_altman(x: np.ndarray, y: np.ndarray) -> BlandAltmanResult:
    """Bland-Altman analysis of ``y - x`` with 1.96 sd limits of agreement."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size == 0:
        raise DimensionError(f"Need equally many paired values, got {x.size} and {y.size}")
    diffs = y - x
    mean_diff = float(diffs.mean())
    sd = float(diffs.std(ddof=1)) if diffs.size > 1 else 0.0
    return BlandAltmanResult(
        mean_diff=mean_diff,
        sd_diff=sd,
        lower=mean_diff - 1.96 * sd,
        upper=mean_diff + 1.96 * sd,
        means=(x + y) / 2,
        diffs=diffs,
    )


@dataclass
class LinearFit:
    """Least-squares line ``y = a x + b`` and Pearson correlation ``r``."""

    a: float
    b: float
    r: float


def linreg_corr(x: np.ndarray, y: np.ndarray) -> LinearFit:
    """Fit ``y = a x + b`` by least squares."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise DimensionError(f"Need at least two paired values, got {x.size} and {y.size}")
    if np.ptp(x) == 0:
        raise DimensionError("Cannot fit a line to identical x values")
    fit = stats.linregress(x, y)
    return LinearFit(a=float(fit.slope), b=float(fit.intercept), r=float(fit.rvalue))


@dataclass
class MetricsRow:
    """One line of a metrics CSV."""

    method: str
    R: float
    nRMSE: float
    RelErr: float
    AngErr: float
    SSIM: float
    peak_flow: float
    peak_velocity: float
    seconds: float
    R_requested: float | None = None

    @classmethod
    def from_csv_row(cls, row: dict[str, str]) -> MetricsRow:
        """Create a row from a CSV record."""
        required = [key for key in METRICS_COLUMNS if key not in ("method", *OPTIONAL_METRICS_COLUMNS)]
        requested = row.get("R_requested")
        return cls(
            method=row["method"],
            **{key: float(row[key]) for key in required},
            R_requested=float(requested) if requested else None,
        )


def write_metrics_csv(path: Path | str, rows: list[MetricsRow], append: bool = False) -> None:
    """Write metrics rows with the fixed column schema."""
    path = Path(path)
    new_file = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRICS_COLUMNS)
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))


def read_metrics_csv(path: Path | str) -> list[MetricsRow]:
    """Read a metrics CSV written by ``write_metrics_csv``."""
    with Path(path).open(newline="") as handle:
        reader = csv.DictReader(handle)
        missing = set(METRICS_COLUMNS) - set(OPTIONAL_METRICS_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DimensionError(f"{path} lacks metrics columns {sorted(missing)}")
        return [MetricsRow.from_csv_row(row) for row in reader]
