"""Tests for error metrics, SSIM, flow quantification and agreement statistics."""

import math

import numpy as np
import pytest

from flowrecon.encoding import velocity_encode
from flowrecon.metrics import (
    FlowPlane,
    MetricsRow,
    ang_err,
    bland_altman,
    error_metrics,
    flow_quant,
    linreg_corr,
    nrmse,
    read_metrics_csv,
    rel_err,
    ssim,
    ssim_series,
    velocity_error_metrics,
    write_metrics_csv,
)
from flowrecon.models import DimensionError


def test_nrmse_matches_scalar_loop(rng):
    a = rng.standard_normal((3, 4, 5))
    ref = rng.standard_normal((3, 4, 5))
    total, peak = 0.0, 0.0
    for x, y in zip(a.ravel(), ref.ravel()):
        total += (x - y) ** 2
        peak = max(peak, abs(y))
    assert nrmse(a, ref) == pytest.approx(math.sqrt(total / a.size) / peak, abs=1e-10)


def test_rel_err_matches_scalar_loop(rng):
    a = rng.standard_normal(50)
    ref = rng.standard_normal(50)
    num = math.sqrt(sum((x - y) ** 2 for x, y in zip(a, ref)))
    den = math.sqrt(sum(y * y for y in ref))
    assert rel_err(a, ref) == pytest.approx(num / den, abs=1e-10)


def test_zero_reference():
    assert nrmse(np.zeros(3), np.zeros(3)) == 0.0
    assert rel_err(np.ones(3), np.zeros(3)) == float("inf")


def test_nrmse_shape_mismatch():
    with pytest.raises(DimensionError):
        nrmse(np.zeros(3), np.zeros(4))


def test_ang_err_matches_scalar_loop(rng):
    u = rng.standard_normal((3, 40)) * 10
    v = rng.standard_normal((3, 40)) * 10
    angles = []
    for i in range(40):
        nu, nv = np.linalg.norm(u[:, i]), np.linalg.norm(v[:, i])
        if nu > 1.0 and nv > 1.0:
            cosine = max(-1.0, min(1.0, float(u[:, i] @ v[:, i]) / (nu * nv)))
            angles.append(math.degrees(math.acos(cosine)))
    assert ang_err(u, v) == pytest.approx(sum(angles) / len(angles), abs=1e-10)


def test_ang_err_known_angles():
    u = np.array([[10.0, 10.0, 0.5], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    v = np.array([[10.0, 0.0, 0.5], [0.0, 10.0, 0.0], [0.0, 0.0, 0.0]])
    # the slow third voxel is skipped
    assert ang_err(u, v) == pytest.approx(45.0)
    assert ang_err(np.zeros((3, 2)), np.zeros((3, 2))) == 0.0


def test_velocity_error_metrics_inside_lumen(rng):
    velocity = rng.standard_normal((3, 2, 3, 4, 5)) * 20
    ref = velocity.copy()
    lumen = np.zeros((3, 4, 5), dtype=bool)
    lumen[1, 1:3, 1:3] = True
    ref[:, :, ~lumen] += 100
    magnitude = rng.random((2, 3, 4, 5))
    result = velocity_error_metrics(magnitude, velocity, magnitude, ref, lumen)
    assert result.nrmse == 0.0
    assert result.rel_err == 0.0
    assert result.ang_err == pytest.approx(0.0, abs=1e-4)


def test_empty_lumen():
    velocity = np.ones((3, 1, 2, 2, 2))
    with pytest.raises(DimensionError):
        magnitude = np.ones((1, 2, 2, 2))
        velocity_error_metrics(magnitude, velocity, magnitude, velocity, np.zeros((2, 2, 2)))


def test_error_metrics_of_identical_stacks(small_phantom):
    truth = small_phantom.truth
    images = velocity_encode(truth.magnitude, truth.velocity, small_phantom.encoding)
    result = error_metrics(images, images, truth.segmentation, small_phantom.encoding)
    assert result.nrmse == 0.0
    assert result.rel_err == 0.0
    assert result.ang_err == pytest.approx(0.0, abs=1e-4)
    assert result.ssim == pytest.approx(1.0)


def test_ssim_identical_is_one(rng):
    a = rng.random((6, 20, 20))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim_series(a, a) == pytest.approx(1.0)


def test_ssim_drops_with_noise(rng):
    a = rng.random((24, 24))
    noisy = a + 0.3 * rng.standard_normal(a.shape)
    assert ssim(noisy, a) < 0.9


def test_ssim_matches_scikit_image(rng):
    metrics = pytest.importorskip("skimage.metrics")
    a = rng.random((32, 32))
    b = a + 0.1 * rng.standard_normal(a.shape)
    expected = metrics.structural_similarity(
        b,
        a,
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        data_range=float(a.max() - a.min()),
    )
    assert ssim(b, a) == pytest.approx(expected, abs=1e-8)


def _uniform_velocity(component_values, shape=(2, 8, 16, 16)):
    velocity = np.zeros((3,) + shape)
    for c, value in enumerate(component_values):
        velocity[c] = value
    return velocity


def test_flow_through_axial_plane():
    velocity = _uniform_velocity([0.0, 0.0, 50.0])
    velocity[2, 1] = 25.0
    lumen = np.zeros((16, 16), dtype=bool)
    lumen[6:9, 6:9] = True
    result = flow_quant(velocity, FlowPlane.axial("z", 4, lumen, voxel_area=0.04))
    np.testing.assert_allclose(result.flow, [9 * 50 * 0.04, 9 * 25 * 0.04])
    assert result.peak_flow == pytest.approx(18.0)
    assert result.peak_velocity == pytest.approx(50.0)


def test_flow_through_oblique_plane():
    velocity = _uniform_velocity([30.0, 30.0, 0.0])
    lumen = np.ones((3, 3), dtype=bool)
    plane = FlowPlane.oblique(center=[8.0, 8.0, 4.0], normal=[1.0, 1.0, 0.0], lumen=lumen, voxel_area=0.01)
    result = flow_quant(velocity, plane)
    through = 30.0 * math.sqrt(2)
    np.testing.assert_allclose(result.flow, 9 * through * 0.01)
    assert result.peak_velocity == pytest.approx(through)


def test_flow_plane_checks():
    with pytest.raises(DimensionError):
        FlowPlane(np.zeros(3), np.array([1.0, 1.0, 0.0]), np.ones((2, 2)), 1.0)
    plane = FlowPlane.axial("z", 0, np.zeros((4, 4), dtype=bool), 1.0)
    with pytest.raises(DimensionError):
        flow_quant(_uniform_velocity([0, 0, 1], (1, 2, 4, 4)), plane)
    far = FlowPlane.axial("z", 50, np.ones((4, 4), dtype=bool), 1.0)
    with pytest.raises(DimensionError):
        flow_quant(_uniform_velocity([0, 0, 1], (1, 2, 4, 4)), far)


def test_bland_altman_against_itself():
    x = np.array([1.0, 2.0, 5.0])
    result = bland_altman(x, x)
    assert (result.mean_diff, result.sd_diff) == (0.0, 0.0)
    assert result.lower == result.upper == 0.0
    np.testing.assert_array_equal(result.means, x)


def test_bland_altman_limits():
    x = np.array([10.0, 20.0, 30.0, 40.0])
    y = x + np.array([1.0, -1.0, 3.0, 1.0])
    result = bland_altman(x, y)
    assert result.mean_diff == pytest.approx(1.0)
    sd = math.sqrt((0 + 4 + 4 + 0) / 3)
    assert result.sd_diff == pytest.approx(sd)
    assert result.upper == pytest.approx(1.0 + 1.96 * sd)
    with pytest.raises(DimensionError):
        bland_altman(x, y[:2])


def test_linreg_on_exact_line():
    x = np.arange(6.0)
    fit = linreg_corr(x, 2.5 * x - 1.0)
    assert fit.a == pytest.approx(2.5)
    assert fit.b == pytest.approx(-1.0)
    assert fit.r == pytest.approx(1.0)
    with pytest.raises(DimensionError):
        linreg_corr([1.0], [2.0])
    with pytest.raises(DimensionError):
        linreg_corr([3.0, 3.0, 3.0], [1.0, 2.0, 3.0])


def _row(method, acceleration=10.0):
    return MetricsRow(method, acceleration, 0.1, 0.2, 5.0, 0.9, 100.0, 80.0, 1.5)


def test_csv_append_writes_one_header(tmp_path):
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, [_row("csllr")])
    write_metrics_csv(path, [_row("flowvn"), _row("reference")], append=True)
    lines = path.read_text().splitlines()
    assert sum(line.startswith("method,") for line in lines) == 1
    assert [row.method for row in read_metrics_csv(path)] == ["csllr", "flowvn", "reference"]
    assert read_metrics_csv(path)[0] == _row("csllr")


def test_csv_overwrite(tmp_path):
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, [_row("csllr"), _row("csllr", 6.0)])
    write_metrics_csv(path, [_row("flowvn")])
    assert read_metrics_csv(path) == [_row("flowvn")]


def test_csv_missing_columns(tmp_path):
    path = tmp_path / "metrics.csv"
    path.write_text("method,R\ncsllr,10\n")
    with pytest.raises(DimensionError):
        read_metrics_csv(path)


def test_csv_keeps_requested_acceleration(tmp_path):
    path = tmp_path / "metrics.csv"
    saturated = MetricsRow("flowvn", 14.6, 0.1, 0.2, 5.0, 0.9, 100.0, 80.0, 1.5, R_requested=22.0)
    write_metrics_csv(path, [saturated, _row("reference", 14.6)])
    rows = read_metrics_csv(path)
    assert rows[0].R_requested == 22.0
    assert rows[1].R_requested is None


def test_csv_without_requested_column(tmp_path):
    path = tmp_path / "metrics.csv"
    header = "method,R,nRMSE,RelErr,AngErr,SSIM,peak_flow,peak_velocity,seconds"
    path.write_text(f"{header}\ncsllr,10,0.1,0.2,5,0.9,100,80,1.5\n")
    assert read_metrics_csv(path) == [_row("csllr")]
