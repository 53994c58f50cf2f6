"""Tests for the unrolled network."""

import numpy as np
import pytest

from flowrecon.encoding import adjoint_encode, forward_encode, normalize_kspace
from flowrecon.flowvn import (
    LayerState,
    NetworkConfig,
    Problem,
    activation_curve,
    flowvn_config,
    hamvn_config,
    infer,
    init_params,
    ladder_configs,
    layer_step,
    load_weights,
    mean_sampling_rate,
    save_weights,
)
from flowrecon.models import ConfigError, ContainerError, KSpaceData, NumericalError


def _gradient_descent_oracle(b, coils, layers):
    mask = b.expanded_mask()
    p = adjoint_encode(b, coils)
    for _ in range(layers):
        residual = forward_encode(p, coils, b.mask).samples - b.samples * mask
        p = p - adjoint_encode(KSpaceData(residual, b.mask), coils)
    return p


def test_parameter_counts():
    flowvn = init_params(flowvn_config()).parameter_count()
    hamvn = init_params(hamvn_config()).parameter_count()
    assert flowvn == 70461
    assert hamvn == 69121
    assert 0 < (flowvn - hamvn) / hamvn <= 0.02


def test_identity_network_is_gradient_descent_on_full_mask(tiny_coils, tiny_images):
    b, _ = normalize_kspace(forward_encode(tiny_images, tiny_coils))
    params = init_params(flowvn_config(layers=10), "zero")
    expected = _gradient_descent_oracle(b, tiny_coils, 10)
    np.testing.assert_allclose(infer(b, tiny_coils, params), expected, atol=1e-6)


@pytest.mark.parametrize("config", [flowvn_config, hamvn_config])
def test_identity_network_is_gradient_descent_undersampled(config, tiny_coils, tiny_images, tiny_mask):
    b, _ = normalize_kspace(forward_encode(tiny_images, tiny_coils, tiny_mask))
    params = init_params(config(layers=10, data_activation=False), "zero")
    expected = _gradient_descent_oracle(b, tiny_coils, 10)
    np.testing.assert_allclose(infer(b, tiny_coils, params), expected, atol=1e-6 * np.abs(expected).max())


def test_intermediates(tiny_coils, tiny_images, tiny_mask):
    b, _ = normalize_kspace(forward_encode(tiny_images, tiny_coils, tiny_mask))
    params = init_params(flowvn_config(layers=3, n_filters=2, kernel_size=3), seed=4)
    p, states = infer(b, tiny_coils, params, keep_intermediates=True)
    assert len(states) == 4
    np.testing.assert_allclose(states[0].p, adjoint_encode(b, tiny_coils))
    np.testing.assert_array_equal(states[-1].p, p)


def test_non_finite_parameters_name_the_layer(tiny_coils, tiny_images, tiny_mask):
    b, _ = normalize_kspace(forward_encode(tiny_images, tiny_coils, tiny_mask))
    params = init_params(flowvn_config(layers=2, n_filters=2, kernel_size=3))
    params.values["layer1.kernel.xyz"][0, 1, 1, 1] = np.nan
    with pytest.raises(NumericalError, match="layer 1"):
        infer(b, tiny_coils, params)
    with pytest.raises(NumericalError, match="layer1.kernel.xyz"):
        params.check_finite()


def test_non_finite_data_names_the_first_layer(tiny_coils, tiny_images, tiny_mask):
    b, _ = normalize_kspace(forward_encode(tiny_images, tiny_coils, tiny_mask))
    b.samples[0, 0, 0, 0, 0] = np.nan
    params = init_params(flowvn_config(layers=2, n_filters=2, kernel_size=3))
    with pytest.raises(NumericalError, match="layer 0"):
        infer(b, tiny_coils, params)


def test_single_bank_variant(tiny_coils, tiny_images, tiny_mask):
    cfg = flowvn_config(layers=2, n_filters=2, kernel_size=3, banks=["yzt"])
    params = init_params(cfg)
    assert not any("xyz" in name for name in params.values)
    b, _ = normalize_kspace(forward_encode(tiny_images, tiny_coils, tiny_mask))
    assert infer(b, tiny_coils, params).shape == tiny_images.shape


def test_weights_round_trip(tmp_path):
    params = init_params(hamvn_config(layers=2, n_filters=3, kernel_size=3), seed=9)
    path = tmp_path / "net.flowvn"
    save_weights(path, params)
    loaded = load_weights(path)
    assert loaded.config == params.config
    assert list(loaded.values) == list(params.values)
    for name, value in params.values.items():
        np.testing.assert_array_equal(loaded.values[name], value)
    assert list(tmp_path.iterdir()) == [path]


def test_corrupt_weights(tmp_path):
    path = tmp_path / "net.flowvn"
    path.write_bytes(b"not a network")
    with pytest.raises(ContainerError):
        load_weights(path)
    save_weights(path, init_params(flowvn_config(layers=1, n_filters=1, kernel_size=3)))
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(ContainerError):
        load_weights(path)


def test_ablation_ladder():
    steps = ladder_configs()
    assert [s.name for s in steps] == [
        "hamvn",
        "+linear_activation",
        "+momentum",
        "+data_activation",
        "+modulation",
        "flowvn",
    ]
    assert steps[0].network == hamvn_config()
    assert steps[-1].network == flowvn_config()
    assert [s.exp_weighting for s in steps] == [False] * 5 + [True]
    counts = [init_params(s.network).parameter_count() for s in steps]
    assert counts == sorted(counts)


def test_frozen_parameters():
    params = init_params(hamvn_config(layers=1))
    frozen = {"layer0.momentum", "layer0.mod_data", "layer0.mod_reg", "layer0.data_knots"}
    assert frozen.isdisjoint(params.trainable_names())
    assert "layer0.kernel.xyz" in params.trainable_names()


def test_invalid_network_config():
    with pytest.raises(ConfigError):
        NetworkConfig(kernel_size=4)
    with pytest.raises(ConfigError):
        NetworkConfig(banks=["xyzt"])
    with pytest.raises(ConfigError):
        NetworkConfig(activation_kind="tanh")
    with pytest.raises(ConfigError):
        init_params(flowvn_config(), "ones")


def test_mean_sampling_rate(tiny_mask):
    assert mean_sampling_rate(tiny_mask) == pytest.approx(np.count_nonzero(tiny_mask) / tiny_mask.size)


def test_activation_curve_of_identity():
    params = init_params(flowvn_config(layers=1))
    knots = params.layer(0).reg_knots["xyz"]
    h = np.linspace(-2, 2, 9)
    curve = activation_curve(type(knots)(knots.phi[0], knots.omega), "piecewise_linear", h)
    np.testing.assert_allclose(curve, h, atol=1e-12)


def test_layer_step_carries_momentum(tiny_coils, tiny_images):
    b = forward_encode(tiny_images, tiny_coils)
    params = init_params(flowvn_config(layers=1, n_filters=2, kernel_size=3), "zero")
    params.values["layer0.momentum"] = np.asarray(0.5)
    s = np.ones_like(tiny_images)
    problem = Problem(b, tiny_coils)
    state = layer_step(LayerState(p=tiny_images, s=s), problem, params.layer(0), params.config)
    # consistent data and zero filters leave only the momentum term
    np.testing.assert_allclose(state.s, 0.5 * s, atol=1e-12)
    np.testing.assert_allclose(state.p, tiny_images - 0.5 * s, atol=1e-12)
