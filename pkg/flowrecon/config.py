"""Configuration schemas for flowrecon."""

from __future__ import annotations

from typing import Any

import voluptuous as vol

from .const import ACTIVATION_KINDS, FILTER_BANKS, METHODS, VELOCITY_AXES
from .models import ConfigError

_COUNT = vol.All(vol.Coerce(int), vol.Range(min=1))
_POSITIVE = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_NON_NEGATIVE = vol.All(vol.Coerce(float), vol.Range(min=0))
_FRACTION = vol.All(vol.Coerce(float), vol.Range(min=0, max=1))
_SEED = vol.Any(None, vol.All(vol.Coerce(int), vol.Range(min=0)))


def _odd(value: int) -> int:
    if value % 2 == 0:
        raise vol.Invalid("must be odd")
    return value


SAMPLING_SCHEMA = vol.Schema(
    {
        vol.Required("ny"): _COUNT,
        vol.Required("nz"): _COUNT,
        vol.Required("nt"): _COUNT,
        vol.Required("spokes_per_phase"): vol.All(vol.Coerce(float), vol.Range(min=1)),
        vol.Required("angle_increment_deg"): vol.All(
            vol.Coerce(float),
            vol.Range(min=0, max=360, min_included=False, max_included=False),
        ),
        vol.Required("seed"): _SEED,
    }
)

PHANTOM_SCHEMA = vol.Schema(
    {
        vol.Required("nx"): _COUNT,
        vol.Required("ny"): _COUNT,
        vol.Required("nz"): _COUNT,
        vol.Required("nt"): _COUNT,
        vol.Required("n_coils"): _COUNT,
        vol.Required("tube_radius"): vol.All(vol.Coerce(float), vol.Range(min=2)),
        vol.Required("tube_axis"): vol.In(VELOCITY_AXES),
        vol.Required("peak_velocity"): _POSITIVE,
        vol.Required("venc"): _POSITIVE,
        vol.Required("systolic_peak_fraction"): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Required("systolic_width"): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, min_included=False)
        ),
        vol.Required("diastolic_level"): _FRACTION,
        vol.Required("background_magnitude"): _NON_NEGATIVE,
        vol.Required("blood_magnitude"): _POSITIVE,
        vol.Required("inflow_enhancement"): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Required("noise_snr"): vol.Any(None, vol.Coerce(float)),
        vol.Required("voxel_size_cm"): _POSITIVE,
        vol.Required("seed"): _SEED,
    }
)

LLR_SCHEMA = vol.Schema(
    {
        vol.Required("patch_size"): _COUNT,
        vol.Required("lam"): _NON_NEGATIVE,
        vol.Required("max_iters"): _COUNT,
        vol.Required("random_shift"): vol.Boolean(),
        vol.Required("seed"): _SEED,
    }
)

NETWORK_SCHEMA = vol.Schema(
    {
        vol.Required("layers"): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Required("n_filters"): _COUNT,
        vol.Required("kernel_size"): vol.All(_COUNT, _odd),
        vol.Required("n_knots"): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Required("knot_spacing"): _POSITIVE,
        vol.Required("modulation_knots"): vol.All(vol.Coerce(int), vol.Range(min=2)),
        vol.Required("banks"): vol.All(
            vol.Coerce(list), vol.Length(min=1), [vol.In(list(FILTER_BANKS))]
        ),
        vol.Required("momentum"): vol.Boolean(),
        vol.Required("modulation"): vol.Boolean(),
        vol.Required("data_activation"): vol.Boolean(),
        vol.Required("activation_kind"): vol.In(ACTIVATION_KINDS),
        vol.Required("filter_init_scale"): _NON_NEGATIVE,
    }
)

TRAIN_SCHEMA = vol.Schema(
    {
        vol.Required("iters"): _COUNT,
        vol.Required("lr"): _POSITIVE,
        vol.Required("beta1"): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)),
        vol.Required("beta2"): vol.All(vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)),
        vol.Required("batch"): _COUNT,
        vol.Required("tau_rate"): _NON_NEGATIVE,
        vol.Required("crop_x"): _COUNT,
        vol.Required("crop_t"): _COUNT,
        vol.Required("r_min"): vol.All(vol.Coerce(float), vol.Range(min=1)),
        vol.Required("r_max"): vol.All(vol.Coerce(float), vol.Range(min=1)),
        vol.Required("exp_weighting"): vol.Boolean(),
        vol.Required("checkpoint_every"): _COUNT,
        vol.Required("validation_r"): vol.All(vol.Coerce(float), vol.Range(min=1)),
        vol.Required("workers"): _COUNT,
        vol.Required("seed"): _SEED,
    }
)

RUN_SCHEMA = vol.Schema(
    {
        vol.Required("method"): vol.In(METHODS),
        vol.Optional("seed", default=0): _SEED,
        vol.Optional("acceleration"): vol.All(vol.Coerce(float), vol.Range(min=1)),
        vol.Optional("independent_masks", default=False): vol.Boolean(),
        vol.Optional("phantom"): dict,
        vol.Optional("sampling"): dict,
        vol.Optional("llr"): dict,
        vol.Optional("network"): dict,
        vol.Optional("train"): dict,
        vol.Optional("weights"): vol.Any(None, str),
    }
)


def validate(schema: vol.Schema, data: dict[str, Any], what: str) -> dict[str, Any]:
    """Validate a mapping, raising ConfigError with the offending path."""
    try:
        return schema(data)
    except vol.Invalid as e:
        raise ConfigError(f"Invalid {what}: {e}") from e
