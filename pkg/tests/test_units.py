"""Tests for display units."""

import pytest

from flowrecon.models import ConfigError
from flowrecon.units import FLOW_UNITS, VELOCITY_UNITS, get_unit


def test_velocity_units():
    assert get_unit(VELOCITY_UNITS, "cm/s").format(123.456) == "123.5 cm/s"
    assert get_unit(VELOCITY_UNITS, "m/s").format(123.456) == "1.235 m/s"


def test_flow_units():
    assert get_unit(FLOW_UNITS, "ml/s").format(100.0) == "100.0 ml/s"
    assert get_unit(FLOW_UNITS, "l/min").from_base(100.0) == pytest.approx(6.0)
    assert get_unit(FLOW_UNITS, "l/min").format(100.0) == "6.00 l/min"


def test_unknown_unit():
    with pytest.raises(ConfigError, match="mm/s"):
        get_unit(VELOCITY_UNITS, "mm/s")
