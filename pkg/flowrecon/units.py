"""Display units for velocities and flow rates."""
from collections.abc import Callable
from dataclasses import dataclass

from .models import ConfigError


@dataclass
class UnitOfMeasurement:
    """Unit a quantity computed in cm/s or ml/s is reported in."""

    unit_of_measurement: str
    suggested_display_precision: int
    from_base: Callable[[float], float]

    def format(self, value: float) -> str:
        """Return the value rounded for display, with its unit."""
        return f"{self.from_base(value):.{self.suggested_display_precision}f} {self.unit_of_measurement}"


VELOCITY_UNITS = (
    UnitOfMeasurement(
        unit_of_measurement="cm/s",
        suggested_display_precision=1,
        from_base=lambda x: x,
    ),
    UnitOfMeasurement(
        unit_of_measurement="m/s",
        suggested_display_precision=3,
        from_base=lambda x: x / 100,
    ),
)

# voxel velocities in cm/s times areas in cm^2 give ml/s
FLOW_UNITS = (
    UnitOfMeasurement(
        unit_of_measurement="ml/s",
        suggested_display_precision=1,
        from_base=lambda x: x,
    ),
    UnitOfMeasurement(
        unit_of_measurement="l/min",
        suggested_display_precision=2,
        from_base=lambda x: x * 60 / 1000,
    ),
)


def get_unit(units: tuple[UnitOfMeasurement, ...], name: str) -> UnitOfMeasurement:
    """Look up a unit by its symbol."""
    for unit in units:
        if unit.unit_of_measurement == name:
            return unit
    raise ConfigError(
        f"Unknown unit {name!r}, expected one of {[u.unit_of_measurement for u in units]}"
    )
