"""Trend tracking of training checkpoints."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

from .const import LOGGER

TREND_LEVELS = ("FALLING_FAST", "FALLING", "STABLE", "RISING", "RISING_FAST")

# (checkpoints back, weight): recent windows count most
_WINDOWS = ((1, 3.0), (3, 2.0), (10, 1.0))


@dataclass
class CheckpointRecord:
    """Measurements taken at one training checkpoint."""

    iter: int
    loss: float
    image_l1: float
    velocity_relerr: float
    tau: float

    def as_row(self) -> dict[str, Any]:
        """Return the record as a CSV row."""
        return asdict(self)


class CheckpointMonitor:
    """Classify how a checkpoint metric evolves over recent checkpoints."""

    def __init__(self, max_history: int = 30) -> None:
        """Initialize the monitor.

        Args:
            max_history: Maximum number of checkpoints to keep
        """
        self.max_history = max_history
        self.history: list[CheckpointRecord] = []
        self.first: CheckpointRecord | None = None

    def add_checkpoint(self, record: CheckpointRecord) -> None:
        """Add a checkpoint, skipping repeats of the last iteration."""
        if self.history and self.history[-1].iter == record.iter:
            LOGGER.debug("Skipping duplicate checkpoint at iteration %d", record.iter)
            return
        if self.first is None:
            self.first = record
        self.history.append(record)
        if len(self.history) > self.max_history:
            self.history = self.history[-self.max_history :]

    def rate_of_change(self, metric: str = "image_l1") -> float:
        """Return the weighted relative change of a metric per 1000 iterations."""
        if len(self.history) < 2:
            return 0.0
        latest = self.history[-1]
        rates = []
        weights = []
        for back, weight in _WINDOWS:
            if len(self.history) <= back:
                continue
            earlier = self.history[-1 - back]
            rate = _relative_rate(earlier, latest, metric)
            if rate is not None:
                rates.append(rate)
                weights.append(weight)
        if not rates:
            return 0.0
        return sum(r * w for r, w in zip(rates, weights)) / sum(weights)

    def calculate_trend(self, metric: str = "image_l1") -> dict[str, Any]:
        """Return the trend category of a metric and its rate."""
        if len(self.history) < 2:
            LOGGER.debug("Not enough checkpoints for a trend (have %d)", len(self.history))
            return {
                "trend": "STABLE",
                "rate": 0.0,
                "description": "Stable",
                "calculated": False,
                "history_count": len(self.history),
            }
        rate = self.rate_of_change(metric)
        trend = _rate_to_trend(rate)
        LOGGER.debug("Trend of %s: %s (%.4f per 1000 iterations)", metric, trend, rate)
        return {
            "trend": trend,
            "rate": rate,
            "description": trend.replace("_", " ").capitalize(),
            "calculated": True,
            "history_count": len(self.history),
        }

    def decreased(self, metric: str) -> bool:
        """Return whether the metric is lower now than at the first checkpoint."""
        if self.first is None or not self.history:
            return False
        return getattr(self.history[-1], metric) < getattr(self.first, metric)

    def clear_history(self) -> None:
        """Forget all checkpoints."""
        self.history.clear()
        self.first = None


def _relative_rate(earlier: CheckpointRecord, later: CheckpointRecord, metric: str) -> float | None:
    iterations = later.iter - earlier.iter
    base = getattr(earlier, metric)
    if iterations <= 0 or base == 0:
        return None
    return (getattr(later, metric) - base) / abs(base) / iterations * 1000


def _rate_to_trend(rate: float) -> str:
    """Convert a relative rate per 1000 iterations to a trend category."""
    if rate <= -0.10:
        return "FALLING_FAST"
    if rate <= -0.01:
        return "FALLING"
    if rate < 0.01:
        return "STABLE"
    if rate < 0.10:
        return "RISING"
    return "RISING_FAST"
