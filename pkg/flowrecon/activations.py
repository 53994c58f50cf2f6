"""Trainable activation functions parametrized by control knots.

Knot ``j`` sits at abscissa ``origin + j * omega``; by default the knots are
centered so the middle knot is at zero. A knot array may be 1D (one function)
or ``(F, n)`` (one function per filter, applied to an input whose leading axis
has length ``F``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ConfigError

# inputs per chunk when evaluating Gaussian bases
_RBF_CHUNK = 1 << 12


@dataclass
class ActivationKnots:
    """Control knot values and their spacing."""

    phi: np.ndarray
    omega: float
    origin: float | None = None

    def __post_init__(self) -> None:
        """Check the knot layout and center the knots if no origin is given."""
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.phi.ndim not in (1, 2) or self.phi.shape[-1] < 2:
            raise ConfigError(f"Need at least two knots, got shape {self.phi.shape}")
        if not self.omega > 0:
            raise ConfigError(f"Knot spacing must be positive, got {self.omega}")
        if self.origin is None:
            self.origin = -(self.n_knots - 1) / 2 * self.omega

    @property
    def n_knots(self) -> int:
        """Return the number of knots per function."""
        return self.phi.shape[-1]

    @property
    def abscissae(self) -> np.ndarray:
        """Return the knot positions."""
        return self.origin + self.omega * np.arange(self.n_knots)

    @classmethod
    def identity(
        cls,
        n_knots: int,
        omega: float,
        kind: str = "piecewise_linear",
        count: int | None = None,
    ) -> ActivationKnots:
        """Knots approximating ``f(h) = h`` over the knot range."""
        mu = -(n_knots - 1) / 2 * omega + omega * np.arange(n_knots)
        phi = mu if kind == "piecewise_linear" else mu / np.sqrt(2 * np.pi)
        if count is not None:
            phi = np.tile(phi, (count, 1))
        return cls(phi, omega)

    @classmethod
    def constant(cls, n_knots: int, low: float, high: float, value: float = 1.0) -> ActivationKnots:
        """Piecewise-linear knots over ``[low, high]`` holding a constant value."""
        return cls(np.full(n_knots, value), (high - low) / (n_knots - 1), origin=low)


def _flatten(h: np.ndarray, phi: np.ndarray) -> np.ndarray:
    if phi.ndim == 1:
        return h.reshape(1, -1)
    if h.shape[0] != phi.shape[0]:
        raise ConfigError(f"{phi.shape[0]} knot rows for input with leading axis {h.shape[0]}")
    return h.reshape(phi.shape[0], -1)


@dataclass
class ActivationResult:
    """Value and slope of an activation, kept for the knot gradient."""

    value: np.ndarray
    slope: np.ndarray
    h: np.ndarray
    knots: ActivationKnots
    kind: str
    index: np.ndarray | None = None
    weight: np.ndarray | None = None

    def knot_gradient(self, grad: np.ndarray) -> np.ndarray:
        """Back-propagate an output gradient onto the knot values."""
        phi = self.knots.phi
        grad = _flatten(np.asarray(grad, dtype=np.float64), phi)
        rows, n = grad.shape[0], self.knots.n_knots
        if self.kind == "piecewise_linear":
            offset = (np.arange(rows) * n)[:, None]
            flat = (self.index + offset).ravel()
            out = np.bincount(flat, (grad * (1 - self.weight)).ravel(), minlength=rows * n)
            out += np.bincount(flat + 1, (grad * self.weight).ravel(), minlength=rows * n)
            return out.reshape(phi.shape)
        h = _flatten(self.h, phi)
        out = np.zeros((rows, n))
        for start in range(0, h.shape[1], _RBF_CHUNK):
            basis = _rbf_basis(h[:, start : start + _RBF_CHUNK], self.knots)
            out += np.einsum("fi,fin->fn", grad[:, start : start + _RBF_CHUNK], basis)
        return out.reshape(phi.shape)


def pl_activation(h: np.ndarray, knots: ActivationKnots) -> ActivationResult:
    """Linear interpolation between knots, clamped to the boundary knots outside the range."""
    h = np.asarray(h, dtype=np.float64)
    phi = knots.phi
    n = knots.n_knots
    flat = _flatten(h, phi)
    s = (flat - knots.origin) / knots.omega
    finite = np.isfinite(s)
    inside = (s >= 0) & (s <= n - 1)
    s = np.clip(np.nan_to_num(s), 0, n - 1)
    j = np.minimum(np.floor(s).astype(np.intp), n - 2)
    t = s - j
    rows = np.broadcast_to(phi.reshape(-1, n), (flat.shape[0], n))
    left = np.take_along_axis(rows, j, axis=1)
    right = np.take_along_axis(rows, j + 1, axis=1)
    value = np.where(finite, (1 - t) * left + t * right, np.nan)
    slope = np.where(inside, (right - left) / knots.omega, np.where(finite, 0.0, np.nan))
    return ActivationResult(
        value=value.reshape(h.shape),
        slope=slope.reshape(h.shape),
        h=h,
        knots=knots,
        kind="piecewise_linear",
        index=j,
        weight=t,
    )


def _rbf_basis(h: np.ndarray, knots: ActivationKnots) -> np.ndarray:
    """Return ``exp(-(h - mu)^2 / (2 omega^2))`` with a trailing knot axis."""
    diff = h[..., None] - knots.abscissae
    return np.exp(-(diff**2) / (2 * knots.omega**2))


def rbf_activation(h: np.ndarray, knots: ActivationKnots) -> ActivationResult:
    """Weighted sum of Gaussian bumps of width ``omega`` centered on the knots."""
    h = np.asarray(h, dtype=np.float64)
    phi = knots.phi
    flat = _flatten(h, phi)
    rows = phi.reshape(-1, knots.n_knots)
    if rows.shape[0] != flat.shape[0]:
        rows = np.broadcast_to(rows, (flat.shape[0], knots.n_knots))
    value = np.empty_like(flat)
    slope = np.empty_like(flat)
    mu = knots.abscissae
    for start in range(0, flat.shape[1], _RBF_CHUNK):
        chunk = flat[:, start : start + _RBF_CHUNK]
        basis = _rbf_basis(chunk, knots)
        value[:, start : start + _RBF_CHUNK] = np.einsum("fin,fn->fi", basis, rows)
        dbasis = -basis * (chunk[..., None] - mu) / knots.omega**2
        slope[:, start : start + _RBF_CHUNK] = np.einsum("fin,fn->fi", dbasis, rows)
    return ActivationResult(
        value=value.reshape(h.shape),
        slope=slope.reshape(h.shape),
        h=h,
        knots=knots,
        kind="rbf",
    )


ACTIVATIONS = {
    "piecewise_linear": pl_activation,
    "rbf": rbf_activation,
}


def apply_activation(kind: str, h: np.ndarray, knots: ActivationKnots) -> ActivationResult:
    """Evaluate the activation family ``kind``."""
    if kind not in ACTIVATIONS:
        raise ConfigError(f"Unknown activation kind {kind!r}")
    return ACTIVATIONS[kind](h, knots)


@dataclass
class ComplexActivation:
    """An activation applied separately to real and imaginary parts."""

    real: ActivationResult
    imag: ActivationResult

    @property
    def value(self) -> np.ndarray:
        """Return the complex output."""
        return self.real.value + 1j * self.imag.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        """Return the input gradient for a complex output gradient."""
        return self.real.slope * grad.real + 1j * self.imag.slope * grad.imag

    def knot_gradient(self, grad: np.ndarray) -> np.ndarray:
        """Return the knot gradient for a complex output gradient."""
        return self.real.knot_gradient(grad.real) + self.imag.knot_gradient(grad.imag)


def apply_complex(kind: str, h: np.ndarray, knots: ActivationKnots) -> ComplexActivation:
    """Apply the activation to the real and imaginary channels of ``h``."""
    return ComplexActivation(
        real=apply_activation(kind, h.real, knots),
        imag=apply_activation(kind, h.imag, knots),
    )
