"""Conversion of a wave field into the particle's potential and drift.

The walker feels the potential ``V = -ln(|Psi|^2 + eps)`` and drifts with
velocity ``lambda * grad ln(|Psi|^2 + eps)``.  The additive regularizer
``eps`` is RELATIVE: the value added to |Psi|^2 is ``epsilon * max|Psi|^2``,
which caps the barrier height at nodes near ``-ln(epsilon)`` (about 27.6 for
the default 1e-12) and makes the drift exactly invariant under rescaling of
Psi.  The regularized density ``|Psi|^2 + eps`` is then the exact stationary
density of the walker for a static field.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import DensityField, Grid, ScalarField, WaveField, gradient_log, interpolate


@dataclass(frozen=True)
class GuidanceParams:
    """Diffusion constant, relative node regularizer, optional drift cap.

    ``drift_cap`` bounds the Euclidean magnitude of the drift vector
    (length/time); None leaves the regularized drift uncapped.
    """

    lam: float
    epsilon: float = 1e-12
    drift_cap: float | None = None

    def __post_init__(self):
        # lam = 0 is the deterministic limit (no noise, no guidance drift),
        # useful for exercising the integrator; negative diffusion is not.
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.drift_cap is not None and self.drift_cap <= 0:
            raise ValueError("drift_cap must be positive when set")

    def effective_epsilon(self, density_max: float) -> float:
        scale = density_max if density_max > 0 else 1.0
        return self.epsilon * scale


@dataclass(frozen=True)
class DiffusionSpec:
    """Diffusion constant parameterized as length_scale^2 / time_scale."""

    length_scale: float
    time_scale: float

    def __post_init__(self):
        if self.length_scale <= 0 or self.time_scale <= 0:
            raise ValueError("length_scale and time_scale must be positive")

    @property
    def lam(self) -> float:
        return self.length_scale**2 / self.time_scale


def diffusion_constant(spec: DiffusionSpec) -> float:
    return spec.lam


@dataclass(frozen=True, eq=False)
class DriftField:
    """Drift vectors on a grid at a fixed time, shape ``(*points, dims)``."""

    grid: Grid
    vectors: np.ndarray
    time: float
    params: GuidanceParams | None

    kind = "drift"

    def __post_init__(self):
        if self.vectors.shape != self.grid.points + (self.grid.dims,):
            raise ValueError("drift vectors must have shape (*points, dims)")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("drift vectors must be finite")

    def at(self, x) -> np.ndarray:
        """Multilinear spatial interpolation at one point or a batch."""
        return interpolate(self.grid, self.vectors, x)


def regularized_density(psi: WaveField, params: GuidanceParams) -> DensityField:
    """|Psi|^2 + eps, the walker's exact stationary density for static Psi."""
    rho = np.abs(psi.values) ** 2
    eps = params.effective_epsilon(float(rho.max()))
    return DensityField(psi.grid, rho + eps, psi.time)


def potential_field(psi: WaveField, params: GuidanceParams) -> ScalarField:
    """Pointwise ``-ln(|Psi|^2 + eps)``; finite by construction."""
    rho = np.abs(psi.values) ** 2
    eps = params.effective_epsilon(float(rho.max()))
    return ScalarField(psi.grid, -np.log(rho + eps), psi.time)


def drift_field(psi: WaveField, params: GuidanceParams) -> DriftField:
    """``lam * grad ln(|Psi|^2 + eps)``, clipped to ``drift_cap`` when set."""
    rho = DensityField(psi.grid, np.abs(psi.values) ** 2, psi.time)
    eps = params.effective_epsilon(float(rho.values.max()))
    vectors = params.lam * gradient_log(rho, eps)
    if params.drift_cap is not None:
        mag = np.sqrt(np.sum(vectors**2, axis=-1, keepdims=True))
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(mag > params.drift_cap, params.drift_cap / mag, 1.0)
        vectors = vectors * scale
    return DriftField(grid=psi.grid, vectors=vectors, time=psi.time, params=params)


def drift_at(
    field_t0: DriftField,
    field_t1: DriftField | None,
    x,
    t: float,
    time_interpolation: str = "constant",
) -> np.ndarray:
    """Drift at off-grid position(s) and intermediate time.

    Spatial interpolation is multilinear.  In time the default is piecewise
    constant on the earlier snapshot; ``time_interpolation="linear"`` blends
    the two bracketing snapshots.
    """
    if field_t1 is None:
        return field_t0.at(x)
    t0, t1 = field_t0.time, field_t1.time
    if not t0 <= t <= t1:
        raise ValueError(f"t={t} outside snapshot bracket [{t0}, {t1}]")
    if time_interpolation == "constant":
        return field_t0.at(x)
    if time_interpolation != "linear":
        raise ValueError(f"unknown time interpolation {time_interpolation!r}")
    if t1 == t0:
        return field_t0.at(x)
    w = (t - t0) / (t1 - t0)
    return (1.0 - w) * field_t0.at(x) + w * field_t1.at(x)
