"""Uniform rectangular grids and the scalar/complex fields living on them.

Conventions
-----------
A grid covers a box in 1 to 3 dimensions with ``n_k`` points per axis and
spacing ``dx_k = (hi_k - lo_k) / n_k``.  Coordinate placement depends on the
boundary type of the axis:

* periodic axes place points at ``lo + i*dx`` (no duplicated endpoint, so
  FFT wave numbers are exact),
* reflecting axes place points at cell centers ``lo + (i + 1/2)*dx`` (the
  walls sit exactly on the extent edges, natural for finite volumes).

Either way every point owns one cell of volume ``prod(dx)``, so quadrature
is a plain sum times the cell volume and is exact for constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PERIODIC = "periodic"
REFLECTING = "reflecting"

# Construction-time guard: a complex field on this many points is ~1 GiB.
_MAX_TOTAL_POINTS = 2**26


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular discretization of a boxed configuration space."""

    points: tuple[int, ...]
    extent: tuple[tuple[float, float], ...]
    boundary: tuple[str, ...]

    def __post_init__(self):
        dims = len(self.points)
        if not 1 <= dims <= 3:
            raise ValueError(f"grid must have 1..3 dimensions, got {dims}")
        if len(self.extent) != dims or len(self.boundary) != dims:
            raise ValueError("points, extent and boundary must have equal length")
        for n in self.points:
            if int(n) != n or n < 8:
                raise ValueError(f"need at least 8 points per axis, got {n}")
        for lo, hi in self.extent:
            if not hi > lo:
                raise ValueError(f"extent must satisfy hi > lo, got ({lo}, {hi})")
        for b in self.boundary:
            if b not in (PERIODIC, REFLECTING):
                raise ValueError(f"boundary must be '{PERIODIC}' or '{REFLECTING}', got {b!r}")
        total = int(np.prod(self.points))
        if total > _MAX_TOTAL_POINTS:
            raise ValueError(f"grid has {total} points, exceeding the {_MAX_TOTAL_POINTS} limit")

    @classmethod
    def make(cls, points, extent, boundary=PERIODIC) -> "Grid":
        """Build a grid, broadcasting scalar arguments across dimensions.

        ``points`` may be an int or sequence; ``extent`` a (lo, hi) pair or a
        sequence of pairs; ``boundary`` a string or sequence of strings.
        """
        if np.isscalar(points):
            points = (points,)
        points = tuple(int(n) for n in points)
        dims = len(points)
        extent = np.asarray(extent, dtype=float)
        if extent.ndim == 1:
            extent = np.tile(extent, (dims, 1))
        extent = tuple((float(lo), float(hi)) for lo, hi in extent)
        if isinstance(boundary, str):
            boundary = (boundary,) * dims
        return cls(points=points, extent=extent, boundary=tuple(boundary))

    @property
    def dims(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for (lo, hi), n in zip(self.extent, self.points))

    @property
    def cell_volume(self) -> float:
        vol = 1.0
        for dx in self.spacing:
            vol *= dx
        return vol

    def coords(self, axis: int) -> np.ndarray:
        """Coordinate array along one axis (placement depends on boundary)."""
        lo, hi = self.extent[axis]
        n = self.points[axis]
        dx = (hi - lo) / n
        offset = 0.0 if self.boundary[axis] == PERIODIC else 0.5
        return lo + (np.arange(n) + offset) * dx

    def meshgrid(self) -> list[np.ndarray]:
        return list(np.meshgrid(*[self.coords(k) for k in range(self.dims)], indexing="ij"))

    def fold(self, x: np.ndarray) -> np.ndarray:
        """Map arbitrary positions back into the box.

        Periodic axes wrap; reflecting axes mirror-fold, so a proposed move
        past a wall bounces back by the overshoot distance.  Positions already
        inside the box are returned bitwise unchanged.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = None
        for k in range(self.dims):
            lo, hi = self.extent[k]
            span = hi - lo
            col = x[:, k]
            if self.boundary[k] == PERIODIC:
                inside = (col >= lo) & (col < hi)
                if np.all(inside):
                    continue
                if out is None:
                    out = x.copy()
                out[:, k] = np.where(inside, col, (col - lo) % span + lo)
            else:
                inside = (col >= lo) & (col <= hi)
                if np.all(inside):
                    continue
                if out is None:
                    out = x.copy()
                y = (col - lo) % (2.0 * span)
                folded = lo + np.where(y > span, 2.0 * span - y, y)
                out[:, k] = np.where(inside, col, folded)
        return x if out is None else out

    def cell_index(self, x: np.ndarray) -> np.ndarray:
        """Index of the cell owning each (already folded) position, shape (m, dims)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        idx = np.empty(x.shape, dtype=np.int64)
        for k in range(self.dims):
            lo, hi = self.extent[k]
            n = self.points[k]
            dx = (hi - lo) / n
            if self.boundary[k] == PERIODIC:
                idx[:, k] = np.floor((x[:, k] - lo) / dx + 0.5).astype(np.int64) % n
            else:
                idx[:, k] = np.clip(np.floor((x[:, k] - lo) / dx).astype(np.int64), 0, n - 1)
        return idx


def _check_finite(values, what):
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} must be finite everywhere")


class ScalarField:
    """Real scalar field sampled on a grid; immutable after construction."""

    kind = "scalar"

    def __init__(self, grid: Grid, values, time: float = 0.0):
        values = np.array(values, dtype=self._dtype(), copy=True)
        if values.shape != grid.points:
            raise ValueError(f"values shape {values.shape} does not match grid points {grid.points}")
        self._validate(values)
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.time = float(time)

    @staticmethod
    def _dtype():
        return np.float64

    def _validate(self, values):
        _check_finite(values, "field values")

    def with_time(self, time: float):
        return type(self)(self.grid, self.values, time)


class DensityField(ScalarField):
    """Nonnegative scalar field (probability density, possibly unnormalized)."""

    kind = "density"

    def _validate(self, values):
        _check_finite(values, "density values")
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")

    def total(self) -> float:
        return integrate(self)

    def normalized(self) -> "DensityField":
        z = self.total()
        if z <= 0:
            raise ValueError("cannot normalize a density with zero mass")
        return DensityField(self.grid, self.values / z, self.time)


class WaveField:
    """Complex field on a grid at a given time; immutable after construction."""

    kind = "wave"

    def __init__(self, grid: Grid, values, time: float = 0.0):
        values = np.array(values, dtype=np.complex128, copy=True)
        if values.shape != grid.points:
            raise ValueError(f"values shape {values.shape} does not match grid points {grid.points}")
        _check_finite(values.view(np.float64), "wave values")
        if not np.any(values != 0):
            raise ValueError("wave field must have positive squared norm")
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.time = float(time)

    def density(self) -> DensityField:
        return DensityField(self.grid, np.abs(self.values) ** 2, self.time)

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2)) * self.grid.cell_volume


def integrate(field) -> float:
    """Quadrature of a scalar field: sum of values times cell volume.

    Exact for constants on any grid (every point owns one equal cell).
    """
    values = field.values if hasattr(field, "values") else np.asarray(field)
    _check_finite(values, "integrand")
    return float(values.sum()) * field.grid.cell_volume


def gradient_log(field, epsilon: float) -> np.ndarray:
    """Gradient of ``ln(values + epsilon)``, shape ``(*points, dims)``.

    Central differences in the interior; periodic axes wrap, reflecting axes
    use second-order one-sided stencils at the walls.  ``epsilon`` is the
    absolute regularizer keeping the log finite at nodes.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    grid = field.grid
    logv = np.log(np.asarray(field.values, dtype=float) + epsilon)
    out = np.empty(grid.points + (grid.dims,))
    for k in range(grid.dims):
        dx = grid.spacing[k]
        if grid.boundary[k] == PERIODIC:
            g = (np.roll(logv, -1, axis=k) - np.roll(logv, 1, axis=k)) / (2.0 * dx)
        else:
            g = np.empty_like(logv)
            mid = [slice(None)] * grid.dims
            lop = [slice(None)] * grid.dims
            hip = [slice(None)] * grid.dims
            mid[k], lop[k], hip[k] = slice(1, -1), slice(None, -2), slice(2, None)
            g[tuple(mid)] = (logv[tuple(hip)] - logv[tuple(lop)]) / (2.0 * dx)

            def take(i):
                sl = [slice(None)] * grid.dims
                sl[k] = i
                return logv[tuple(sl)]

            first = [slice(None)] * grid.dims
            last = [slice(None)] * grid.dims
            first[k], last[k] = 0, -1
            g[tuple(first)] = (-3.0 * take(0) + 4.0 * take(1) - take(2)) / (2.0 * dx)
            g[tuple(last)] = (3.0 * take(-1) - 4.0 * take(-2) + take(-3)) / (2.0 * dx)
        out[..., k] = g
    return out


def interpolate(grid: Grid, values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of grid data at arbitrary points.

    ``values`` has shape ``(*points,)`` or ``(*points, v)`` for vector data;
    ``x`` is a single point ``(dims,)`` or a batch ``(m, dims)``.  Queries are
    folded into the box first; on reflecting axes the outer half-cells use the
    edge value (zero-gradient ghost), never extrapolation.  Exact for fields
    linear in each coordinate, and returns the stored value bit-for-bit when
    the query sits on a grid point.
    """
    values = np.asarray(values)
    single = np.asarray(x).ndim == 1
    pts = grid.fold(x)
    m = pts.shape[0]

    i0 = np.empty((m, grid.dims), dtype=np.int64)
    i1 = np.empty((m, grid.dims), dtype=np.int64)
    frac = np.empty((m, grid.dims))
    for k in range(grid.dims):
        lo, hi = grid.extent[k]
        n = grid.points[k]
        dx = (hi - lo) / n
        if grid.boundary[k] == PERIODIC:
            f = (pts[:, k] - lo) / dx
        else:
            f = np.clip((pts[:, k] - lo) / dx - 0.5, 0.0, n - 1.0)
        # Snap queries that are a rounding error away from a node, so values
        # stored on grid points are reproduced bit-for-bit.
        r = np.round(f)
        f = np.where(np.abs(f - r) <= 1e-9, r, f)
        if grid.boundary[k] == PERIODIC:
            base = np.floor(f)
            i0[:, k] = base.astype(np.int64) % n
            i1[:, k] = (i0[:, k] + 1) % n
            frac[:, k] = f - base
        else:
            base = np.minimum(np.floor(f), n - 2)
            i0[:, k] = base.astype(np.int64)
            i1[:, k] = i0[:, k] + 1
            frac[:, k] = f - base

    vec = values.ndim == grid.dims + 1
    out_shape = (m, values.shape[-1]) if vec else (m,)
    out = np.zeros(out_shape, dtype=values.dtype)
    for corner in range(2**grid.dims):
        idx = []
        w = np.ones(m)
        for k in range(grid.dims):
            hi_side = (corner >> k) & 1
            idx.append(i1[:, k] if hi_side else i0[:, k])
            w = w * (frac[:, k] if hi_side else 1.0 - frac[:, k])
        v = values[tuple(idx)]
        out += v * (w[:, None] if vec else w)
    return out[0] if single else out
