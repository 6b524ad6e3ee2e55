"""Statistics over trajectories and densities: histograms, residuals,
escape-time estimates and independence diagnostics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .grids import PERIODIC, DensityField, Grid
from .schrodinger import DoubleGaussianParams


def histogram(points, grid: Grid) -> DensityField:
    """Normalized cell-count density of sample points on a grid.

    Cells are centered on the grid coordinates.  On periodic axes samples
    wrap; on reflecting axes samples outside the extent are counted in the
    nearest boundary cell and reported via a warning.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and grid.dims == 1:
        pts = pts[:, None]
    pts = np.atleast_2d(pts)
    if pts.shape[0] < 1:
        raise ValueError("histogram needs at least one point")
    if pts.shape[1] != grid.dims:
        raise ValueError(f"points have {pts.shape[1]} components for a {grid.dims}-d grid")
    edges = []
    shifted = pts.copy()
    outside = np.zeros(pts.shape[0], dtype=bool)
    for k in range(grid.dims):
        lo, hi = grid.extent[k]
        n = grid.points[k]
        dx = (hi - lo) / n
        if grid.boundary[k] == PERIODIC:
            # wrap into [lo - dx/2, hi - dx/2) so cells sit on the coords
            shifted[:, k] = (pts[:, k] - (lo - dx / 2)) % (hi - lo) + (lo - dx / 2)
            edges.append(lo - dx / 2 + dx * np.arange(n + 1))
        else:
            outside |= (pts[:, k] < lo) | (pts[:, k] > hi)
            shifted[:, k] = np.clip(pts[:, k], lo, hi)
            edges.append(lo + dx * np.arange(n + 1))
    n_out = int(outside.sum())
    if n_out:
        warnings.warn(f"{n_out} sample(s) outside the grid were counted in boundary cells")
    counts, _ = np.histogramdd(shifted, bins=edges)
    density = counts / (pts.shape[0] * grid.cell_volume)
    return DensityField(grid, density, 0.0)


def total_variation(p: DensityField, q: DensityField) -> float:
    """0.5 * integral |p - q|; both fields normalized, on the same grid."""
    if p.grid != q.grid:
        raise ValueError("total variation requires densities on the same grid")
    for name, f in (("p", p), ("q", q)):
        mass = f.total()
        if abs(mass - 1.0) > 1e-6:
            raise ValueError(f"{name} is not normalized (integral {mass})")
    return 0.5 * float(np.sum(np.abs(p.values - q.values))) * p.grid.cell_volume


def coarsen(field: DensityField, factor) -> DensityField:
    """Block-average a density onto a grid coarser by an integer factor per axis."""
    factors = (factor,) * field.grid.dims if np.isscalar(factor) else tuple(factor)
    points = []
    for n, f in zip(field.grid.points, factors):
        if n % f:
            raise ValueError(f"{n} cells do not divide into blocks of {f}")
        points.append(n // f)
    coarse = Grid(points=tuple(points), extent=field.grid.extent, boundary=field.grid.boundary)
    values = field.values
    for axis, f in enumerate(factors):
        shape = values.shape[:axis] + (values.shape[axis] // f, f) + values.shape[axis + 1 :]
        values = values.reshape(shape).mean(axis=axis + 1)
    return DensityField(coarse, values, field.time)


def kramers_prediction(p: DoubleGaussianParams, lam: float) -> float:
    """Escape-time estimate (a^3 / (lam b)) * exp(b^2 / a^2) for the
    double-Gaussian log-potential; an order-of-magnitude formula valid for
    b >> a."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    if p.b / p.a < 2.0:
        warnings.warn(
            f"b/a = {p.b / p.a:.2f} < 2: the escape-time formula is outside its validity range"
        )
    return (p.a**3 / (lam * p.b)) * float(np.exp((p.b / p.a) ** 2))


@dataclass(frozen=True)
class EscapeTimeEstimate:
    """Mean first-passage time over uncensored runs, with sampling error."""

    mean: float
    standard_error: float
    censored_fraction: float
    n: int
    prediction: float | None = None
    ratio: float | None = None

    @property
    def defined(self) -> bool:
        return np.isfinite(self.mean)


def mfpt_estimate(results, params: DoubleGaussianParams | None = None,
                  lam: float | None = None) -> EscapeTimeEstimate:
    """Summarize first-passage results (objects with .time and .censored).

    When the double-Gaussian parameters and lam are supplied, the estimate
    carries the formula prediction and the measured/predicted ratio.
    """
    times = np.array([r.time for r in results], dtype=float)
    censored = np.array([r.censored for r in results], dtype=bool)
    n = times.size
    if n == 0:
        raise ValueError("no first-passage results")
    ok = times[~censored]
    cfrac = float(censored.mean())
    if ok.size == 0:
        est_mean, se = np.nan, np.nan
    else:
        est_mean = float(ok.mean())
        se = float(ok.std(ddof=1) / np.sqrt(ok.size)) if ok.size >= 2 else np.nan
    prediction = ratio = None
    if params is not None and lam is not None:
        prediction = kramers_prediction(params, lam)
        ratio = est_mean / prediction if np.isfinite(est_mean) else np.nan
    return EscapeTimeEstimate(mean=est_mean, standard_error=se, censored_fraction=cfrac,
                              n=n, prediction=prediction, ratio=ratio)


@dataclass(frozen=True)
class CorrelationStats:
    rho_increments: float
    z_increments: float
    rho_occupancy: float
    z_occupancy: float
    n_increments: int
    degenerate: bool


def _pearson(u: np.ndarray, v: np.ndarray):
    su, sv = u.std(), v.std()
    if su == 0 or sv == 0:
        return np.nan, True
    return float(np.mean((u - u.mean()) * (v - v.mean())) / (su * sv)), False


def independence_test(paths: np.ndarray, split: float = 0.0) -> CorrelationStats:
    """Correlation between the two coordinates of 2-d trajectory records.

    ``paths`` has shape (n_traj, n_times, 2).  Correlates pooled per-step
    increments, and the occupancy indicators x > split, y > split.
    """
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 3 or paths.shape[2] != 2:
        raise ValueError("paths must have shape (n_traj, n_times, 2)")
    inc = np.diff(paths, axis=1)
    dx = inc[:, :, 0].ravel()
    dy = inc[:, :, 1].ravel()
    rho_inc, degenerate_inc = _pearson(dx, dy)
    occ_x = (paths[:, :, 0] > split).astype(float).ravel()
    occ_y = (paths[:, :, 1] > split).astype(float).ravel()
    rho_occ, degenerate_occ = _pearson(occ_x, occ_y)
    n = dx.size
    return CorrelationStats(
        rho_increments=rho_inc,
        z_increments=rho_inc * np.sqrt(n) if np.isfinite(rho_inc) else np.nan,
        rho_occupancy=rho_occ,
        z_occupancy=rho_occ * np.sqrt(occ_x.size) if np.isfinite(rho_occ) else np.nan,
        n_increments=n,
        degenerate=degenerate_inc or degenerate_occ,
    )


@dataclass(frozen=True)
class OccupancyResult:
    labels: np.ndarray
    dwell_times: tuple[float, ...]
    jump_count: int


def well_occupancy(path: np.ndarray, wells, dt: float = 1.0, axis: int = 0) -> OccupancyResult:
    """Label each sample by well region and count transitions between wells.

    ``wells`` is a list of (lo, hi) intervals on one axis; gaps between the
    regions are neutral and keep the previous label, so a jump is recorded
    only when the path actually reaches a different well.
    """
    path = np.asarray(path, dtype=float)
    x = path if path.ndim == 1 else path[:, axis]
    labels = np.full(x.size, -1, dtype=np.int64)
    for j, (lo, hi) in enumerate(wells):
        labels[(x >= lo) & (x <= hi)] = j
    visited = labels[labels >= 0]
    if visited.size == 0:
        return OccupancyResult(labels=labels, dwell_times=(), jump_count=0)
    changes = visited[1:] != visited[:-1]
    jump_count = int(changes.sum())
    # dwell durations between consecutive well changes, in units of dt
    run_lengths = np.diff(np.concatenate([[0], np.flatnonzero(changes) + 1, [visited.size]]))
    dwell_times = tuple(float(r * dt) for r in run_lengths if r > 0)
    return OccupancyResult(labels=labels, dwell_times=dwell_times, jump_count=jump_count)
