"""Euler-Maruyama integration of the guided walker, single and ensemble.

The walker obeys  dX = lam * grad ln(|Psi|^2 + eps) dt + sqrt(2 lam) dW  with
independent unit white noise per dimension, discretized as

    X_{s+1} = X_s + drift(X_s, t_s) * dt + sqrt(2 lam dt) * eta_s,

eta_s standard normal per dimension.  Reflecting boundaries fold the proposed
point back into the box, periodic boundaries wrap.

Reproducibility: every trajectory owns a counter-based Philox substream keyed
by (master_seed, stream_id), so results are a pure function of the scenario
and master seed, independent of chunking, worker count, or execution order.
Ensembles are processed in fixed-size chunks and merged in stream order; the
chunk partition never depends on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grids import DensityField, Grid, WaveField, interpolate
from .guidance import DriftField, GuidanceParams, drift_field, regularized_density

_CHUNK = 4096          # trajectories per work unit (fixed: determinism)
_NOISE_BLOCK = 1024    # steps of noise pregenerated per trajectory


class IntegratorFailure(RuntimeError):
    """Non-finite proposal, typically a drift blowup without a cap."""

    def __init__(self, position, time, stream_id=None):
        self.position = np.asarray(position)
        self.time = time
        self.stream_id = stream_id
        where = f" (stream {stream_id})" if stream_id is not None else ""
        super().__init__(f"non-finite step at x={self.position}, t={time}{where}")


def substream(master_seed: int, stream_id: int) -> np.random.Generator:
    """Counter-based Philox generator for one trajectory.

    The 128-bit key combines both identifiers, so the draw sequence depends
    only on (master_seed, stream_id).
    """
    key = ((int(master_seed) & (2**64 - 1)) << 64) | (int(stream_id) & (2**64 - 1))
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoiseSpec:
    master_seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        return substream(self.master_seed, self.stream_id)


@dataclass
class TrajectoryState:
    """Walker position, time, noise identity and node-crossing count.

    ``rng`` is the live generator; it is created lazily from ``noise`` and
    carried along by :func:`step_em` so consecutive steps continue the same
    draw sequence.
    """

    x: np.ndarray
    t: float
    noise: NoiseSpec
    crossings: int = 0
    rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))

    def generator(self) -> np.random.Generator:
        if self.rng is None:
            self.rng = self.noise.generator()
        return self.rng


# --------------------------------------------------------------------------
# initial-position samplers

class PointSampler:
    """Every trajectory starts at the same point; consumes no stream draws."""

    def __init__(self, x):
        self.x = np.atleast_1d(np.asarray(x, dtype=float))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.x.copy()


class DensitySampler:
    """Inverse-CDF sampling of a gridded density: pick a cell, then a uniform
    offset inside it.  Consumes 1 + dims uniforms per draw."""

    def __init__(self, density: DensityField):
        self.grid = density.grid
        p = density.values.ravel()
        total = p.sum()
        if total <= 0:
            raise ValueError("cannot sample from a zero density")
        self.cdf = np.cumsum(p / total)
        self.cdf[-1] = 1.0

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        flat = int(np.searchsorted(self.cdf, rng.random()))
        idx = np.unravel_index(flat, self.grid.points)
        x = np.empty(self.grid.dims)
        offsets = rng.random(self.grid.dims)
        for k in range(self.grid.dims):
            dx = self.grid.spacing[k]
            center = self.grid.coords(k)[idx[k]]
            x[k] = center + (offsets[k] - 0.5) * dx
        return x


# --------------------------------------------------------------------------
# node-crossing diagnostics

class NodeBasinMap:
    """Partition of grid cells into node zones and numbered basins.

    Cells with ``|Psi|^2 < threshold * max|Psi|^2`` form node barriers; the
    connected components of the remaining cells are basins.  A trajectory
    records one crossing whenever consecutive step endpoints belong to two
    different basins.
    """

    def __init__(self, grid: Grid, labels: np.ndarray):
        self.grid = grid
        self.labels = labels

    @classmethod
    def from_wavefield(cls, psi: WaveField, threshold: float) -> "NodeBasinMap":
        rho = np.abs(psi.values) ** 2
        open_cells = rho >= threshold * rho.max()
        structure = ndimage.generate_binary_structure(psi.grid.dims, 1)
        labeled, _ = ndimage.label(open_cells, structure=structure)
        labels = labeled.astype(np.int64) - 1  # node cells -> -1
        # A basin straddling a periodic boundary is one component: merge the
        # labels that touch through each periodic face.
        for axis in range(psi.grid.dims):
            if psi.grid.boundary[axis] != "periodic":
                continue
            first = np.take(labels, 0, axis=axis).ravel()
            last = np.take(labels, -1, axis=axis).ravel()
            for a, b in zip(first, last):
                if a >= 0 and b >= 0 and a != b:
                    labels[labels == max(a, b)] = min(a, b)
        return cls(psi.grid, labels)

    def basins_at(self, x) -> np.ndarray:
        idx = self.grid.cell_index(np.atleast_2d(x))
        return self.labels[tuple(idx[:, k] for k in range(self.grid.dims))]


# --------------------------------------------------------------------------
# drift source built from wave-field snapshots

class SnapshotDrift:
    """Piecewise-constant-in-time drift from an ordered list of snapshots.

    Drift fields (and basin maps, when a node threshold is given) are built
    lazily per snapshot and cached; many trajectory workers may read them
    concurrently once built.
    """

    def __init__(self, snapshots, params: GuidanceParams, node_threshold: float | None = None):
        if isinstance(snapshots, WaveField):
            snapshots = [snapshots]
        snapshots = sorted(snapshots, key=lambda s: s.time)
        if not snapshots:
            raise ValueError("need at least one wave-field snapshot")
        self.snapshots = snapshots
        self.params = params
        self.node_threshold = node_threshold
        self.grid = snapshots[0].grid
        self._drift_cache: dict[int, DriftField] = {}
        self._basin_cache: dict[int, NodeBasinMap] = {}

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def segment_index(self, t: float) -> int:
        """Index of the snapshot governing time t (latest snapshot time <= t)."""
        times = self.times
        i = int(np.searchsorted(times, t + 1e-12, side="right") - 1)
        return min(max(i, 0), len(self.snapshots) - 1)

    def drift(self, i: int) -> DriftField:
        if i not in self._drift_cache:
            self._drift_cache[i] = drift_field(self.snapshots[i], self.params)
        return self._drift_cache[i]

    def basins(self, i: int) -> NodeBasinMap | None:
        if self.node_threshold is None:
            return None
        if i not in self._basin_cache:
            self._basin_cache[i] = NodeBasinMap.from_wavefield(
                self.snapshots[i], self.node_threshold
            )
        return self._basin_cache[i]

    def equilibrium_density(self, i: int = -1) -> DensityField:
        i = i % len(self.snapshots)
        return regularized_density(self.snapshots[i], self.params)


# --------------------------------------------------------------------------
# stop predicates for first-passage runs

@dataclass(frozen=True)
class PlaneCrossing:
    """Stop when the trajectory reaches or crosses the plane x[axis] = at."""

    at: float = 0.0
    axis: int = 0

    def initial_side(self, x0) -> np.ndarray:
        return np.sign(np.atleast_2d(x0)[:, self.axis] - self.at)

    def hit(self, x, side) -> np.ndarray:
        return (np.atleast_2d(x)[:, self.axis] - self.at) * side <= 0


@dataclass(frozen=True)
class RegionEntry:
    """Stop when the trajectory enters the axis-aligned box [lower, upper]."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def initial_side(self, x0) -> np.ndarray:
        return np.zeros(np.atleast_2d(x0).shape[0])

    def hit(self, x, side) -> np.ndarray:
        x = np.atleast_2d(x)
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        return np.all((x >= lower) & (x <= upper), axis=1)


@dataclass(frozen=True)
class FirstPassage:
    stream_id: int
    time: float
    censored: bool


# --------------------------------------------------------------------------
# core stepping kernels

def _drift_evaluator(grid: Grid, vectors: np.ndarray):
    """Batch drift lookup for in-box positions.

    The 1-d specialization removes generic-interpolation overhead from the
    hot loop; its arithmetic mirrors :func:`psiwalk.grids.interpolate`
    operation for operation, so results stay bit-identical.
    """
    if grid.dims != 1:
        return lambda x: interpolate(grid, vectors, x)
    v = vectors[:, 0]
    lo, hi = grid.extent[0]
    n = grid.points[0]
    dx = (hi - lo) / n
    periodic = grid.boundary[0] == "periodic"

    def at(x):
        col = x[:, 0]
        if periodic:
            f = (col - lo) / dx
        else:
            f = np.clip((col - lo) / dx - 0.5, 0.0, n - 1.0)
        r = np.round(f)
        f = np.where(np.abs(f - r) <= 1e-9, r, f)
        if periodic:
            base = np.floor(f)
            i0 = base.astype(np.int64) % n
            i1 = (i0 + 1) % n
        else:
            base = np.minimum(np.floor(f), n - 2)
            i0 = base.astype(np.int64)
            i1 = i0 + 1
        frac = f - base
        return (v[i0] * (1.0 - frac) + v[i1] * frac)[:, None]

    return at


def _cap_vectors(v: np.ndarray, cap: float | None) -> np.ndarray:
    if cap is None:
        return v
    mag = np.sqrt(np.sum(v**2, axis=-1, keepdims=True))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > cap, cap / mag, 1.0)
    return v * scale


def _advance_block(positions, t, dt, noise, drift_vecs_at, grid, sigma, cap,
                   basin_map, basin_prev, crossings, stream_ids):
    """Advance a batch through noise.shape[1] steps; returns (positions, t)."""
    for s in range(noise.shape[1]):
        v = _cap_vectors(drift_vecs_at(positions), cap)
        positions = positions + (v * dt + sigma * noise[:, s, :])
        if not np.all(np.isfinite(positions)):
            bad = int(np.argwhere(~np.isfinite(positions).all(axis=1))[0, 0])
            raise IntegratorFailure(positions[bad], t + dt, stream_ids[bad])
        positions = grid.fold(positions)
        t = t + dt
        if basin_map is not None:
            b = basin_map.basins_at(positions)
            moved = (b >= 0) & (basin_prev >= 0) & (b != basin_prev)
            crossings += moved
            np.copyto(basin_prev, b, where=b >= 0)
    return positions, t


def step_em(state: TrajectoryState, drift_source, params: GuidanceParams, dt_L: float,
            grid: Grid | None = None, basin_map: NodeBasinMap | None = None) -> TrajectoryState:
    """One Euler-Maruyama step of a single trajectory.

    ``drift_source`` is a DriftField (grid implied) or a callable
    ``f(x, t) -> vector`` with ``grid`` passed explicitly.  The state's
    generator is advanced and carried into the returned state.
    """
    if dt_L <= 0:
        raise ValueError("dt_L must be positive")
    if isinstance(drift_source, DriftField):
        grid = drift_source.grid
        v = drift_source.at(state.x)
    else:
        if grid is None:
            raise ValueError("grid is required with a callable drift source")
        v = np.asarray(drift_source(state.x, state.t), dtype=float)
    v = _cap_vectors(v, params.drift_cap)
    rng = state.generator()
    eta = rng.standard_normal(grid.dims)
    sigma = np.sqrt(2.0 * params.lam * dt_L)
    x_new = state.x + (v * dt_L + sigma * eta)
    if not np.all(np.isfinite(x_new)):
        raise IntegratorFailure(state.x, state.t + dt_L, state.noise.stream_id)
    x_new = grid.fold(x_new)[0]
    crossings = state.crossings
    if basin_map is not None:
        b_old = basin_map.basins_at(state.x)[0]
        b_new = basin_map.basins_at(x_new)[0]
        if b_old >= 0 and b_new >= 0 and b_old != b_new:
            crossings += 1
    return TrajectoryState(x=x_new, t=state.t + dt_L, noise=state.noise,
                           crossings=crossings, rng=rng)


# --------------------------------------------------------------------------
# ensemble results

@dataclass
class EnsembleResult:
    """Per-trajectory outcomes plus the normalized final-position histogram."""

    final_positions: np.ndarray
    histogram: DensityField | None
    crossings: np.ndarray
    first_passage: list[FirstPassage] | None
    checkpoints: list[tuple[float, np.ndarray]]
    paths: np.ndarray | None
    path_times: np.ndarray | None
    metadata: dict


def _plan_segments(source: SnapshotDrift, t0: float, t_final: float, dt: float):
    """Split [t0, t_final] at snapshot times; each part uses one drift field."""
    bounds = [t0]
    for ts in source.times:
        if t0 + 1e-12 < ts < t_final - 1e-12:
            bounds.append(float(ts))
    bounds.append(t_final)
    segments = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        steps = int(round((b - a) / dt))
        if abs(steps * dt - (b - a)) > 1e-9 * max(1.0, abs(b - a)) or (b > a and steps == 0):
            raise ValueError(
                f"dt_L={dt} does not divide the interval [{a}, {b}] between snapshots"
            )
        if steps:
            segments.append((a, steps, source.segment_index(a)))
    return segments


def _run_chunk(stream_ids, master_seed, sampler, source: SnapshotDrift, dt: float,
               t0: float, t_final: float, checkpoint_times, record_stride):
    params = source.params
    grid = source.grid
    rngs = [substream(master_seed, sid) for sid in stream_ids]
    positions = np.stack([sampler.sample(r) for r in rngs])
    m = len(stream_ids)
    sigma = np.sqrt(2.0 * params.lam * dt)
    crossings = np.zeros(m, dtype=np.int64)
    basin_prev = np.full(m, -1, dtype=np.int64)

    checkpoint_steps = {int(round((tc - t0) / dt)): tc for tc in checkpoint_times}
    captured = {}
    if 0 in checkpoint_steps:
        captured[checkpoint_steps[0]] = positions.copy()

    path_rows = []
    if record_stride:
        path_rows.append(positions.copy())

    segments = _plan_segments(source, t0, t_final, dt)
    t = t0
    global_step = 0
    for seg_start, steps, snap_i in segments:
        dfield = source.drift(snap_i)
        bmap = source.basins(snap_i)
        if bmap is not None:
            b = bmap.basins_at(positions)
            np.copyto(basin_prev, b, where=b >= 0)
        drift_vecs_at = _drift_evaluator(grid, dfield.vectors)

        done = 0
        while done < steps:
            blk = min(_NOISE_BLOCK, steps - done)
            # Fixed per-trajectory consumption order: blk steps x dims draws.
            noise = np.stack([r.standard_normal((blk, grid.dims)) for r in rngs])
            if record_stride or checkpoint_steps:
                for s in range(blk):
                    positions, t = _advance_block(
                        positions, t, dt, noise[:, s : s + 1, :], drift_vecs_at,
                        grid, sigma, params.drift_cap, bmap, basin_prev,
                        crossings, stream_ids,
                    )
                    global_step += 1
                    if global_step in checkpoint_steps:
                        captured[checkpoint_steps[global_step]] = positions.copy()
                    if record_stride and global_step % record_stride == 0:
                        path_rows.append(positions.copy())
            else:
                positions, t = _advance_block(
                    positions, t, dt, noise, drift_vecs_at, grid, sigma,
                    params.drift_cap, bmap, basin_prev, crossings, stream_ids,
                )
                global_step += blk
            done += blk

    paths = np.stack(path_rows, axis=1) if path_rows else None
    return positions, crossings, captured, paths


def run_ensemble(
    n: int,
    sampler,
    psi_snapshots,
    params: GuidanceParams,
    dt_L: float,
    t_final: float,
    histogram_grid: Grid | None = None,
    master_seed: int = 0,
    workers: int = 1,
    node_threshold: float | None = None,
    checkpoint_times=(),
    record_stride: int | None = None,
) -> EnsembleResult:
    """Run ``n`` independent trajectories with stream ids 0..n-1.

    The final-position histogram is normalized on ``histogram_grid`` (the
    field grid when omitted).  ``checkpoint_times`` capture full position
    snapshots at step-aligned times; ``record_stride`` keeps every k-th step
    of every trajectory (memory permitting).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    source = psi_snapshots if isinstance(psi_snapshots, SnapshotDrift) else SnapshotDrift(
        psi_snapshots, params, node_threshold
    )
    t0 = float(source.times[0])
    if t_final < t0:
        raise ValueError(f"t_final={t_final} precedes the first snapshot time {t0}")
    for tc in checkpoint_times:
        if not t0 <= tc <= t_final:
            raise ValueError(f"checkpoint time {tc} outside [{t0}, {t_final}]")
        steps_to = (tc - t0) / dt_L
        if abs(steps_to - round(steps_to)) > 1e-6:
            raise ValueError(f"checkpoint time {tc} is not aligned to dt_L={dt_L}")

    chunk_ids = [list(range(a, min(a + _CHUNK, n))) for a in range(0, n, _CHUNK)]

    def work(ids):
        return _run_chunk(ids, master_seed, sampler, source, dt_L, t0, t_final,
                          checkpoint_times, record_stride)

    if workers > 1 and len(chunk_ids) > 1:
        # Materialize shared caches before threading so reads are concurrent.
        for _, _, snap_i in _plan_segments(source, t0, t_final, dt_L):
            source.drift(snap_i)
            source.basins(snap_i)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, chunk_ids))
    else:
        results = [work(ids) for ids in chunk_ids]

    final_positions = np.concatenate([r[0] for r in results])
    crossings = np.concatenate([r[1] for r in results])
    checkpoints = [
        (tc, np.concatenate([r[2][tc] for r in results]))
        for tc in checkpoint_times
    ]
    paths = None
    path_times = None
    if record_stride:
        paths = np.concatenate([r[3] for r in results])
        path_times = t0 + dt_L * record_stride * np.arange(paths.shape[1])

    from .analysis import histogram as _histogram

    hist = _histogram(final_positions, histogram_grid if histogram_grid is not None else source.grid)
    metadata = {
        "n": n,
        "lam": params.lam,
        "epsilon": params.epsilon,
        "dt_L": dt_L,
        "t_final": t_final,
        "steps": int(round((t_final - t0) / dt_L)),
        "master_seed": master_seed,
    }
    return EnsembleResult(
        final_positions=final_positions,
        histogram=hist,
        crossings=crossings,
        first_passage=None,
        checkpoints=checkpoints,
        paths=paths,
        path_times=path_times,
        metadata=metadata,
    )


def simulate_trajectory(
    initial: TrajectoryState,
    psi_snapshots,
    params: GuidanceParams,
    dt_L: float,
    t_final: float,
    record_stride: int | None = None,
    node_threshold: float | None = None,
):
    """Integrate a single trajectory against bracketing snapshots.

    Returns the final state, or ``(state, times, path)`` when a record
    stride is given.  Identical NoiseSpec means bit-identical paths.
    """
    source = SnapshotDrift(psi_snapshots, params, node_threshold)
    if t_final < initial.t:
        raise ValueError("t_final must be >= the initial time")
    if t_final > float(source.times[-1]) and len(source.snapshots) > 1:
        raise ValueError("t_final exceeds the last snapshot time")
    if t_final == initial.t:
        return initial if record_stride is None else (initial, np.array([initial.t]),
                                                      initial.x[None, :].copy())

    class _OneShot:
        def __init__(self, x):
            self.x = np.atleast_1d(np.asarray(x, dtype=float))

        def sample(self, rng):
            return self.x.copy()

    ids = [initial.noise.stream_id]
    positions, crossings, _, paths = _run_chunk(
        ids, initial.noise.master_seed, _OneShot(initial.x), source, dt_L,
        initial.t, t_final, (), record_stride,
    )
    state = TrajectoryState(
        x=positions[0], t=t_final, noise=initial.noise,
        crossings=initial.crossings + int(crossings[0]),
    )
    if record_stride is None:
        return state
    times = initial.t + dt_L * record_stride * np.arange(paths.shape[1])
    return state, times, paths[0]


def first_passage_time(
    initial: TrajectoryState,
    psi: WaveField,
    params: GuidanceParams,
    dt_L: float,
    stop,
    t_max: float,
) -> FirstPassage:
    """First time the stop predicate holds, censored at ``t_max``."""
    results = run_first_passage_ensemble(
        1, initial.x, psi, params, dt_L, stop, t_max,
        master_seed=initial.noise.master_seed,
        first_stream=initial.noise.stream_id,
        t0=initial.t,
    )
    return results[0]


def run_first_passage_ensemble(
    n: int,
    x0,
    psi: WaveField,
    params: GuidanceParams,
    dt_L: float,
    stop,
    t_max: float,
    master_seed: int = 0,
    workers: int = 1,
    first_stream: int = 0,
    t0: float = 0.0,
) -> list[FirstPassage]:
    """First-passage times of ``n`` walkers started at ``x0`` on a static field."""
    if n < 1:
        raise ValueError("n must be >= 1")
    dfield = drift_field(psi, params)
    grid = dfield.grid
    drift_vecs_at = _drift_evaluator(grid, dfield.vectors)
    sigma = np.sqrt(2.0 * params.lam * dt_L)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def work(ids):
        m = len(ids)
        rngs = [substream(master_seed, sid) for sid in ids]
        positions = np.tile(x0, (m, 1))
        side = stop.initial_side(positions)
        times = np.full(m, np.nan)
        alive = ~stop.hit(positions, side)
        times[~alive] = t0
        t = t0
        max_steps = int(np.ceil((t_max - t0) / dt_L - 1e-12))
        step = 0
        while np.any(alive) and step < max_steps:
            blk = min(_NOISE_BLOCK, max_steps - step)
            idx_alive = np.flatnonzero(alive)
            noise = np.stack([rngs[i].standard_normal((blk, grid.dims)) for i in idx_alive])
            pos = positions[idx_alive]
            sd = side[idx_alive]
            done_local = np.zeros(len(idx_alive), dtype=bool)
            t_local = np.full(len(idx_alive), np.nan)
            for s in range(blk):
                act = ~done_local
                if not np.any(act):
                    break
                v = _cap_vectors(drift_vecs_at(pos[act]), params.drift_cap)
                pos[act] = grid.fold(pos[act] + (v * dt_L + sigma * noise[act, s, :]))
                hit = np.zeros(len(idx_alive), dtype=bool)
                hit[act] = stop.hit(pos[act], sd[act])
                t_local[hit & ~done_local] = t + (step + s + 1) * dt_L
                done_local |= hit
            positions[idx_alive] = pos
            times[idx_alive[done_local]] = t_local[done_local]
            alive[idx_alive[done_local]] = False
            step += blk
        return times

    ids_all = list(range(first_stream, first_stream + n))
    chunk_ids = [ids_all[a : a + _CHUNK] for a in range(0, n, _CHUNK)]
    if workers > 1 and len(chunk_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, chunk_ids))
    else:
        parts = [work(ids) for ids in chunk_ids]
    times = np.concatenate(parts)
    out = []
    for i, sid in enumerate(ids_all):
        censored = bool(np.isnan(times[i]))
        out.append(FirstPassage(stream_id=sid, time=t_max if censored else float(times[i]),
                                censored=censored))
    return out
