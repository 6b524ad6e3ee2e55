import numpy as np
import pytest

from psiwalk import (
    DensityField,
    DoubleGaussianParams,
    FPOperator,
    Grid,
    GuidanceParams,
    PointSampler,
    StepSizeError,
    WaveField,
    fp_evolve,
    fp_step,
    fp_step_implicit,
    make_double_gaussian,
    run_ensemble,
    total_variation,
)
from psiwalk.analysis import coarsen
from psiwalk.guidance import regularized_density


def double_well_setup(b=1.0, n=256, half=8.0):
    g = Grid.make(n, (-half, half), "reflecting")
    psi = make_double_gaussian(g, DoubleGaussianParams(a=1.0, b=b))
    params = GuidanceParams(lam=1.0)
    op = FPOperator.from_wavefield(psi, params)
    eq = regularized_density(psi, params).normalized()
    return g, psi, params, op, eq


def test_equilibrium_is_discrete_fixed_point():
    g, psi, params, op, eq = double_well_setup()
    p = eq
    for _ in range(50):
        p = fp_step(p, op, 0.5 * op.stable_dt())
    assert np.max(np.abs(p.values - eq.values)) < 1e-12
    assert op.flux_max(eq.values) < 1e-12


def test_equilibrium_fixed_point_implicit():
    g, psi, params, op, eq = double_well_setup()
    p = eq
    for _ in range(20):
        p = fp_step_implicit(p, op, 0.05)
    assert np.max(np.abs(p.values - eq.values)) < 1e-10


def test_uniform_density_zero_drift_unchanged():
    g = Grid.make(64, (0.0, 4.0), "reflecting")
    op = FPOperator.from_log_density(g, np.zeros(64), lam=1.0)
    p = DensityField(g, np.full(64, 0.25))
    p2 = fp_step(p, op, 0.5 * op.stable_dt())
    assert np.array_equal(p2.values, p.values)


def test_mass_conserved_each_step():
    g, psi, params, op, eq = double_well_setup()
    rng = np.random.default_rng(3)
    values = rng.random(256)
    p = DensityField(g, values / (values.sum() * g.cell_volume))
    dt = 0.9 * op.stable_dt()
    for _ in range(200):
        p_next = fp_step(p, op, dt)
        assert abs(p_next.total() - p.total()) < 1e-12
        assert p_next.values.min() >= 0.0
        p = p_next


def test_mass_conserved_implicit():
    g, psi, params, op, eq = double_well_setup()
    p = DensityField(g, np.where(np.abs(g.coords(0) + 1.0) < 0.5, 1.0, 0.0))
    p = p.normalized()
    for _ in range(50):
        p_next = fp_step_implicit(p, op, 0.1)
        assert abs(p_next.total() - p.total()) < 1e-12
        assert p_next.values.min() >= 0.0
        p = p_next


def test_free_diffusion_variance_growth():
    g = Grid.make(512, (-16.0, 16.0), "reflecting")
    lam = 1.0
    op = FPOperator.from_log_density(g, np.zeros(512), lam=lam)
    x = g.coords(0)
    values = np.zeros(512)
    values[256] = 1.0 / g.cell_volume
    p = DensityField(g, values)
    dt = 0.9 * op.stable_dt()
    steps = int(round(1.0 / dt))
    for _ in range(steps):
        p = fp_step(p, op, dt)
    t = steps * dt
    mean = np.sum(x * p.values) * g.cell_volume
    var = np.sum((x - mean) ** 2 * p.values) * g.cell_volume
    var0 = 0.0  # started as a single-cell spike
    assert (var - var0) == pytest.approx(2 * lam * t, rel=0.02)


def test_explicit_step_rejects_unstable_dt():
    g, psi, params, op, eq = double_well_setup()
    bound = op.stable_dt()
    with pytest.raises(StepSizeError) as err:
        fp_step(eq, op, 10.0 * bound)
    assert err.value.suggested_dt < bound
    # the suggested dt is accepted
    fp_step(eq, op, err.value.suggested_dt)


def test_implicit_stable_beyond_explicit_bound():
    g, psi, params, op, eq = double_well_setup()
    p = DensityField(g, np.where(g.coords(0) < 0, 1.0, 0.0)).normalized()
    p = fp_step_implicit(p, op, 50.0 * op.stable_dt())
    assert p.values.min() >= 0.0
    assert abs(p.total() - 1.0) < 1e-9


def test_relaxation_to_equilibrium_monotone():
    g, psi, params, op, eq = double_well_setup(b=1.0)
    x = g.coords(0)
    start = np.where(np.abs(x + 1.0) < 0.4, 1.0, 0.0)
    p = DensityField(g, start).normalized()
    dt = 0.9 * op.stable_dt()
    tvs = []
    for block in range(40):
        for _ in range(100):
            p = fp_step(p, op, dt)
        tvs.append(total_variation(p.normalized(), eq))
    assert all(a >= b - 1e-12 for a, b in zip(tvs[:-1], tvs[1:]))
    assert tvs[-1] < 0.01


def test_static_equilibrium_sequence_constant():
    g, psi, params, op, eq = double_well_setup()
    seq = fp_evolve(eq, psi, params, 0.5 * op.stable_dt(), 20 * op.stable_dt())
    assert np.max(np.abs(seq[-1].values - eq.values)) < 1e-12


def test_fp_evolve_matches_langevin_histogram():
    # the two discretizations of the same process agree in distribution
    g = Grid.make(256, (-8.0, 8.0), "periodic")
    x = g.coords(0)
    psi = WaveField(g, np.exp(-x**2 / 2))
    params = GuidanceParams(lam=1.0)
    t_final = 1.0
    res = run_ensemble(
        20_000, PointSampler([1.5]), psi, params, 2e-3, t_final, master_seed=77
    )
    start = np.zeros(256)
    start[g.cell_index(np.array([1.5]))[0, 0]] = 1.0 / g.cell_volume
    p = DensityField(g, start)
    dens = fp_evolve(p, psi, params, 2e-3, t_final, method="auto")[-1]
    tv = total_variation(coarsen(res.histogram, 4), coarsen(dens, 4).normalized())
    assert tv < 0.05


def test_central_scheme_available():
    g, psi, params, op, eq = double_well_setup()
    op_c = FPOperator.from_wavefield(psi, params, scheme="central")
    p = fp_step(eq, op_c, 0.5 * op_c.stable_dt())
    # second-order but not equilibrium-exact: small but nonzero residual
    assert np.max(np.abs(p.values - eq.values)) > 0
    assert abs(p.total() - eq.total()) < 1e-12


def test_operator_grid_mismatch_rejected():
    g, psi, params, op, eq = double_well_setup()
    other = Grid.make(64, (0.0, 1.0), "reflecting")
    p = DensityField(other, np.ones(64)).normalized()
    with pytest.raises(ValueError):
        fp_step(p, op, 1e-4)


def test_periodic_implicit_conserves_and_relaxes():
    g = Grid.make(128, (-6.0, 6.0), "periodic")
    x = g.coords(0)
    psi = WaveField(g, np.exp(-x**2 / 2))
    params = GuidanceParams(lam=5.0)
    eq = regularized_density(psi, params).normalized()
    p = DensityField(g, np.where(np.abs(x - 2.0) < 0.5, 1.0, 0.0)).normalized()
    for _ in range(400):
        p = fp_step_implicit(p, FPOperator.from_wavefield(psi, params), 5e-3)
    assert abs(p.total() - 1.0) < 1e-9
    assert total_variation(p.normalized(), eq) < 0.01


def test_2d_equilibrium_and_mass():
    g = Grid.make((32, 24), [(-5.0, 5.0), (-4.0, 4.0)], "reflecting")
    xs, ys = g.meshgrid()
    psi = WaveField(g, np.exp(-(xs**2) / 2 - (ys**2) / 4))
    params = GuidanceParams(lam=1.0)
    op = FPOperator.from_wavefield(psi, params)
    eq = regularized_density(psi, params).normalized()
    p = eq
    for _ in range(20):
        p = fp_step(p, op, 0.9 * op.stable_dt())
    assert np.max(np.abs(p.values - eq.values)) < 1e-12
    p = eq
    for _ in range(5):
        p = fp_step_implicit(p, op, 0.05)
    assert np.max(np.abs(p.values - eq.values)) < 1e-10
    assert abs(p.total() - 1.0) < 1e-12
