import numpy as np
import pytest

from psiwalk import (
    DensityField,
    Grid,
    ScalarField,
    gradient_log,
    integrate,
    interpolate,
)


def test_grid_spacing_and_volume():
    g = Grid.make((100,), (0.0, 1.0), "periodic")
    assert g.spacing == (0.01,)
    assert g.cell_volume == pytest.approx(0.01)
    g2 = Grid.make((16, 32), [(-1.0, 1.0), (0.0, 4.0)], ("periodic", "reflecting"))
    assert g2.spacing == (0.125, 0.125)


@pytest.mark.parametrize(
    "points,extent,boundary",
    [
        ((4,), ((0.0, 1.0),), ("periodic",)),          # too few points
        ((16,), ((1.0, 1.0),), ("periodic",)),          # empty extent
        ((16,), ((0.0, 1.0),), ("absorbing",)),         # unknown boundary
        ((16, 16, 16, 16), ((0.0, 1.0),) * 4, ("periodic",) * 4),  # dims > 3
    ],
)
def test_grid_rejects_bad_construction(points, extent, boundary):
    with pytest.raises(ValueError):
        Grid(points=points, extent=extent, boundary=boundary)


def test_coords_placement():
    gp = Grid.make(8, (0.0, 8.0), "periodic")
    assert np.allclose(gp.coords(0), np.arange(8.0))
    gr = Grid.make(8, (0.0, 8.0), "reflecting")
    assert np.allclose(gr.coords(0), np.arange(8.0) + 0.5)


def test_integrate_constant_exact():
    g = Grid.make(100, (0.0, 1.0), "reflecting")
    f = DensityField(g, np.ones(100))
    assert integrate(f) == pytest.approx(1.0, abs=1e-12)


def test_integrate_gaussian_density():
    # |exp(-x^2/2)|^2 integrates to sqrt(pi)
    g = Grid.make(512, (-10.0, 10.0), "periodic")
    x = g.coords(0)
    f = DensityField(g, np.exp(-(x**2)))
    assert integrate(f) == pytest.approx(np.sqrt(np.pi), abs=1e-6)


def test_integrate_zero_field():
    g = Grid.make(64, (0.0, 2.0), "periodic")
    assert integrate(DensityField(g, np.zeros(64))) == 0.0


def test_density_rejects_negative_and_nonfinite():
    g = Grid.make(16, (0.0, 1.0), "periodic")
    with pytest.raises(ValueError):
        DensityField(g, -np.ones(16))
    bad = np.ones(16)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        ScalarField(g, bad)


def test_normalize_on_demand():
    g = Grid.make(128, (-6.0, 6.0), "reflecting")
    x = g.coords(0)
    f = DensityField(g, 3.7 * np.exp(-(x**2)))
    assert abs(f.normalized().total() - 1.0) < 1e-12


def test_fields_are_immutable():
    g = Grid.make(16, (0.0, 1.0), "periodic")
    f = DensityField(g, np.ones(16))
    with pytest.raises(ValueError):
        f.values[0] = 2.0


def test_gradient_log_gaussian():
    # d/dx ln exp(-x^2) = -2x; the grid spacing puts nodes at 0 and 0.5
    g = Grid.make(192, (-6.0, 6.0), "periodic")
    x = g.coords(0)
    f = DensityField(g, np.exp(-(x**2)))
    grad = gradient_log(f, 1e-300)
    i0 = np.flatnonzero(x == 0.0)[0]
    assert grad[i0, 0] == pytest.approx(0.0, abs=1e-10)
    ihalf = np.flatnonzero(x == 0.5)[0]
    assert grad[ihalf, 0] == pytest.approx(-1.0, abs=2e-3)


def test_gradient_log_zero_field():
    g = Grid.make(32, (0.0, 1.0), "reflecting")
    grad = gradient_log(DensityField(g, np.zeros(32)), 1e-12)
    assert np.all(grad == 0.0)


def test_gradient_log_rejects_bad_epsilon():
    g = Grid.make(32, (0.0, 1.0), "periodic")
    f = DensityField(g, np.ones(32))
    with pytest.raises(ValueError):
        gradient_log(f, 0.0)
    with pytest.raises(ValueError):
        gradient_log(f, -1e-9)


@pytest.mark.parametrize("boundary", ["periodic", "reflecting"])
def test_gradient_log_second_order_convergence(boundary):
    # max-norm error drops ~4x per halving of dx on a smooth non-quadratic log
    errors = []
    for n in (64, 128, 256):
        g = Grid.make(n, (-3.0, 3.0), boundary)
        x = g.coords(0)
        f = DensityField(g, np.exp(np.sin(np.pi * x / 3.0)))
        grad = gradient_log(f, 1e-300)[:, 0]
        exact = (np.pi / 3.0) * np.cos(np.pi * x / 3.0)
        errors.append(np.max(np.abs(grad - exact)))
    assert errors[0] / errors[1] > 3.0
    assert errors[1] / errors[2] > 3.0


def test_interpolate_linear_exact():
    g = Grid.make(10, (0.0, 1.0), "reflecting")
    f = 3.0 * g.coords(0)
    assert interpolate(g, f, np.array([0.37])) == pytest.approx(1.11, abs=1e-12)


def test_interpolate_node_bit_exact():
    g = Grid.make(64, (-2.0, 2.0), "periodic")
    rng = np.random.default_rng(5)
    f = rng.random(64)
    x = g.coords(0)
    for i in (0, 17, 63):
        assert interpolate(g, f, np.array([x[i]])) == f[i]
    gr = Grid.make(64, (-2.0, 2.0), "reflecting")
    xr = gr.coords(0)
    for i in (0, 31, 63):
        assert interpolate(gr, f, np.array([xr[i]])) == f[i]


def test_interpolate_periodic_wrap():
    g = Grid.make(16, (0.0, 16.0), "periodic")
    f = np.sin(2 * np.pi * g.coords(0) / 16.0)
    dx = g.spacing[0]
    inside = interpolate(g, f, np.array([0.1 * dx]))
    wrapped = interpolate(g, f, np.array([16.0 + 0.1 * dx]))
    assert wrapped == pytest.approx(inside, abs=1e-12)


def test_interpolate_batch_and_vector_values():
    g = Grid.make(32, (0.0, 1.0), "periodic")
    vec = np.stack([g.coords(0), 2 * g.coords(0)], axis=-1)
    out = interpolate(g, vec, np.array([[0.25], [0.5]]))
    assert out.shape == (2, 2)
    assert np.allclose(out[:, 1], 2 * out[:, 0])


def test_reflecting_fold():
    g = Grid.make(16, (0.0, 1.0), "reflecting")
    folded = g.fold(np.array([[1.2], [-0.3], [2.6]]))
    assert np.allclose(folded[:, 0], [0.8, 0.3, 0.6])


def test_periodic_fold():
    g = Grid.make(16, (-1.0, 1.0), "periodic")
    folded = g.fold(np.array([[1.5], [-1.25]]))
    assert np.allclose(folded[:, 0], [-0.5, 0.75])
