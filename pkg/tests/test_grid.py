import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinfilm import nonlinearity as nl
from thinfilm.grid import (
    Grid,
    ScalarField,
    VectorField,
    coefficient_energy,
    divergence,
    energy,
    gradient,
    helmholtz_solve,
    hessian,
    laplacian,
    load_field_csv,
    load_field_raw,
    lp_norm,
    lyapunov_energy,
    mean_value,
    neumann_poisson_solve,
    save_field_csv,
    save_field_raw,
)

from oracles import periodic_fd4

GRIDS = [
    Grid.cube(1, 2.0, 64, "periodic"),
    Grid.cube(2, 3.0, 32, "periodic"),
    Grid.cube(1, 2.0, 64, "neumann"),
    Grid.cube(2, 3.0, 32, "neumann"),
    Grid((1.0, 2.0, 1.5), (8, 16, 12), "neumann"),
]


def band_limited(grid, rng, kmax=4):
    """Sum of low basis modes with random coefficients."""
    sp = grid.spectral
    c = np.zeros(sp.lam.shape, dtype=complex if sp.periodic else float)
    lowest = math.pi / max(grid.extents)
    mask = sp.lam <= (kmax * 2 * lowest) ** 2
    c[mask] = rng.standard_normal(np.count_nonzero(mask))
    if sp.periodic:
        c[mask] += 1j * rng.standard_normal(np.count_nonzero(mask))
    return ScalarField(grid, sp.backward(c))


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid((1.0,), (4,))
    with pytest.raises(ValueError):
        Grid((1.0,) * 4, (8,) * 4)
    with pytest.raises(ValueError):
        Grid((1.0,), (8,), "dirichlet")
    with pytest.raises(ValueError):
        Grid((-1.0,), (8,))
    g = Grid((2.0, 4.0), (8, 16))
    assert g.spacing == (0.25, 0.25)


def test_fields_reject_nonfinite_and_wrong_shape():
    g = GRIDS[0]
    with pytest.raises(ValueError):
        ScalarField(g, np.full(g.shape, np.nan))
    with pytest.raises(ValueError):
        ScalarField(g, np.zeros(10))
    with pytest.raises(ValueError):
        VectorField(g, np.zeros((2,) + g.shape))


@pytest.mark.parametrize("grid", GRIDS)
def test_gradient_of_constant_vanishes(grid):
    v = gradient(ScalarField(grid, np.full(grid.shape, 3.0))).components
    assert np.max(np.abs(v)) < 1e-13


def test_gradient_of_periodic_mode():
    L = 2.0
    g = Grid.cube(1, L, 32, "periodic")
    x = g.axis(0)
    f = ScalarField(g, np.cos(2 * np.pi * x / L))
    expected = -(2 * np.pi / L) * np.sin(2 * np.pi * x / L)
    assert np.max(np.abs(gradient(f).components[0] - expected)) < 1e-13


def test_gradient_of_neumann_mode():
    L = 3.0
    g = Grid.cube(1, L, 32, "neumann")
    x = g.axis(0)
    f = ScalarField(g, np.cos(3 * np.pi * x / L))
    expected = -(3 * np.pi / L) * np.sin(3 * np.pi * x / L)
    assert np.max(np.abs(gradient(f).components[0] - expected)) < 1e-12


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    for n in (64, 128):
        g = Grid.cube(2, 2 * np.pi, n, "periodic")
        X, Y = g.mesh()
        f = np.exp(np.sin(X) + 0.5 * np.cos(Y))
        spec = gradient(ScalarField(g, f)).components
        fd = periodic_fd4(f, g.spacing[0], 0)
        err = np.max(np.abs(spec[0] - fd))
        assert err < 50 * g.spacing[0] ** 4
    del rng


@pytest.mark.parametrize("grid", GRIDS)
def test_adjointness(grid):
    rng = np.random.default_rng(0)
    f = rng.standard_normal(grid.shape)
    v = rng.standard_normal((grid.N,) + grid.shape)
    sp = grid.spectral
    lhs = np.sum(sp.divergence(v) * f)
    rhs = -np.sum(v * sp.gradient(f))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


@pytest.mark.parametrize("grid", GRIDS)
def test_laplacian_is_div_grad(grid):
    # periodic grids: the Nyquist derivative is zeroed while the Laplacian keeps -k²,
    # so the identity is checked on fields without Nyquist content
    rng = np.random.default_rng(1)
    if grid.boundary == "periodic":
        f = band_limited(grid, rng, kmax=8)
    else:
        f = ScalarField(grid, rng.standard_normal(grid.shape))
    a = laplacian(f).values
    b = divergence(gradient(f)).values
    assert np.max(np.abs(a - b)) <= 1e-10 * np.max(np.abs(a))


@pytest.mark.parametrize("grid", GRIDS)
def test_parseval(grid):
    rng = np.random.default_rng(2)
    f = ScalarField(grid, rng.standard_normal(grid.shape))
    assert lp_norm(f, 2) ** 2 == pytest.approx(coefficient_energy(f), rel=1e-10)


@pytest.mark.parametrize("grid", GRIDS)
def test_hessian_trace(grid):
    rng = np.random.default_rng(4)
    f = band_limited(grid, rng)
    H = hessian(f)
    assert np.allclose(np.trace(H), laplacian(f).values, atol=1e-9)
    assert np.allclose(H, np.swapaxes(H, 0, 1), atol=1e-9)


def test_helmholtz_examples():
    g = Grid.cube(2, 2.0, 16, "neumann")
    tau = 0.3
    w = helmholtz_solve(ScalarField(g, np.full(g.shape, 2.0)), tau)
    assert np.allclose(w.values, 2.0 / tau)
    X, Y = g.mesh()
    lam = (np.pi / 2) ** 2 + (2 * np.pi / 2) ** 2
    mode = np.cos(np.pi * X / 2) * np.cos(2 * np.pi * Y / 2)
    w = helmholtz_solve(ScalarField(g, mode), tau)
    assert np.allclose(w.values, mode / (lam + tau), atol=1e-13)
    with pytest.raises(ValueError):
        helmholtz_solve(ScalarField(g, mode), 0.0)


@pytest.mark.parametrize("grid", GRIDS)
def test_helmholtz_roundtrip(grid):
    rng = np.random.default_rng(5)
    rhs = ScalarField(grid, rng.standard_normal(grid.shape))
    tau = 0.7
    w = helmholtz_solve(rhs, tau)
    back = -laplacian(w).values + tau * w.values
    assert np.linalg.norm(back - rhs.values) <= 1e-12 * np.linalg.norm(rhs.values) * 10


def test_neumann_poisson_solve():
    g = Grid.cube(2, 1.0, 16, "neumann")
    rng = np.random.default_rng(6)
    rhs = band_limited(g, rng)
    u = neumann_poisson_solve(rhs)
    assert abs(mean_value(u)) < 1e-12
    assert np.allclose(-laplacian(u).values, rhs.values - mean_value(rhs), atol=1e-10)


def test_lp_norm_examples():
    g = Grid.cube(2, 2.0, 16, "periodic")
    assert lp_norm(ScalarField(g, np.ones(g.shape)), 2) == pytest.approx(math.sqrt(g.volume))
    g1 = Grid.cube(1, 1.0, 64, "periodic")
    c = ScalarField(g1, np.cos(2 * np.pi * g1.axis(0)))
    assert lp_norm(c, math.inf) == pytest.approx(1.0)
    assert lp_norm(c, 4) == pytest.approx((3 / 8) ** 0.25, rel=1e-12)
    with pytest.raises(ValueError):
        lp_norm(c, 0.5)


def test_lp_norm_vector_uses_euclidean_length():
    g = Grid.cube(2, 1.0, 8, "periodic")
    v = VectorField(g, np.stack([np.full(g.shape, 3.0), np.full(g.shape, 4.0)]))
    assert lp_norm(v, math.inf) == pytest.approx(5.0)
    assert lp_norm(v, 2) == pytest.approx(5.0)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-100, 100), seed=st.integers(0, 1000))
def test_mean_value_linear(c, seed):
    g = Grid.cube(2, 1.5, 16, "neumann")
    f = band_limited(g, np.random.default_rng(seed))
    assert mean_value(f + c) == pytest.approx(mean_value(f) + c, abs=1e-10)
    assert mean_value(ScalarField(g, np.full(g.shape, c))) == pytest.approx(c, abs=1e-12)


def test_mean_of_cosine_mode_is_zero():
    g = Grid.cube(2, 1.0, 16, "neumann")
    X, _ = g.mesh()
    assert abs(mean_value(ScalarField(g, np.cos(np.pi * X)))) < 1e-15


def test_energy_examples():
    g = Grid.cube(2, 1.0, 32, "periodic")
    assert energy(ScalarField(g, np.full(g.shape, 2.0)), nl.power(2.5)) == 0.0
    A = 0.3
    X, _ = g.mesh()
    u = ScalarField(g, A * np.cos(2 * np.pi * X))
    expected = 0.5 * A**2 * (2 * np.pi) ** 4 * 0.5 - 0.5 * A**2 * (2 * np.pi) ** 2 * 0.5
    assert energy(u, nl.power(1.0)) == pytest.approx(expected, rel=1e-12)
    lyap = 0.5 * A**2 * (2 * np.pi) ** 4 * 0.5 + 0.5 * A**2 * (2 * np.pi) ** 2 * 0.5
    assert lyapunov_energy(u, nl.power(1.0)) == pytest.approx(lyap, rel=1e-12)


def test_energy_requires_potential():
    g = Grid.cube(1, 1.0, 16, "periodic")
    u = ScalarField(g, np.zeros(g.shape))
    h = nl.truncate_to_h(nl.cubic(), np.zeros((1,) + g.shape))
    with pytest.raises(ValueError):
        energy(u, h)


@pytest.mark.parametrize("grid", [GRIDS[1], GRIDS[4]])
def test_serialization_roundtrip(grid, tmp_path):
    f = band_limited(grid, np.random.default_rng(7))
    save_field_csv(f, tmp_path / "f.csv")
    assert np.array_equal(load_field_csv(tmp_path / "f.csv", grid).values, f.values)
    save_field_raw(f, tmp_path / "f.bin")
    back = load_field_raw(tmp_path / "f.bin")
    assert back.grid == grid
    assert np.array_equal(back.values, f.values)
    assert (tmp_path / "f.bin").stat().st_size == 8 * f.values.size
