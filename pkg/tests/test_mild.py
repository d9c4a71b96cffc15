import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinfilm import mild
from thinfilm import nonlinearity as nl
from thinfilm.grid import Grid, ScalarField, lp_norm


def box(N=1, L=40.0, n=256):
    return Grid.cube(N, L, n, "periodic", centered=True)


def test_requires_periodic_grid():
    g = Grid.cube(1, 40.0, 64, "neumann")
    with pytest.raises(ValueError):
        mild.heat_propagate(ScalarField(g, np.zeros(g.shape)), 1.0)


def test_single_mode_decay():
    g = box(2, 2 * math.pi * 16, 64)
    X, Y = g.mesh()
    k = (3 / 16, 2 / 16)
    u0 = ScalarField(g, np.cos(k[0] * X + k[1] * Y))
    t = 2.0
    out = mild.heat_propagate(u0, t).values
    expected = math.exp(-((k[0] ** 2 + k[1] ** 2) ** 2) * t) * u0.values
    assert np.max(np.abs(out - expected)) <= 1e-12 * np.max(np.abs(expected))


def test_zero_time_returns_data():
    g = box()
    u0 = ScalarField(g, np.exp(-g.axis(0) ** 2))
    assert mild.heat_propagate(u0, 0.0) is u0


@pytest.mark.parametrize("N,L,n,t", [(1, 64.0, 512, 1.0), (2, 64.0, 128, 0.5)])
def test_spectral_and_direct_convolution_agree(N, L, n, t):
    g = box(N, L, n)
    r2 = sum(m * m for m in g.mesh())
    u0 = ScalarField(g, np.exp(-r2))
    a = mild.heat_propagate(u0, t).values
    b = mild.heat_propagate_direct(u0, t).values
    assert np.max(np.abs(a - b)) < 1e-9


def test_wrap_around_is_detected():
    g = box(1, 10.0, 64)
    u0 = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(mild.WrapAroundError, match="box side"):
        mild.heat_propagate(u0, 10.0)
    mild.heat_propagate(u0, 10.0, check=False)
    assert mild.wrap_mass(g, 1e-4) < mild.WRAP_TOL


def test_young_inequality():
    g = box(1, 40.0, 256)
    rng = np.random.default_rng(0)
    f = ScalarField(g, rng.standard_normal(g.shape) * np.exp(-g.axis(0) ** 2 / 20))
    for q in (1.0, 2.0, math.inf):
        lhs, rhs = mild.young_check(f, 0.1, q)
        assert lhs <= rhs * (1 + 1e-9)


def test_claim_gap_shrinks_with_time():
    g = box(1, 40.0, 512)
    u0 = ScalarField(g, np.exp(-g.axis(0) ** 2))
    gaps = [mild.claim_gap(u0, t) for t in (1e-2, 1e-3, 1e-4)]
    assert gaps[0] > gaps[1] > gaps[2]


def mode_history(g, T, k=0.5, amp=1.0, linear=False, M=9):
    x = g.axis(0)
    times = np.linspace(0, T, M)
    vals = np.stack([(s if linear else 1.0) * amp * np.sin(k * x)[None] for s in times])
    return mild.FluxHistory(g, times, vals)


def test_duhamel_single_mode_constant_in_time():
    g = box(1, 8 * math.pi, 128)
    k, t = 0.5, 3.0
    mu = k**4
    v1 = mild.duhamel_increment(mode_history(g, t, k), t).values
    expected = k * (1 - math.exp(-mu * t)) / mu * np.cos(k * g.axis(0))
    assert np.max(np.abs(v1 - expected)) < 1e-12


def test_duhamel_single_mode_linear_in_time():
    g = box(1, 8 * math.pi, 128)
    k, t = 0.75, 2.0
    mu = k**4
    v1 = mild.duhamel_increment(mode_history(g, t, k, linear=True), t).values
    coeff = k * (t / mu - (1 - math.exp(-mu * t)) / mu**2)
    assert np.max(np.abs(v1 - coeff * np.cos(k * g.axis(0)))) < 1e-12


def test_duhamel_methods_agree():
    g = box(1, 40.0, 256)
    x = g.axis(0)
    # one linear piece in time keeps the Gauss rule free of kinks
    times = np.array([0.0, 1.0])
    vals = np.stack([np.tanh(x / 2 - s)[None] * (1 + s) for s in times])
    hist = mild.FluxHistory(g, times, vals)
    a = mild.duhamel_increment(hist, 1.0).values
    b = mild.duhamel_increment(hist, 1.0, method="gauss", quad_points=64, tol=1e-6).values
    assert np.max(np.abs(a - b)) < 1e-5 * np.max(np.abs(a))


def test_duhamel_gauss_reports_residual():
    g = box(1, 40.0, 256)
    x = g.axis(0)
    hist = mild.FluxHistory(g, np.array([0.0, 1.0]), np.stack([np.sign(x)[None]] * 2))
    with pytest.raises(mild.DuhamelQuadratureError) as info:
        mild.duhamel_increment(hist, 1.0, method="gauss", quad_points=4, tol=1e-14)
    assert info.value.residual > 1e-14


def test_duhamel_constant_field_gives_zero():
    g = box(2, 20.0, 32)
    hist = mild.FluxHistory.constant(np.stack([np.full(g.shape, 2.0), np.full(g.shape, -1.0)]), g, 1.0)
    assert np.max(np.abs(mild.duhamel_increment(hist, 1.0).values)) < 1e-10
    assert mild.duhamel_constant(hist, [0.5, 1.0]) < 1e-10


def test_duhamel_constant_below_bound():
    g = box(1, 80.0, 1024)
    x = g.axis(0)
    hist = mild.FluxHistory.constant(np.tanh(4 * x)[None], g, 4.0)
    c = mild.duhamel_constant(hist, np.geomspace(0.01, 4.0, 6))
    assert 0 < c <= mild.duhamel_constant_bound(1)


def test_flux_history_validation():
    g = box()
    with pytest.raises(ValueError):
        mild.FluxHistory(g, np.array([0.0, 0.0]), np.zeros((2, 1) + g.shape))
    with pytest.raises(ValueError):
        mild.FluxHistory(g, np.array([0.0, 1.0]), np.zeros((2, 2) + g.shape))
    hist = mode_history(g, 1.0, linear=True)
    assert np.allclose(hist.at([0.5])[0], 0.5 * hist.values[-1])


def test_chebyshev_times():
    t = mild.chebyshev_times(2.0, 9)
    assert t[0] == 0.0 and t[-1] == 2.0 and np.all(np.diff(t) > 0)
    with pytest.raises(ValueError):
        mild.chebyshev_times(1.0, 1)


def bump_data(N=1, L=40.0, n=512, amp=1.0):
    g = box(N, L, n)
    r2 = sum(m * m for m in g.mesh())
    return ScalarField(g, amp * np.exp(-r2))


def test_picard_zero_flux_is_semigroup():
    u0 = bump_data()
    run = mild.picard_solve(u0, nl.zero(), 0.1)
    assert run.converged
    assert np.allclose(run.final.values, mild.heat_propagate(u0, 0.1).values, atol=1e-14)


def test_picard_fixed_point_satisfies_mild_equation():
    u0 = bump_data(amp=0.5)
    spec = nl.cubic(1.0)
    T = 0.05
    run = mild.picard_solve(u0, spec, T, config=mild.PicardConfig(samples=33, tol=1e-12))
    assert run.converged
    sp = u0.grid.spectral
    flux = np.stack([spec.g(sp.gradient(w)) for w in run.history])
    hist = mild.FluxHistory(u0.grid, run.times, flux)
    rhs = mild.heat_propagate(u0, T).values + mild.duhamel_increment(hist, T).values
    assert np.max(np.abs(run.final.values - rhs)) < 1e-10
    d = [s.d for s in run.states[1:]]
    assert d[-1] < d[0]


def test_picard_monitors():
    u0 = bump_data(amp=0.2)
    run = mild.picard_solve(u0, nl.power(2.5), 0.01, alpha=2.5)
    s = run.states[-1]
    assert s.a >= s.grad_sup[-1]
    assert math.isfinite(s.b) and s.b > 0
    assert run.contraction_ratio() < 1
    assert len(run.d_ratios()) == len(run.states) - 2


def test_picard_stall_raises():
    u0 = bump_data(amp=30.0, n=256)
    with pytest.raises(mild.PicardError) as info:
        mild.picard_solve(u0, nl.cubic(1.0), 0.2, config=mild.PicardConfig(samples=9, stall=2, max_iter=40))
    assert len(info.value.states) >= 2


def test_picard_windows_chain():
    u0 = bump_data(amp=0.3)
    runs = mild.picard_windows(u0, nl.cubic(1.0), 0.01, 2)
    assert len(runs) == 2 and runs[1].t_offset == 0.01
    assert runs[1].u0 is runs[0].final


def test_truncation_scans_agree():
    u0 = bump_data(amp=0.5)
    sp = u0.grid.spectral
    h = nl.truncate_to_h(nl.cubic(1.0), sp.gradient(u0.values))
    run = mild.picard_solve(u0, h, 0.2)
    assert mild.truncation_consistency(run, nl.cubic(1.0), u0) == mild.clamp_scan(run)
    with pytest.raises(ValueError):
        mild.clamp_scan(mild.picard_solve(u0, nl.zero(), 0.1))


def test_smallness_example():
    res = mild.smallness_check(0.1, 2.5, lambda_hat=1.0)
    assert res.holds
    assert res.bound == pytest.approx(0.1 / (1 - 0.2**1.5), rel=1e-14)
    assert not mild.smallness_check(2.0, 2.5).holds
    with pytest.raises(ValueError):
        mild.smallness_check(0.1, 3.5)


def test_lambda_hat_positive():
    assert mild.lambda_hat(2, 2.5) > 0
    with pytest.raises(ValueError):
        mild.lambda_hat(2, 1.5)


@pytest.mark.parametrize("N,p,rate", [(1, 1, -0.5), (1, math.inf, -0.25), (2, 2, -0.5), (3, 1, -1.0)])
def test_decay_rate(N, p, rate):
    assert mild.decay_rate(N, p) == rate


def test_radial_deficit_closed_form():
    # N = 2, s = 1: ∫ (1 - ρ/√(ρ²+1)) dρ = 1
    assert mild._radial_deficit(2, 1.0) == pytest.approx(1.0, rel=1e-9)


def test_homogeneous_datum_shapes():
    g = box(1, 200.0, 2048)
    gauss = mild.homogeneous_datum(g, 1, 0.5)
    assert lp_norm(gauss, 1) == pytest.approx(1.0, rel=1e-10)
    top = mild.homogeneous_datum(g, math.inf, 0.2, 20.0)
    assert top.values.max() == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        mild.homogeneous_datum(g, 2, 0.5)


def test_decay_fit_point_mass():
    g = box(1, 512.0, 8192)
    fit = mild.decay_exponent_fit(mild.homogeneous_datum(g, 1, 0.5), 1, (16.0, 256.0))
    assert fit.relative_error < 0.05
    with pytest.raises(ValueError):
        mild.decay_exponent_fit(mild.homogeneous_datum(g, 1, 0.5), 1, (16.0, 256.0), samples=3)


@settings(max_examples=20, deadline=None)
@given(k=st.integers(1, 6), t=st.floats(0.01, 5.0))
def test_semigroup_property(k, t):
    g = box(1, 8 * math.pi, 64)
    x = g.axis(0)
    u0 = ScalarField(g, np.cos(k * x / 4) + 0.3 * np.sin(2 * k * x / 4))
    once = mild.heat_propagate(u0, 2 * t, check=False).values
    twice = mild.heat_propagate(mild.heat_propagate(u0, t, check=False), t, check=False).values
    assert np.allclose(once, twice, atol=1e-13)
