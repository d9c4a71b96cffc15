import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thinfilm import nonlinearity as nl
from thinfilm import rothe
from thinfilm.grid import Grid, ScalarField, integrate
from thinfilm.rothe import RotheConfig


def neumann_data(N=2, n=24, L=2 * math.pi, amp=0.5, offset=1.0):
    g = Grid.cube(N, L, n, "neumann")
    mesh = g.mesh()
    X = mesh[0]
    u = offset + amp * np.cos(X)
    if N > 1:
        u = u + 0.3 * amp * np.cos(X) * np.cos(2 * mesh[1])
    return ScalarField(g, u)


def test_config_validation():
    with pytest.raises(ValueError):
        RotheConfig(0.0, 4)
    with pytest.raises(ValueError):
        RotheConfig(1.0, 0)
    with pytest.raises(ValueError):
        RotheConfig(1.0, 4, damping=0.1, damping_floor=0.5)
    assert RotheConfig(1.0, 4).tau == 0.25


def test_constant_data_zero_mode():
    g = Grid.cube(2, 1.0, 16, "neumann")
    u0 = ScalarField(g, np.full(g.shape, 2.0))
    tau = 0.1
    step = rothe.rothe_step(u0, nl.cubic(), RotheConfig(1.0, 10))
    # zero mode: (τ² + 1/τ) u = u0/τ
    assert np.allclose(step.u.values, 2.0 / (1 + tau**3), rtol=1e-14)
    assert np.allclose(step.psi.values, tau * step.u.values, rtol=1e-14)


def test_linear_step_multiplier():
    g = Grid.cube(1, math.pi, 32, "neumann")
    x = g.axis(0)
    u0 = ScalarField(g, np.cos(3 * x))
    cfg = RotheConfig(0.2, 4)
    tau = cfg.tau
    step = rothe.rothe_step(u0, nl.zero(), cfg)
    lam = 9.0
    factor = (1 / tau) / ((lam + tau) ** 2 + 1 / tau)
    assert np.allclose(step.u.values, factor * u0.values, atol=1e-14)


def discrete_residual(v, step, spec, tau):
    """Relative residual of (-Δ + τ)ψ + u/τ = v/τ + div g(∇u)."""
    sp = v.grid.spectral
    u, psi = step.u.values, step.psi.values
    lhs = sp.backward((sp.lam + tau) * sp.forward(psi)) + u / tau
    rhs = v.values / tau + sp.divergence(spec.g(sp.gradient(u)))
    return np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))


@pytest.mark.parametrize("spec", [nl.zero(), nl.cubic(1.0), nl.power(0.8)])
def test_step_solves_discrete_problem(spec):
    v = neumann_data()
    cfg = RotheConfig(0.1, 10, tol=1e-13)
    step = rothe.rothe_step(v, spec, cfg)
    assert discrete_residual(v, step, spec, cfg.tau) < 1e-10
    psi_direct = -v.grid.spectral.laplacian(step.u.values) + cfg.tau * step.u.values
    assert np.allclose(step.psi.values, psi_direct, atol=1e-12)


def test_mass_law_every_step():
    u0 = neumann_data()
    cfg = RotheConfig(0.5, 64)
    traj = rothe.run_ibvp(u0, nl.cubic(), cfg)
    tau = cfg.tau
    m = [integrate(s.u) for s in traj.steps]
    for a, b in zip(m[:-1], m[1:]):
        assert abs(b * (1 + tau**3) - a) <= 1e-12 * abs(a)


def test_inner_iteration_failure_is_reported():
    u0 = neumann_data(amp=5.0)
    cfg = RotheConfig(1.0, 2, max_iter=2, tol=1e-15)
    with pytest.raises(rothe.RotheError) as info:
        rothe.run_ibvp(u0, nl.cubic(), cfg)
    assert info.value.residual > 0
    assert info.value.trajectory is not None and not info.value.trajectory.complete


def test_interpolants():
    u0 = neumann_data(N=1, n=16)
    traj = rothe.run_ibvp(u0, nl.zero(), RotheConfig(1.0, 4))
    assert traj.u_bar(0.0) is traj.steps[0].u
    assert traj.u_bar(0.3) is traj.steps[2].u
    assert traj.u_bar(0.5) is traj.steps[2].u
    mid = traj.u_tilde(0.375).values
    assert np.allclose(mid, 0.5 * (traj.steps[1].u.values + traj.steps[2].u.values))
    assert np.allclose(traj.u_tilde(0.5).values, traj.steps[2].u.values)
    with pytest.raises(ValueError):
        traj.u_bar(1.5)


def test_linear_convergence_order():
    g = Grid.cube(1, 2 * math.pi, 32, "neumann")
    x = g.axis(0)
    u0 = ScalarField(g, np.cos(x))
    T = 1.0
    exact = math.exp(-T) * u0.values
    errs = []
    for j in (64, 128, 256):
        final = rothe.run_ibvp(u0, nl.zero(), RotheConfig(T, j)).final.u.values
        errs.append(np.max(np.abs(final - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 0.9) & (orders < 1.1))


@pytest.mark.parametrize(
    "N,alpha,expected",
    [(2, 1.0, "global"), (2, 2.5, "local"), (2, 3.0, "unsupported"), (3, 19 / 9, "local"), (3, 2.2, "unsupported"), (1, 0.5, "global"), (1, 2.0, "unsupported")],
)
def test_alpha_classify(N, alpha, expected):
    assert rothe.alpha_classify(N, alpha) == expected


def test_regime_rules():
    assert rothe.regime_for(nl.zero(), 2) == ("global", False)
    assert rothe.regime_for(nl.power(3.5), 2) == ("global", False)
    assert rothe.regime_for(nl.power(2.5), 2) == ("local", False)
    h = nl.truncate_to_h(nl.power(5.0), np.zeros(2))
    assert rothe.regime_for(h, 2) == ("global", False)
    fake = nl.NonlinearitySpec("truncated", base=nl.cubic(), ref_g=np.zeros(2), theta=nl.ThetaCutoff())
    assert rothe.regime_for(fake, 2)[0] == "global"


def test_truncated_flux_is_never_exploratory():
    u0 = neumann_data(N=2, n=16, amp=0.1)
    spec = nl.NonlinearitySpec("truncated", base=nl.cubic(), ref_g=np.zeros((2,) + u0.grid.shape), theta=nl.ThetaCutoff())
    cfg = RotheConfig(0.01, 2, alpha=4.0)
    # a truncated flux is bounded, so even a large declared α stays global
    assert not rothe.run_ibvp(u0, spec, cfg).exploratory


def test_unsupported_nonconservative_needs_flag(monkeypatch):
    u0 = neumann_data(N=2, n=16, amp=0.1)
    spec = nl.power(3.5)
    monkeypatch.setattr(nl.NonlinearitySpec, "conservative", property(lambda self: False))
    with pytest.raises(ValueError):
        rothe.run_ibvp(u0, spec, RotheConfig(0.01, 2))
    traj = rothe.run_ibvp(u0, spec, RotheConfig(0.01, 2, allow_unsupported=True))
    assert traj.exploratory


def test_local_run_past_horizon_refused():
    u0 = neumann_data(N=2, n=16, amp=0.01, offset=0.0)
    h = rothe.gronwall_horizon(u0, 2.5)
    with pytest.raises(rothe.BlowUpError):
        rothe.run_ibvp(u0, nl.power(2.5), RotheConfig(2 * h, 4, horizon=h))
    traj = rothe.run_ibvp(u0, nl.power(2.5), RotheConfig(0.5 * h, 4, horizon=h))
    assert traj.regime == "local" and traj.complete


def test_horizon_closed_form():
    assert rothe.horizon_from(1.0, 1.0) == pytest.approx(math.log(2))
    v0, s, c = 3.0, 0.5, 2.0
    assert rothe.horizon_from(v0, s, c, c) == pytest.approx(math.log(v0**-s + 1) / (s * c))
    with pytest.raises(ValueError):
        rothe.horizon_from(1.0, 0.0)


def test_energy_decays_for_conservative_flux():
    u0 = neumann_data(N=2, n=24)
    traj = rothe.run_ibvp(u0, nl.cubic(), RotheConfig(0.5, 64))
    rep = rothe.estimate_report(traj, 3.0)
    assert rothe.energy_increases(rep.energy) == 0
    assert rep.energy[-1] < rep.energy[0]


def test_energy_increases_counter():
    assert rothe.energy_increases(np.array([3.0, 2.0, 2.5, 1.0])) == 1
    assert rothe.energy_increases(np.array([1.0, 1.0 + 1e-9])) == 0


def test_estimate_report_stable_under_refinement():
    u0 = neumann_data(N=2, n=16)
    reps = [rothe.estimate_report(rothe.run_ibvp(u0, nl.power(1.0), RotheConfig(0.5, j)), 1.0) for j in (32, 64)]
    a, b = reps[0].entries(), reps[1].entries()
    for key in a:
        assert b[key] <= 1.05 * a[key] + 1e-300


def test_estimate_report_needs_complete_trajectory():
    u0 = neumann_data(N=1, n=16)
    traj = rothe.run_ibvp(u0, nl.zero(), RotheConfig(0.1, 2))
    traj.complete = False
    with pytest.raises(ValueError):
        rothe.estimate_report(traj, 1.0)


def test_trajectory_rows():
    u0 = neumann_data(N=1, n=16)
    traj = rothe.run_ibvp(u0, nl.zero(), RotheConfig(0.1, 2))
    rows = list(rothe.trajectory_rows(traj))
    assert len(rows) == 3 and rows[0][0] == 0.0 and rows[0][5] is not None


@settings(max_examples=15, deadline=None)
@given(amp=st.floats(0.0, 2.0), offset=st.floats(-3, 3), steps=st.integers(1, 8))
def test_mass_law_property(amp, offset, steps):
    u0 = neumann_data(N=1, n=16, amp=amp, offset=offset)
    cfg = RotheConfig(0.2, steps)
    traj = rothe.run_ibvp(u0, nl.cubic(), cfg)
    m0 = integrate(u0)
    expected = m0 / (1 + cfg.tau**3) ** steps
    assert abs(integrate(traj.final.u) - expected) <= 1e-12 * max(abs(m0), 1.0)
