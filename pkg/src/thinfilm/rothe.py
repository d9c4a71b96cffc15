"""Uniform-step time discretization of the Neumann (or periodic) problem.

Each step solves the coupled second-order pair

    (u_k - u_{k-1})/τ - div(∇ψ_k + g(∇u_k)) + τ ψ_k = 0,
    -Δu_k + τ u_k = ψ_k,

which after eliminating ψ_k reads ((-Δ+τ)² + 1/τ) u_k = u_{k-1}/τ + div g(∇u_k).
The nonlinear part is resolved by damped Picard iteration on the spectral
solve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .grid import ScalarField, lp_norm, integrate, lyapunov_energy
from .nonlinearity import NonlinearitySpec

log = logging.getLogger(__name__)

REGIMES = ("global", "local", "unsupported")


class RotheError(RuntimeError):
    """Inner iteration failure; ``trajectory`` keeps the steps completed so far."""

    def __init__(self, message: str, residual: float = math.nan, trajectory=None):
        super().__init__(message)
        self.residual = residual
        self.trajectory = trajectory


class BlowUpError(RotheError):
    """Run horizon at or beyond the Gronwall horizon, or a diverging state."""


@dataclass(frozen=True)
class RotheConfig:
    T: float
    steps: int
    tol: float = 1e-10
    max_iter: int = 200
    damping: float = 1.0
    damping_floor: float = 0.25
    alpha: float | None = None  # growth exponent used for regime classification
    allow_unsupported: bool = False
    horizon: float | None = None  # Gronwall horizon; local runs must stay below it

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError("steps must be a positive integer")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.damping <= 1 or not 0 < self.damping_floor <= self.damping:
            raise ValueError("need 0 < damping_floor <= damping <= 1")

    @property
    def tau(self) -> float:
        return self.T / self.steps


@dataclass(frozen=True)
class RotheStep:
    index: int
    t: float
    u: ScalarField
    psi: ScalarField
    iterations: int = 0
    residual: float = 0.0


def _psi(u: np.ndarray, sp, tau: float) -> np.ndarray:
    return sp.backward((sp.lam + tau) * sp.forward(u))


def rothe_step(v: ScalarField, spec: NonlinearitySpec, config: RotheConfig, index: int = 1) -> RotheStep:
    """One implicit step from ``v``; raises RotheError if the inner iteration stalls."""
    if not np.all(np.isfinite(v.values)):
        raise ValueError("previous state is not finite")
    grid = v.grid
    sp = grid.spectral
    tau = config.tau
    inv = 1.0 / ((sp.lam + tau) ** 2 + 1.0 / tau)
    vhat = sp.forward(v.values) / tau

    def solve(u):
        rhs = vhat
        if spec.form != "zero":
            flux = spec.g(sp.gradient(u))
            rhs = rhs + sp.forward(sp.divergence(flux))
        return sp.backward(inv * rhs)

    # starting from one solve keeps every damped iterate on the exact mass level
    u = solve(v.values)
    it, res = 1, 0.0
    if spec.form != "zero":
        omega = config.damping
        prev = math.inf
        while True:
            step = solve(u) - u
            scale = np.linalg.norm(u)
            res = float(np.linalg.norm(step) / scale) if scale > 0 else float(np.linalg.norm(step))
            it += 1
            if not math.isfinite(res):
                raise RotheError(f"inner iteration diverged at step {index}", res)
            if res > prev:
                omega = max(omega / 2, config.damping_floor)
            u = u + omega * step
            if res < config.tol:
                break
            if it >= config.max_iter:
                raise RotheError(
                    f"inner iteration at step {index} stopped at residual {res:.3e} after {it} solves; "
                    "try a smaller time step",
                    res,
                )
            prev = res
    psi = _psi(u, sp, tau)
    return RotheStep(index, index * tau, ScalarField(grid, u), ScalarField(grid, psi), it, res)


@dataclass
class Trajectory:
    """Chained steps with the piecewise-constant and piecewise-linear interpolants."""

    steps: list[RotheStep]
    tau: float
    spec: NonlinearitySpec
    regime: str = "global"
    exploratory: bool = False
    complete: bool = True
    times: np.ndarray = field(init=False)

    def __post_init__(self):
        self.times = np.array([s.t for s in self.steps])

    @property
    def grid(self):
        return self.steps[0].u.grid

    @property
    def final(self) -> RotheStep:
        return self.steps[-1]

    def _index(self, t: float) -> int:
        if t < 0 or t > self.times[-1] * (1 + 1e-12):
            raise ValueError(f"t = {t} outside [0, {self.times[-1]}]")
        return int(min(math.ceil(t / self.tau - 1e-9), len(self.steps) - 1))

    def u_bar(self, t: float) -> ScalarField:
        """ū(t) = u_k for t in (t_{k-1}, t_k], and u_0 at t = 0."""
        return self.steps[self._index(t)].u

    def psi_bar(self, t: float) -> ScalarField:
        return self.steps[self._index(t)].psi

    def u_tilde(self, t: float) -> ScalarField:
        """Linear interpolation between the knots."""
        k = self._index(t)
        if k == 0:
            return self.steps[0].u
        w = (t - self.times[k - 1]) / self.tau
        a, b = self.steps[k - 1].u.values, self.steps[k].u.values
        return ScalarField(self.grid, (1 - w) * a + w * b)


def alpha_classify(N: int, alpha: float) -> str:
    """Regime for the growth exponent: global (α ≤ 1), local, or unsupported."""
    if N < 1 or not alpha > 0:
        raise ValueError("need N >= 1 and alpha > 0")
    if alpha <= 1:
        return "global"
    if N > 2 and alpha <= bounds.highdim_alpha_limit(N) + 1e-12:
        return "local"
    if N == 2 and alpha < 3:
        return "local"
    return "unsupported"


def regime_for(spec: NonlinearitySpec, N: int, alpha: float | None = None) -> tuple[str, bool]:
    """(regime, exploratory).

    Bounded truncations count as α = 0.  A flux with a potential admits the
    energy identity, which gives existence for every T regardless of α.
    """
    if spec.form in ("zero", "truncated"):
        return "global", False
    a = spec.growth_alpha if alpha is None else alpha
    regime = alpha_classify(N, a)
    if regime == "unsupported" and spec.conservative:
        return "global", False
    return regime, regime == "unsupported"


def run_ibvp(u0: ScalarField, spec: NonlinearitySpec, config: RotheConfig) -> Trajectory:
    if not np.all(np.isfinite(u0.values)):
        raise ValueError("initial data must be finite")
    regime, exploratory = regime_for(spec, u0.grid.N, config.alpha)
    if exploratory and not config.allow_unsupported:
        raise ValueError("growth exponent outside the supported ranges; set allow_unsupported to run anyway")
    if regime == "local" and config.horizon is not None and config.T >= config.horizon:
        raise BlowUpError(f"T = {config.T} is not below the Gronwall horizon {config.horizon}")
    tau = config.tau
    sp = u0.grid.spectral
    first = RotheStep(0, 0.0, u0, ScalarField(u0.grid, _psi(u0.values, sp, tau)))
    steps = [first]
    ceiling = 1e8 * max(1.0, float(np.max(np.abs(u0.values))))
    for k in range(1, config.steps + 1):
        try:
            step = rothe_step(steps[-1].u, spec, config, k)
        except RotheError as exc:
            exc.trajectory = Trajectory(steps, tau, spec, regime, exploratory, complete=False)
            raise
        if float(np.max(np.abs(step.u.values))) > ceiling:
            part = Trajectory(steps + [step], tau, spec, regime, exploratory, complete=False)
            raise BlowUpError(f"solution exceeded {ceiling:.3g} at t = {step.t}", trajectory=part)
        steps.append(step)
        if step.iterations > 1:
            log.debug("step %d: %d inner solves, residual %.2e", k, step.iterations, step.residual)
    return Trajectory(steps, tau, spec, regime, exploratory)


# ---------------------------------------------------------------------------
# estimate ledger


@dataclass
class EstimateReport:
    sup_h1: float  # sup_t ∫ ū² + |∇ū|²
    tau_sup_l2: float  # τ sup_t ∫ ū²
    psi_h1: float  # ∬ ψ̄² + |∇ψ̄|²
    tau_psi_l2: float  # τ ∬ ψ̄²
    grad_power: float  # ∬ |∇ū|^{2α}
    energy: np.ndarray | None = None  # per step, conservative g only

    def entries(self) -> dict[str, float]:
        return {
            "sup_h1": self.sup_h1,
            "tau_sup_l2": self.tau_sup_l2,
            "psi_h1": self.psi_h1,
            "tau_psi_l2": self.tau_psi_l2,
            "grad_power": self.grad_power,
        }


def estimate_report(traj: Trajectory, alpha: float) -> EstimateReport:
    if not traj.complete:
        raise ValueError("estimate report needs a complete trajectory")
    tau = traj.tau
    g = traj.grid
    sp = g.spectral
    h1 = []
    l2 = []
    psi_h1 = psi_l2 = grad_pow = 0.0
    for step in traj.steps:
        u = step.u.values
        grad = sp.gradient(u)
        m2 = np.sum(grad**2, axis=0)
        l2.append(integrate(u**2, g))
        h1.append(l2[-1] + integrate(m2, g))
        if step.index == 0:
            continue
        psi = step.psi.values
        pl2 = integrate(psi**2, g)
        psi_l2 += tau * pl2
        psi_h1 += tau * (pl2 + integrate(np.sum(sp.gradient(psi) ** 2, axis=0), g))
        grad_pow += tau * integrate(m2**alpha, g)
    energy = None
    if traj.spec.conservative:
        energy = np.array([lyapunov_energy(s.u, traj.spec) for s in traj.steps])
    return EstimateReport(max(h1), tau * max(l2), psi_h1, tau * psi_l2, grad_pow, energy)


def energy_increases(energy: np.ndarray, rel: float = 1e-6) -> int:
    """Number of steps where the energy grows by more than rel·|E|."""
    e = np.asarray(energy)
    jumps = np.diff(e)
    return int(np.sum(jumps > rel * np.maximum(np.abs(e[:-1]), np.finfo(float).tiny)))


def gronwall_horizon(
    u0: ScalarField,
    alpha: float,
    N: int | None = None,
    c1: float = 1.0,
    c2: float = 1.0,
    k: int = 2,
    s: float | None = None,
) -> float:
    """Blow-up time of the Gronwall bound started from v₀ = ∫(u0² + |∇u0|²) + 1.

    σ comes from the interpolation sequences at index k (N > 2), or from the
    planar variant with parameter s when N = 2.  With c1 = c2 = c this is
    ln(v₀^{-σ} + 1)/(σ c).
    """
    N = u0.grid.N if N is None else N
    if N > 2:
        seq = bounds.interp_sequences("highdim", N, alpha, max(k, 2))
    elif N == 2:
        s = bounds.planar_s_for(alpha) if s is None else s
        seq = bounds.interp_sequences("planar", s, alpha, max(k, 2))
    else:
        raise ValueError("the horizon is defined for N >= 2")
    sigma = seq.sigma(k)
    if not sigma > 0:
        raise ValueError(f"sigma = {sigma} is not positive for alpha = {alpha}")
    grad = u0.grid.spectral.gradient(u0.values)
    v0 = integrate(u0.values**2 + np.sum(grad**2, axis=0), u0.grid) + 1.0
    return horizon_from(v0, sigma, c1, c2)


def horizon_from(v0: float, sigma: float, c1: float = 1.0, c2: float = 1.0) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return math.log1p(c2 / c1 * v0**-sigma) / (sigma * c2)


def trajectory_rows(traj: Trajectory):
    """(t, ‖u‖₂, ‖∇u‖₂, ‖Δu‖₂, mass, energy or None) per knot."""
    g = traj.grid
    sp = g.spectral
    for step in traj.steps:
        u = step.u.values
        grad = sp.gradient(u)
        e = lyapunov_energy(step.u, traj.spec) if traj.spec.conservative else None
        yield (
            step.t,
            lp_norm(u, 2, g),
            lp_norm(np.sqrt(np.sum(grad**2, axis=0)), 2, g),
            lp_norm(sp.laplacian(u), 2, g),
            integrate(u, g),
            e,
        )
