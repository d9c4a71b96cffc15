"""Cauchy problem on a periodic box standing in for R^N.

The solution is split as u = v0 + v1 with v0 the biharmonic semigroup applied
to the initial data and v1 the Duhamel integral of the flux.  Picard
iteration w_k = v0 + Duhamel[g(∇w_{k-1})] is run on a fixed set of sample
times; between samples the flux is taken piecewise linear in time, which the
exponential integrator below integrates exactly mode by mode.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.integrate import quad

from . import kernel
from .grid import Grid, ScalarField, VectorField, lp_norm
from .nonlinearity import NonlinearitySpec, clamp_active

log = logging.getLogger(__name__)

WRAP_TOL = 1e-10


class WrapAroundError(ValueError):
    """Kernel mass beyond half the box is above tolerance."""


class DuhamelQuadratureError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class PicardError(RuntimeError):
    """Contraction failed; ``states`` holds the monitors computed so far."""

    def __init__(self, message: str, states=None):
        super().__init__(message)
        self.states = states or []


def _require_periodic(grid: Grid):
    if grid.boundary != "periodic":
        raise ValueError("the Cauchy problem is posed on a periodic box")


def wrap_mass(grid: Grid, t: float) -> float:
    """Kernel L¹ mass outside the ball of radius half the shortest box side."""
    half = min(grid.extents) / 2
    return kernel.tail_mass(grid.N, half / t**0.25)


def check_wrap(grid: Grid, t: float, tol: float = WRAP_TOL) -> float:
    m = wrap_mass(grid, t)
    if m > tol:
        need = 2 * _eta_for(grid.N, tol) * t**0.25
        raise WrapAroundError(
            f"kernel mass {m:.2e} outside half the box at t = {t:g}; use a box side of at least {need:.3g}"
        )
    return m


def _eta_for(N: int, tol: float) -> float:
    lo, hi = 1.0, kernel.INTEGRAL_ETA_CUT
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if kernel.tail_mass(N, mid) > tol else (lo, mid)
    return hi


def _decay(grid: Grid, t: float) -> np.ndarray:
    lam = grid.spectral.lam
    return np.exp(-lam * lam * t)


def heat_propagate(u0: ScalarField, t: float, check: bool = True, tol: float = WRAP_TOL) -> ScalarField:
    """v0(t) = b_N(t) * u0 via the multiplier exp(-|k|⁴ t); t = 0 returns u0 itself."""
    _require_periodic(u0.grid)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return u0
    if check:
        check_wrap(u0.grid, t, tol)
    sp = u0.grid.spectral
    return ScalarField(u0.grid, sp.backward(_decay(u0.grid, t) * sp.forward(u0.values)))


def heat_propagate_direct(u0: ScalarField, t: float) -> ScalarField:
    """Same map by circular convolution with the tabulated kernel sampled on the grid."""
    g = u0.grid
    _require_periodic(g)
    check_wrap(g, t)
    # signed offsets from the first node, wrapped onto (-L/2, L/2]
    offs = []
    for i in range(g.N):
        n, L = g.points[i], g.extents[i]
        d = np.arange(n) * (L / n)
        offs.append(np.where(d > L / 2, d - L, d))
    mesh = np.meshgrid(*offs, indexing="ij")
    r = np.sqrt(sum(m * m for m in mesh))
    bk = kernel.kernel_on_grid(g.N, r, t)
    axes = tuple(range(g.N))
    conv = np.fft.irfftn(np.fft.rfftn(bk) * np.fft.rfftn(u0.values), s=g.shape, axes=axes) * g.cell_volume
    return ScalarField(g, conv)


def kernel_l1_norm(N: int) -> float:
    """‖b_N(t)‖₁, independent of t."""
    return kernel.tail_mass(N, 0.0)


def young_check(f: ScalarField, t: float, q: float) -> tuple[float, float]:
    """(‖b(t) * f‖_q, ‖f‖_q ‖b(t)‖_1)."""
    lhs = lp_norm(heat_propagate(f, t), q)
    return lhs, lp_norm(f, q) * kernel_l1_norm(f.grid.N)


def claim_gap(u0: ScalarField, t: float) -> float:
    """‖∇v0(t) - ∇u0‖_∞."""
    sp = u0.grid.spectral
    d = sp.gradient(heat_propagate(u0, t).values) - sp.gradient(u0.values)
    return float(np.max(np.sqrt(np.sum(d * d, axis=0))))


# ---------------------------------------------------------------------------
# Duhamel increment


@dataclass
class FluxHistory:
    """Flux samples h(·, s_i) with components on axis 1: shape (M, N, *grid.shape)."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.values = np.asarray(self.values, float)
        if self.times.ndim != 1 or len(self.times) < 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.values.shape != (len(self.times), self.grid.N, *self.grid.shape):
            raise ValueError("values must have shape (M, N, *grid.shape)")

    @classmethod
    def constant(cls, field_: VectorField | np.ndarray, grid: Grid, T: float) -> "FluxHistory":
        comps = field_.components if isinstance(field_, VectorField) else np.asarray(field_, float)
        return cls(grid, np.array([0.0, T]), np.stack([comps, comps]))

    def divergence_coeffs(self) -> np.ndarray:
        sp = self.grid.spectral
        return np.stack([sp.forward(sp.divergence(v)) for v in self.values])

    def at(self, s) -> np.ndarray:
        """Linear interpolation in time, shape (len(s), N, *shape)."""
        s = np.atleast_1d(np.asarray(s, float))
        if np.any(s < self.times[0] - 1e-14) or np.any(s > self.times[-1] * (1 + 1e-14) + 1e-14):
            raise ValueError("history does not cover the requested times")
        if len(self.times) == 1:
            return np.repeat(self.values, len(s), axis=0)
        i = np.clip(np.searchsorted(self.times, s, side="right") - 1, 0, len(self.times) - 2)
        w = ((s - self.times[i]) / (self.times[i + 1] - self.times[i])).reshape((-1,) + (1,) * (self.values.ndim - 1))
        return (1 - w) * self.values[i] + w * self.values[i + 1]


def _phi_weights(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(φ1, ψ) with φ1 = (1-e^{-z})/z and ψ = (z-1+e^{-z})/z², stable at small z."""
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    em = np.expm1(-zs)
    phi1 = np.where(small, 1 - z / 2 + z * z / 6 - z**3 / 24, -em / zs)
    psi = np.where(small, 0.5 - z / 6 + z * z / 24 - z**3 / 120 + z**4 / 720, (zs + em) / (zs * zs))
    return phi1, psi


def _etd_sweep(grid: Grid, times: np.ndarray, dhat: np.ndarray) -> np.ndarray:
    """Coefficients of v1 at every sample time for piecewise-linear forcing."""
    lam = grid.spectral.lam
    mu = lam * lam
    out = np.zeros_like(dhat)
    acc = np.zeros_like(dhat[0])
    for i in range(1, len(times)):
        dt = times[i] - times[i - 1]
        z = mu * dt
        phi1, psi = _phi_weights(z)
        acc = np.exp(-z) * acc + dt * ((phi1 - psi) * dhat[i - 1] + psi * dhat[i])
        out[i] = acc
    return out


def duhamel_increment(
    history: FluxHistory,
    t: float,
    method: str = "exact",
    quad_points: int = 16,
    tol: float = 1e-8,
) -> ScalarField:
    """v1(t) = ∫_0^t ∇b_N(t-s) * h(s) ds, computed per Fourier mode.

    ``exact`` integrates the piecewise-linear interpolant of h against the
    exponential in closed form.  ``gauss`` uses Gauss-Legendre in r with
    s = t - r², and estimates its error from a run with twice the points.
    """
    grid = history.grid
    _require_periodic(grid)
    if quad_points < 4:
        raise ValueError("quad_points must be >= 4")
    if not 0 <= t <= history.times[-1] * (1 + 1e-14) or history.times[0] > 0:
        raise ValueError("history must cover [0, t]")
    sp = grid.spectral
    if t == 0:
        return ScalarField(grid, np.zeros(grid.shape))
    if method == "exact":
        knots = history.times[history.times < t]
        knots = np.append(knots, t)
        h = history.at(knots)
        dhat = np.stack([sp.forward(sp.divergence(v)) for v in h])
        coeff = _etd_sweep(grid, knots, dhat)[-1]
        return ScalarField(grid, sp.backward(coeff))
    if method == "gauss":
        lam = sp.lam
        mu = lam * lam

        def rule(n):
            x, w = np.polynomial.legendre.leggauss(n)
            rt = math.sqrt(t)
            r = 0.5 * rt * (x + 1)
            w = 0.5 * rt * w
            h = history.at(t - r * r)
            acc = 0
            for ri, wi, hi in zip(r, w, h):
                acc = acc + (2 * ri * wi) * np.exp(-mu * ri * ri) * sp.forward(sp.divergence(hi))
            return acc

        a, b = rule(quad_points), rule(2 * quad_points)
        scale = max(float(np.max(np.abs(b))), 1e-300)
        res = float(np.max(np.abs(a - b))) / scale
        if res > tol:
            raise DuhamelQuadratureError(f"Duhamel quadrature residual {res:.2e} above {tol:.1e}", res)
        return ScalarField(grid, sp.backward(b))
    raise ValueError(f"unknown method {method!r}")


def duhamel_constant(history: FluxHistory, times) -> float:
    """max over t of sup|∇v1(t)| / (t^{1/2} sup|h|)."""
    grid = history.grid
    sp = grid.spectral
    hmax = float(np.max(np.sqrt(np.sum(history.values**2, axis=1))))
    if hmax == 0:
        return 0.0
    best = 0.0
    for t in times:
        v1 = duhamel_increment(history, t)
        gv = np.sqrt(np.sum(sp.gradient(v1.values) ** 2, axis=0))
        best = max(best, float(gv.max()) / (math.sqrt(t) * hmax))
    return best


def duhamel_constant_bound(N: int) -> float:
    """2∫|∇²b_N(y, 1)| dy, the constant c in sup|∇v1| <= c t^{1/2} sup|h|."""
    return 2.0 * kernel.hessian_l1_norm(N)


# ---------------------------------------------------------------------------
# Picard iteration


def chebyshev_times(T: float, count: int) -> np.ndarray:
    if count < 2:
        raise ValueError("need at least 2 sample times")
    i = np.arange(count)
    t = 0.5 * T * (1 - np.cos(np.pi * i / (count - 1)))
    t[0], t[-1] = 0.0, T
    return t


@dataclass(frozen=True)
class PicardConfig:
    samples: int = 33
    tol: float = 1e-10  # on d_k relative to max(1, a_k)
    max_iter: int = 60
    stall: int = 5
    a_window: float | None = None  # τ̂ for a_k; defaults to T
    check_wrap: bool = True

    def __post_init__(self):
        if self.samples < 2 or self.max_iter < 1 or self.stall < 1:
            raise ValueError("samples >= 2, max_iter >= 1 and stall >= 1 are required")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class PicardState:
    """Monitors of one iterate; ``w_final`` is w_k at the end of the window."""

    k: int
    a: float
    b: float
    d: float
    w_final: ScalarField
    grad_sup: np.ndarray  # ‖∇w_k(·, t_i)‖_∞ per sample time

    @property
    def w(self) -> ScalarField:
        return self.w_final


@dataclass
class PicardRun:
    states: list[PicardState]
    times: np.ndarray
    history: np.ndarray  # final iterate at every sample time, shape (M, *grid.shape)
    grid: Grid
    spec: NonlinearitySpec
    u0: ScalarField
    converged: bool
    t_offset: float = 0.0

    @property
    def final(self) -> ScalarField:
        return self.states[-1].w_final

    def d_ratios(self) -> np.ndarray:
        d = np.array([s.d for s in self.states[1:]])
        with np.errstate(divide="ignore", invalid="ignore"):
            return d[1:] / d[:-1]

    def contraction_ratio(self, floor: float = 1e-9) -> float:
        """sup_k d_k/d_{k-1}, skipping pairs already at the round-off floor."""
        d = np.array([s.d for s in self.states[1:]])
        scale = floor * max(1.0, self.states[-1].a)
        ok = (d[1:] > scale) & (d[:-1] > scale)
        if not np.any(ok):
            return math.nan
        return float(np.max(d[1:][ok] / d[:-1][ok]))

    def w_at(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.history[i])


def _b_weight(times: np.ndarray, alpha: float | None) -> np.ndarray | None:
    if alpha is None or alpha <= 1:
        return None
    return times ** (1.0 / (2.0 * (alpha - 1.0)))


def picard_solve(
    u0: ScalarField,
    spec: NonlinearitySpec,
    T: float,
    steps: int | None = None,
    config: PicardConfig = PicardConfig(),
    alpha: float | None = None,
    t_offset: float = 0.0,
) -> PicardRun:
    """Iterate w_k = v0 + Duhamel[g(∇w_{k-1})] on [0, T] starting from w_0 = v0.

    ``steps`` overrides the number of sample times.  ``alpha`` sets the
    weight t^{1/(2(α-1))} in b_k (defaults to the flux growth exponent).
    Raises PicardError when d_k fails to decrease ``config.stall`` times in a row.
    """
    grid = u0.grid
    _require_periodic(grid)
    if not T > 0:
        raise ValueError("T must be positive")
    if config.check_wrap:
        check_wrap(grid, T + t_offset)
    sp = grid.spectral
    times = chebyshev_times(T, steps or config.samples)
    alpha = spec.growth_alpha if alpha is None else alpha
    weight = _b_weight(times + t_offset, alpha)
    a_mask = times <= (config.a_window if config.a_window is not None else T) * (1 + 1e-12)

    u0hat = sp.forward(u0.values)
    lam2 = sp.lam**2
    v0 = np.stack([u0.values] + [sp.backward(np.exp(-lam2 * t) * u0hat) for t in times[1:]])

    def grads(w):
        return np.stack([sp.gradient(x) for x in w])

    def monitors(gw):
        gs = np.sqrt(np.sum(gw**2, axis=1)).reshape(len(times), -1).max(axis=1)
        a = float(gs[a_mask].max())
        b = float(np.max(weight * gs)) if weight is not None else math.nan
        return gs, a, b

    w = v0
    gw = grads(w)
    gs, a, b = monitors(gw)
    states = [PicardState(0, a, b, 0.0, ScalarField(grid, w[-1].copy()), gs)]
    if spec.form == "zero":
        states.append(PicardState(1, a, b, 0.0, states[0].w_final, gs))
        return PicardRun(states, times, w, grid, spec, u0, True, t_offset)
    stalls = 0
    converged = False
    for k in range(1, config.max_iter + 1):
        flux = [spec.g(x) for x in gw]
        dhat = np.stack([sp.forward(sp.divergence(f)) for f in flux])
        v1 = _etd_sweep(grid, times, dhat)
        w_new = v0 + np.stack([np.zeros(grid.shape)] + [sp.backward(c) for c in v1[1:]])
        w_new[0] = u0.values
        gw_new = grads(w_new)
        diff = gw_new - gw
        d = float(np.max(np.sqrt(np.sum(diff**2, axis=1))))
        gs, a, b = monitors(gw_new)
        state = PicardState(k, a, b, d, ScalarField(grid, w_new[-1].copy()), gs)
        if not (math.isfinite(d) and math.isfinite(a)):
            raise PicardError(f"iterate {k} is not finite", states)
        states.append(state)
        w, gw = w_new, gw_new
        if d <= config.tol * max(1.0, a):
            converged = True
            break
        if k >= 2 and d >= states[-2].d:
            stalls += 1
            if stalls >= config.stall:
                raise PicardError(
                    f"d_k did not decrease for {stalls} consecutive iterates (d = {d:.3e}); shorten T", states
                )
        else:
            stalls = 0
    if not converged:
        log.warning("Picard iteration stopped at the cap with d = %.3e", states[-1].d)
    return PicardRun(states, times, w, grid, spec, u0, converged, t_offset)


def picard_solve_refined(u0, spec, T, config: PicardConfig = PicardConfig(), alpha=None, max_doublings=4, rel=0.01):
    """Double the sample density until the sup monitors a_k, b_k are stable to ``rel``."""
    count = config.samples
    run = picard_solve(u0, spec, T, count, config, alpha)
    for _ in range(max_doublings):
        count = 2 * count - 1
        nxt = picard_solve(u0, spec, T, count, config, alpha)
        old, new = run.states[-1], nxt.states[-1]
        stable = abs(new.a - old.a) <= rel * abs(new.a) and (
            math.isnan(new.b) or abs(new.b - old.b) <= rel * abs(new.b)
        )
        run = nxt
        if stable:
            break
    return run


def picard_windows(
    u0: ScalarField,
    spec: NonlinearitySpec,
    window: float,
    count: int,
    config: PicardConfig = PicardConfig(),
    alpha: float | None = None,
) -> list[PicardRun]:
    """Chain ``count`` windows of length ``window``, each restarted from the previous endpoint."""
    runs = []
    start = u0
    for i in range(count):
        run = picard_solve(start, spec, window, None, config, alpha, t_offset=i * window)
        runs.append(run)
        start = run.final
    return runs


# ---------------------------------------------------------------------------
# small data and decay


@dataclass
class SmallnessResult:
    holds: bool
    b0: float
    bound: float
    lam: float
    alpha: float


def measured_b0(u0: ScalarField, alpha: float, times) -> float:
    """sup over the given times of t^{1/(2(α-1))}‖∇v0(t)‖_∞."""
    sp = u0.grid.spectral
    best = 0.0
    for t in times:
        if t <= 0:
            continue
        gv = sp.gradient(heat_propagate(u0, t).values)
        best = max(best, t ** (1 / (2 * (alpha - 1))) * float(np.max(np.sqrt(np.sum(gv * gv, axis=0)))))
    return best


def smallness_check(u0, alpha: float, N: int | None = None, lambda_hat: float = 1.0, times=None) -> SmallnessResult:
    """Small-data condition for the weighted gradient sequence b_k.

    The iteration satisfies b_k <= b0 + λ̂ b_{k-1}^α, i.e. the small-data
    recursion with exponent 1 + (α-1).  The condition is therefore
    2λ̂(2b0)^{α-1} < 1 and the bound b0/(1 - λ̂(2b0)^{α-1}).

    ``u0`` may be a ScalarField (b0 is then measured over ``times``) or the
    number b0 itself.
    """
    if not 2 < alpha < 3:
        raise ValueError("alpha must lie in (2, 3)")
    if isinstance(u0, ScalarField):
        N = u0.grid.N if N is None else N
        if times is None:
            raise ValueError("sample times are required to measure b0")
        b0 = measured_b0(u0, alpha, times)
    else:
        b0 = float(u0)
    if N is not None and not math.isfinite((alpha - 1) * N / (3 - alpha)):
        raise ValueError("Lebesgue exponent is not finite")
    e = alpha - 1
    q = lambda_hat * (2 * b0) ** e
    holds = 2 * q < 1
    bound = b0 / (1 - q) if holds else math.inf
    return SmallnessResult(holds, b0, bound, lambda_hat, alpha)


def lambda_hat(N: int, alpha: float, c: float = 1.0) -> float:
    """c‖∇²b_N(1)‖₁ B(1/2, (α-2)/(2(α-1))) for the pure power flux c|ξ|^{α-1}ξ."""
    if not alpha > 2:
        raise ValueError("alpha must exceed 2")
    return c * kernel.hessian_l1_norm(N) * special.beta(0.5, (alpha - 2) / (2 * (alpha - 1)))


@dataclass
class DecayFit:
    slope: float
    expected: float
    times: np.ndarray
    norms: np.ndarray

    @property
    def relative_error(self) -> float:
        return abs(self.slope - self.expected) / abs(self.expected)


def decay_rate(N: int, p: float) -> float:
    """-(N+p)/(4p), with p = ∞ giving -1/4."""
    return -0.25 if math.isinf(p) else -(N + p) / (4 * p)


def decay_exponent_fit(u0: ScalarField, p: float, t_window, samples: int = 8) -> DecayFit:
    t_window = np.asarray(t_window, float)
    if t_window.size == 2:
        if samples < 4:
            raise ValueError("at least 4 sample times are required")
        times = np.geomspace(t_window[0], t_window[1], samples)
    else:
        times = t_window
    if times.size < 4:
        raise ValueError("at least 4 sample times are required")
    check_wrap(u0.grid, float(times.max()))
    sp = u0.grid.spectral
    norms = np.array(
        [np.max(np.sqrt(np.sum(sp.gradient(heat_propagate(u0, t, check=False).values) ** 2, axis=0))) for t in times]
    )
    slope = float(np.polyfit(np.log(times), np.log(norms), 1)[0])
    return DecayFit(slope, decay_rate(u0.grid.N, p), times, norms)


def homogeneous_datum(grid: Grid, p: float, core: float, outer: float | None = None) -> ScalarField:
    """Data scaling like |x|^{-N/p} between ``core`` and ``outer``, centred in the box.

    p = 1: a normalized Gaussian of width ``core`` (point-mass profile).
    p = ∞: a smooth top-hat with edge width ``core`` and radius ``outer``.
    otherwise: (|x|² + core²)^{-N/(2p)} plus a Gaussian restoring the mass
    removed by the regularization (when that mass is finite), with a smooth
    cutoff of width outer/4 at ``outer``.
    """
    mesh = grid.mesh()
    centre = [lo + e / 2 for lo, e in zip(grid.lower, grid.extents)]
    r = np.sqrt(sum((m - c) ** 2 for m, c in zip(mesh, centre)))
    N = grid.N
    gauss = np.exp(-((r / core) ** 2)) / (math.sqrt(math.pi) * core) ** N
    if p == 1:
        return ScalarField(grid, gauss)
    if outer is None:
        raise ValueError("outer radius is required")
    if math.isinf(p):
        return ScalarField(grid, 0.5 * special.erfc((r - outer) / core))
    s = N / p
    body = (r * r + core * core) ** (-s / 2)
    if s < N:
        # ∫ (|x|^{-s} - (|x|² + core²)^{-s/2}) dx in closed form
        area = kernel.sphere_area(N)
        deficit = area * core ** (N - s) * _radial_deficit(N, s)
        body = body + deficit * gauss
    return ScalarField(grid, body * 0.5 * special.erfc((r - outer) / (outer / 4)))


def _radial_deficit(N: int, s: float) -> float:
    """∫_0^∞ (ρ^{-s} - (ρ² + 1)^{-s/2}) ρ^{N-1} dρ for 0 < s < N."""
    f = lambda x: (x ** (-s) - (x * x + 1) ** (-s / 2)) * x ** (N - 1)
    a, _ = quad(f, 0, 1, limit=200)
    b, _ = quad(f, 1, np.inf, limit=200)
    return a + b


# ---------------------------------------------------------------------------
# truncation consistency


def truncation_consistency(run: PicardRun, base: NonlinearitySpec | None = None, u0: ScalarField | None = None):
    """Earliest sample time where |g(∇u) - g(∇u0)| leaves [-1, 1] componentwise, or None."""
    spec = run.spec
    base = base or spec.base
    if base is None:
        raise ValueError("base flux is unknown")
    if base.form == "zero":
        return None
    u0 = u0 or run.u0
    sp = run.grid.spectral
    ref = base.g(sp.gradient(u0.values))
    for t, w in zip(run.times, run.history):
        diff = base.g(sp.gradient(w)) - ref
        if np.any(np.abs(diff) > 1.0):
            return float(t) + run.t_offset
    return None


def clamp_scan(run: PicardRun):
    """Same scan through the truncated spec's own clamp detector."""
    if run.spec.form != "truncated":
        raise ValueError("run did not use a truncated flux")
    sp = run.grid.spectral
    for t, w in zip(run.times, run.history):
        if np.any(clamp_active(run.spec, sp.gradient(w))):
            return float(t) + run.t_offset
    return None
