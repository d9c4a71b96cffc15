"""Radial profile of the biharmonic heat kernel.

The kernel of ``u_t + Δ²u = 0`` in R^N is ``b_N(x, t) = α_N t^{-N/4} f_N(|x| t^{-1/4})``
with the radial profile

    f_N(η) = η^{1-N} ∫_0^∞ exp(-s⁴) (ηs)^{N/2} J_{(N-2)/2}(ηs) ds.

Derivatives are never differenced numerically; they follow from the
recursion ``f_N' = -η f_{N+2}`` applied repeatedly, which expresses
``f_N^{(n)}`` as a polynomial combination of ``f_N, f_{N+2}, ..., f_{N+2n}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import special
from scipy.interpolate import BPoly

# Profiles are only needed up to f_{N+10} (fifth derivative, N <= 4 plus margin).
MAX_INDEX = 16
SERIES_ETA = 2.0  # auto method: power series below, panels above
INTEGRAL_ETA_CUT = 48.0  # exp(-0.23 * 48^(4/3)) ~ 1e-18, see fit_envelope

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


class KernelQuadratureError(RuntimeError):
    """Quadrature of the profile integral did not reach its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class QuadratureSpec:
    """How to evaluate the profile integral.

    ``method`` is ``"series"`` (Bessel power series, integrated term by term),
    ``"panel"`` (composite Gauss-Legendre panels in s, refined until two
    consecutive panel counts agree) or ``"auto"`` (series for η <= 2,
    panels beyond).
    """

    method: str = "auto"
    tol: float = 1e-13
    panel_budget: int = 4096

    def __post_init__(self):
        if self.method not in ("auto", "series", "panel"):
            raise ValueError(f"unknown quadrature method {self.method!r}")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.panel_budget < 1:
            raise ValueError("panel budget must be >= 1")


DEFAULT_QUAD = QuadratureSpec()


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere S^{N-1} (2 for N = 1)."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def ball_volume(N: int) -> float:
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


# ---------------------------------------------------------------------------
# pointwise evaluation


def series_coefficients(N: int, terms: int) -> np.ndarray:
    """Coefficients c_m with f_N(η) = Σ c_m η^{2m}."""
    m = np.arange(terms, dtype=float)
    nu = (N - 2) / 2
    logmag = (
        special.gammaln((2 * m + N) / 4)
        - special.gammaln(m + 1)
        - special.gammaln(m + N / 2)
        - (2 * m + nu) * math.log(2.0)
        - math.log(4.0)
    )
    return np.where(m % 2 == 0, 1.0, -1.0) * np.exp(logmag)


def f_at_zero(N: int) -> float:
    """f_N(0) = 2^{(2-N)/2} Γ(N/4) / (4 Γ(N/2))."""
    return 2.0 ** ((2 - N) / 2) * math.gamma(N / 4) / (4 * math.gamma(N / 2))


def _eval_series(N: int, eta: np.ndarray) -> np.ndarray:
    coef = series_coefficients(N, 60)
    x = eta * eta
    out = np.zeros_like(eta)
    for c in coef[::-1]:  # Horner in η²
        out = out * x + c
    return out


def _panel_sum(N: int, eta: np.ndarray, s_max: float, panels: int) -> np.ndarray:
    edges = np.linspace(0.0, s_max, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    s = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    w = (half[:, None] * _GL_WEIGHTS[None, :]).ravel() * np.exp(-(s**4))
    nu = (N - 2) / 2
    out = np.empty_like(eta)
    chunk = max(1, 2_000_000 // s.size)
    for i in range(0, eta.size, chunk):
        e = eta[i : i + chunk, None]
        z = e * s[None, :]
        # η^{1-N} (ηs)^{N/2} J_ν(ηs) written to stay finite as η -> 0
        integrand = e ** (1 - N / 2) * s[None, :] ** (N / 2) * special.jv(nu, z)
        out[i : i + chunk] = integrand @ w
    return out


def _eval_panel(N: int, eta: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    # exp(-s^4) below tol/100 beyond s_max; the Bessel factor grows at most like (ηs)^{(N-1)/2}
    s_max = (math.log(100.0 / quad.tol) + 2.0) ** 0.25
    eta_hi = float(eta.max()) if eta.size else 0.0
    panels = max(4, int(math.ceil(s_max * (eta_hi + 1.0) / 6.0)))
    # validate the panel rule on the hardest abscissae before applying it everywhere
    probe = np.unique(np.concatenate([eta[np.argsort(eta)[-4:]], eta[:: max(1, eta.size // 4)]]))
    residual = math.inf
    while panels <= quad.panel_budget:
        coarse = _panel_sum(N, probe, s_max, panels)
        fine = _panel_sum(N, probe, s_max, 2 * panels)
        residual = float(np.max(np.abs(fine - coarse)))
        if residual <= quad.tol:
            # the coarse rule is within the residual of the refined one
            return _panel_sum(N, eta, s_max, panels)
        panels *= 2
    raise KernelQuadratureError(
        f"panel quadrature of f_{N} failed within {quad.panel_budget} panels", residual
    )


def eval_f(N: int, eta, quad: QuadratureSpec = DEFAULT_QUAD):
    """Evaluate f_N at η >= 0 (scalar or array)."""
    if N < 1:
        raise ValueError("dimension must be >= 1")
    arr = np.asarray(eta, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("eta must be finite and nonnegative")
    flat = arr.ravel()
    out = np.empty_like(flat)
    if quad.method == "series":
        use_series = np.ones(flat.shape, bool)
    elif quad.method == "panel":
        use_series = flat == 0.0  # removable singularity: the series limit
    else:
        use_series = flat <= SERIES_ETA
    if use_series.any():
        out[use_series] = _eval_series(N, flat[use_series])
    if (~use_series).any():
        out[~use_series] = _eval_panel(N, flat[~use_series], quad)
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# derivatives via f_N' = -η f_{N+2}


@lru_cache(maxsize=None)
def derivative_terms(order: int) -> tuple[tuple[int, tuple[float, ...]], ...]:
    """f_N^{(order)} = Σ_j p_j(η) f_{N+2j}; returns ((j, coeffs of p_j), ...).

    Coefficients are in increasing powers of η and independent of N.
    """
    terms = {0: np.array([1.0])}
    for _ in range(order):
        nxt: dict[int, np.ndarray] = {}
        for j, p in terms.items():
            dp = P.polyder(p)
            if dp.size and np.any(dp):
                nxt[j] = P.polyadd(nxt.get(j, np.zeros(1)), dp)
            # p(η) * f_{N+2j}' = p(η) * (-η) f_{N+2j+2}
            nxt[j + 1] = P.polyadd(nxt.get(j + 1, np.zeros(1)), P.polymulx(-p))
        terms = nxt
    return tuple((j, tuple(float(c) for c in P.polytrim(p))) for j, p in sorted(terms.items()))


def eval_f_deriv(N: int, eta, order: int, quad: QuadratureSpec = DEFAULT_QUAD):
    """n-th derivative of f_N from the index-shift recursion (no differencing)."""
    if order not in (1, 2, 3, 4, 5):
        raise ValueError("order must be in 1..5")
    arr = np.asarray(eta, dtype=float)
    out = np.zeros_like(arr)
    for j, coeffs in derivative_terms(order):
        out = out + P.polyval(arr, coeffs) * eval_f(N + 2 * j, arr, quad)
    return float(out) if np.ndim(out) == 0 else out


def ode_residual(N: int, eta, quad: QuadratureSpec = DEFAULT_QUAD, shift: float = 0.0):
    """f''' + (N-1)/η f'' - (N-1)/η² f' - (η/4) f, with f optionally shifted by a constant."""
    arr = np.asarray(eta, dtype=float)
    if np.any(arr <= 0):
        raise ValueError("the ODE is singular at eta = 0")
    f = eval_f(N, arr, quad) + shift
    f1 = eval_f_deriv(N, arr, 1, quad)
    f2 = eval_f_deriv(N, arr, 2, quad)
    f3 = eval_f_deriv(N, arr, 3, quad)
    res = f3 + (N - 1) / arr * f2 - (N - 1) / arr**2 * f1 - arr / 4 * f
    return float(res) if np.ndim(res) == 0 else res


# ---------------------------------------------------------------------------
# envelope fit, tables


def fit_envelope(eta: np.ndarray, values: np.ndarray, floor: float = 1e-13) -> tuple[float, float]:
    """Fit |f| <= K exp(-μ η^{4/3}).

    μ comes from least squares on log|f| at the local maxima of |f| (zeros make a
    pointwise fit ill-posed); K is then raised until every sample is covered.
    """
    eta = np.asarray(eta, float)
    mag = np.abs(np.asarray(values, float))
    top = mag.max()
    interior = np.arange(1, mag.size - 1)
    peaks = interior[(mag[interior] >= mag[interior - 1]) & (mag[interior] > mag[interior + 1])]
    peaks = peaks[mag[peaks] > floor * top]
    x = eta[peaks] ** (4.0 / 3.0)
    if peaks.size >= 2:
        slope, _ = np.polyfit(x, np.log(mag[peaks]), 1)
        mu = max(-slope, 1e-6)
    else:
        mu = 1e-6
    K = float(np.max(mag * np.exp(mu * eta ** (4.0 / 3.0))))
    return K, float(mu)


@dataclass
class KernelTable:
    """Tabulated f_N and derivatives on a uniform η grid.

    Interpolation is piecewise quintic Hermite (value plus two derivatives per
    node), so ``interpolation_order`` is 5.
    """

    N: int
    eta_max: float
    eta: np.ndarray
    derivs: np.ndarray  # derivs[n] = f_N^{(n)} on eta, n = 0..5
    quad: QuadratureSpec
    K: float
    mu: float
    interpolation_order: int = 5
    _interp: dict = field(default_factory=dict, repr=False)

    @property
    def f(self) -> np.ndarray:
        return self.derivs[0]

    def __call__(self, eta, order: int = 0) -> np.ndarray:
        """Interpolated f_N^{(order)}; zero beyond eta_max."""
        if order not in (0, 1, 2, 3):
            raise ValueError("tables interpolate derivative orders 0..3")
        if order not in self._interp:
            data = np.stack(self.derivs[order : order + 3], axis=1)
            self._interp[order] = BPoly.from_derivatives(self.eta, data)
        arr = np.asarray(eta, float)
        out = np.zeros_like(arr)
        inside = arr <= self.eta_max
        out[inside] = self._interp[order](arr[inside])
        return out

    def sign_changes(self, upto: float | None = None) -> int:
        f = self.f if upto is None else self.f[self.eta <= upto]
        s = np.sign(f[np.abs(f) > 1e-14 * abs(self.f[0])])
        return int(np.count_nonzero(s[1:] != s[:-1]))

    def to_csv(self, path) -> None:
        """Write ``eta,f,f1,f2`` rows plus a ``.meta.json`` sidecar."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eta", "f", "f1", "f2"])
            for row in zip(self.eta, self.derivs[0], self.derivs[1], self.derivs[2]):
                w.writerow([f"{v:.17g}" for v in row])
        meta = {
            "N": self.N,
            "eta_max": self.eta_max,
            "tolerance": self.quad.tol,
            "K": self.K,
            "mu": self.mu,
            "quadrature": self.quad.method,
            "samples": int(self.eta.size),
        }
        path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> "KernelTable":
        """Reload a table; derivatives 3..5 are recomputed from the recursion."""
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        quad = QuadratureSpec(method=meta.get("quadrature", "auto"), tol=meta["tolerance"])
        eta = data[:, 0]
        higher = [eval_f_deriv(meta["N"], eta, n, quad) for n in (3, 4, 5)]
        derivs = np.vstack([data[:, 1], data[:, 2], data[:, 3], *higher])
        return cls(meta["N"], meta["eta_max"], eta, derivs, quad, meta["K"], meta["mu"])


def _profiles(N: int, eta: np.ndarray, upto: int, quad: QuadratureSpec) -> list[np.ndarray]:
    return [np.asarray(eval_f(N + 2 * j, eta, quad)) for j in range(upto + 1)]


def _combine(eta: np.ndarray, profiles: list[np.ndarray], order: int) -> np.ndarray:
    out = np.zeros_like(eta)
    for j, coeffs in derivative_terms(order):
        out = out + P.polyval(eta, coeffs) * profiles[j]
    return out


def build_kernel_table(
    N: int, eta_max: float = 20.0, resolution: int = 2001, quad: QuadratureSpec = DEFAULT_QUAD
) -> KernelTable:
    """Tabulate f_N^{(n)}, n = 0..5, on ``resolution`` uniform nodes of [0, eta_max]."""
    if not eta_max > 0:
        raise ValueError("eta_max must be positive")
    if resolution < 16:
        raise ValueError("resolution must be >= 16")
    eta = np.linspace(0.0, eta_max, resolution)
    prof = _profiles(N, eta, 5, quad)
    derivs = np.vstack([prof[0]] + [_combine(eta, prof, n) for n in range(1, 6)])
    K, mu = fit_envelope(eta, derivs[0])
    return KernelTable(N, float(eta_max), eta, derivs, quad, K, mu)


@lru_cache(maxsize=None)
def integration_table(N: int) -> KernelTable:
    """Shared fine table reaching far enough that the tail is below 1e-17."""
    return build_kernel_table(N, INTEGRAL_ETA_CUT, 961)


# ---------------------------------------------------------------------------
# radial integrals


def _gl_panels(a: float, b: float, width: float) -> tuple[np.ndarray, np.ndarray]:
    n = max(1, int(math.ceil((b - a) / width)))
    edges = np.linspace(a, b, n + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_NODES).ravel()
    w = (half[:, None] * _GL_WEIGHTS).ravel()
    return x, w


def radial_moment(N: int, beta: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """∫_0^∞ η^{N-1-β} f_N(η) dη for 0 <= β < N.

    [0, 1] is integrated term by term from the power series (exact for the
    integrable η^{N-1-β} singularity); [1, η_cut] by Gauss-Legendre panels.
    """
    if not 0 <= beta < N:
        raise ValueError("beta must lie in [0, N)")
    p = N - 1 - beta
    coef = series_coefficients(N, 60)
    head = float(np.sum(coef / (p + 2 * np.arange(coef.size) + 1)))
    x, w = _gl_panels(1.0, INTEGRAL_ETA_CUT, 0.5)
    tail = float(np.sum(w * x**p * eval_f(N, x, quad)))
    return head + tail


def alpha_normalization(N: int, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """α_N with ∫ b_N(x, t) dx = 1; uses the surface area of S^{N-1}."""
    total = sphere_area(N) * radial_moment(N, 0.0, quad)
    if not abs(total) > 1e-12:
        raise KernelQuadratureError(f"normalization integral for N={N} vanished", abs(total))
    return 1.0 / total


def lq_scaling_mass(N: int, n: int, q: float, t: float, quad: QuadratureSpec = DEFAULT_QUAD) -> float:
    """∫_{R^N} |f_N^{(n)}(|y| t^{-1/4})|^q dy, integrated radially in |y|."""
    if not t > 0 or not q > 1:
        raise ValueError("need t > 0 and q > 1")
    if n not in (0, 1, 2, 3):
        raise ValueError("derivative order must be 0..3")
    table = integration_table(N)
    scale = t**0.25
    r, w = _gl_panels(0.0, INTEGRAL_ETA_CUT * scale, 0.05)
    vals = np.abs(table(r / scale, n)) ** q
    return sphere_area(N) * float(np.sum(w * vals * r ** (N - 1)))


def kernel_on_grid(N: int, r: np.ndarray, t: float) -> np.ndarray:
    """b_N(x, t) for an array of radii |x|, from the shared table."""
    table = integration_table(N)
    return alpha_normalization_cached(N) * t ** (-N / 4) * table(np.asarray(r) / t**0.25)


@lru_cache(maxsize=None)
def alpha_normalization_cached(N: int) -> float:
    return alpha_normalization(N)


def tail_mass(N: int, eta_c: float) -> float:
    """∫_{|y| > eta_c} |b_N(y, 1)| dy.

    Integrated from the table up to its end; beyond that the fitted (K, μ)
    envelope bounds the remainder.
    """
    table = integration_table(N)
    head = 0.0
    if eta_c < table.eta_max:
        x, w = _gl_panels(eta_c, table.eta_max, 0.05)
        head = float(np.sum(w * np.abs(table(x)) * x ** (N - 1)))
    K, mu = table.K, table.mu
    # ∫_{η0}^∞ K e^{-μ η^{4/3}} η^{N-1} dη via u = μ η^{4/3}
    a = 3.0 * N / 4.0
    u0 = mu * max(eta_c, table.eta_max) ** (4.0 / 3.0)
    tail = K * 0.75 * mu ** (-a) * special.gamma(a) * special.gammaincc(a, u0)
    return alpha_normalization_cached(N) * sphere_area(N) * (head + float(tail))


def hessian_l1_norm(N: int) -> float:
    """∫ |∇²b_N(y, 1)|_op dy; the Duhamel gradient constant is twice this."""
    table = integration_table(N)
    x, w = _gl_panels(1e-9, INTEGRAL_ETA_CUT, 0.05)
    radial = np.abs(table(x, 2))
    if N > 1:
        radial = np.maximum(radial, np.abs(table(x, 1)) / x)
    return alpha_normalization_cached(N) * sphere_area(N) * float(np.sum(w * radial * x ** (N - 1)))
