"""The lower-order flux g(∇u) and its bounded truncation.

Vectors carry their components on the leading axis, so a single vector has
shape ``(N,)`` and a gradient field has shape ``(N, *grid.shape)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import VectorField

FORMS = ("zero", "cubic", "power", "truncated")


def _smooth_step(x):
    # C^∞ transition: 0 for x <= 0, 1 for x >= 1
    x = np.asarray(x, float)
    a = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
    b = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1.0 - x, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class ThetaCutoff:
    """θ ∈ C_0^∞(R) with θ(s) = s on [-1, 1] and θ = 0 for |s| >= outer."""

    outer: float = 2.0

    def __post_init__(self):
        if not self.outer > 1:
            raise ValueError("outer support radius must exceed 1")

    def __call__(self, s):
        s = np.asarray(s, float)
        chi = 1.0 - _smooth_step((np.abs(s) - 1.0) / (self.outer - 1.0))
        return s * chi

    @property
    def sup(self) -> float:
        s = np.linspace(1.0, self.outer, 20001)
        return float(np.max(np.abs(self(s))))


@dataclass(frozen=True)
class NonlinearitySpec:
    """A member of the catalogue of fluxes g.

    ``growth_c`` and ``growth_alpha`` declare the envelope
    ``|g(ξ)| <= growth_c |ξ|^growth_alpha + growth_c``.  For the truncated form,
    ``ref_g`` holds g(∇u_0) (per grid node, components first) and ``base`` the
    untruncated flux.
    """

    form: str
    c: float = 1.0
    alpha: float = 1.0
    growth_c: float = 1.0
    growth_alpha: float = 1.0
    base: "NonlinearitySpec | None" = None
    ref_g: np.ndarray | None = field(default=None, compare=False, repr=False)
    theta: ThetaCutoff | None = None
    bound: float | None = None  # sup|h| for the truncated form

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown form {self.form!r}")
        if self.form in ("cubic", "power") and not self.c > 0:
            raise ValueError("c must be positive")
        if self.form == "power" and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.form == "truncated" and (self.base is None or self.ref_g is None or self.theta is None):
            raise ValueError("truncated form needs base, ref_g and theta")

    @property
    def conservative(self) -> bool:
        return self.form in ("zero", "cubic", "power")

    def g(self, xi):
        return eval_g(self, xi)

    def potential(self, xi):
        return eval_potential(self, xi)


def zero() -> NonlinearitySpec:
    return NonlinearitySpec("zero", growth_c=1.0, growth_alpha=1.0)


def cubic(c: float = 1.0) -> NonlinearitySpec:
    """g(ξ) = (c|ξ|² + 1) ξ with the declared envelope (c+1)|ξ|³ + (c+1)."""
    return NonlinearitySpec("cubic", c=c, alpha=3.0, growth_c=c + 1.0, growth_alpha=3.0)


def power(alpha: float, c: float = 1.0) -> NonlinearitySpec:
    """g(ξ) = c |ξ|^{α-1} ξ."""
    return NonlinearitySpec("power", c=c, alpha=alpha, growth_c=c, growth_alpha=alpha)


def _norm(xi: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(xi * xi, axis=0))


def _eval_base(spec: NonlinearitySpec, xi: np.ndarray) -> np.ndarray:
    if spec.form == "zero":
        return np.zeros_like(xi)
    r = _norm(xi)
    if spec.form == "cubic":
        return (spec.c * r * r + 1.0) * xi
    # power: |ξ|^{α-1} ξ, continuous at 0 for every α > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, r ** (spec.alpha - 1.0), 0.0)
    return spec.c * scale * xi


def eval_g(spec: NonlinearitySpec, xi) -> np.ndarray:
    xi = np.asarray(xi, float)
    if spec.form != "truncated":
        return _eval_base(spec, xi)
    ref = spec.ref_g
    return ref + spec.theta(_eval_base(spec.base, xi) - ref)


def eval_potential(spec: NonlinearitySpec, xi) -> np.ndarray:
    """φ with ∇φ = g, normalized by φ(0) = 0."""
    if not spec.conservative:
        raise ValueError(f"form {spec.form!r} has no potential")
    xi = np.asarray(xi, float)
    r = _norm(xi)
    if spec.form == "zero":
        return np.zeros_like(r)
    if spec.form == "cubic":
        return spec.c * r**4 / 4.0 + r**2 / 2.0
    return spec.c * r ** (spec.alpha + 1.0) / (spec.alpha + 1.0)


def truncate_to_h(base: NonlinearitySpec, ref_grad, theta: ThetaCutoff | None = None) -> NonlinearitySpec:
    """h(ξ) = g(∇u_0) + θ(g(ξ) - g(∇u_0)) componentwise.

    ``ref_grad`` is ∇u_0, either a VectorField or a plain array/vector with the
    components on the leading axis.  The result is bounded by
    ``sup|g(∇u_0)| + sup|θ| √N``.
    """
    theta = theta or ThetaCutoff()
    grad = ref_grad.components if isinstance(ref_grad, VectorField) else np.asarray(ref_grad, float)
    ref_g = _eval_base(base, grad)
    N = grad.shape[0]
    bound = float(np.max(_norm(ref_g))) + theta.sup * math.sqrt(N)
    return NonlinearitySpec(
        "truncated",
        c=base.c,
        alpha=base.alpha,
        growth_c=bound,
        growth_alpha=0.0,
        base=base,
        ref_g=ref_g,
        theta=theta,
        bound=bound,
    )


def clamp_active(spec: NonlinearitySpec, xi) -> np.ndarray:
    """True where some component of g(ξ) - g(∇u_0) leaves [-1, 1]."""
    if spec.form != "truncated":
        raise ValueError("only truncated specs have a clamp")
    diff = _eval_base(spec.base, np.asarray(xi, float)) - spec.ref_g
    return np.any(np.abs(diff) > 1.0, axis=0)


@dataclass
class GrowthReport:
    max_ratio: float
    worst_xi: np.ndarray
    ok: bool


def random_directions(N: int, count: int, rng) -> np.ndarray:
    v = rng.standard_normal((N, count))
    return v / np.linalg.norm(v, axis=0)


def growth_check(spec: NonlinearitySpec, sample_count: int = 10_000, N: int = 2, seed: int = 0) -> GrowthReport:
    """Largest |g(ξ)| / (c_g |ξ|^α_g + c_g) over random ξ with |ξ| in [1e-3, 1e3]."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    if spec.form == "truncated":
        N = spec.ref_g.shape[0]
    radii = 10.0 ** rng.uniform(-3, 3, sample_count)
    xi = random_directions(N, sample_count, rng) * radii
    if spec.form == "truncated":
        # probe every reference point with the same ξ batch, cycling through nodes
        ref = spec.ref_g.reshape(N, -1)
        idx = rng.integers(0, ref.shape[1], sample_count)
        local = replace(spec, ref_g=ref[:, idx])
        gv = eval_g(local, xi)
    else:
        gv = eval_g(spec, xi)
    ratio = _norm(gv) / (spec.growth_c * radii**spec.growth_alpha + spec.growth_c)
    i = int(np.argmax(ratio))
    return GrowthReport(float(ratio[i]), xi[:, i].copy(), bool(ratio[i] <= 1.0))
