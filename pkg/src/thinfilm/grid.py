"""Box grids, sampled fields and spectral differential operators.

Two boundary types are supported:

* ``periodic``: nodes ``x_i = lower + i h``; trigonometric basis (FFT).
* ``neumann``: cell-centred nodes ``x_i = lower + (i + 1/2) h``; cosine basis
  (DCT-II).  Every member of the basis has zero normal derivative on the box
  faces, so ``∇u·ν = 0`` holds exactly.  Gradient components live in the
  matching sine basis (DST-II) and the divergence is the exact negative
  adjoint of the gradient, which is the discrete form of integration by parts
  with vanishing boundary flux.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np
from scipy import fft as sfft

BOUNDARIES = ("periodic", "neumann")


@dataclass(frozen=True)
class Grid:
    extents: tuple[float, ...]
    points: tuple[int, ...]
    boundary: str = "neumann"
    lower: tuple[float, ...] | None = None

    def __post_init__(self):
        ext = tuple(float(e) for e in self.extents)
        pts = tuple(int(p) for p in self.points)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "points", pts)
        if self.lower is None:
            object.__setattr__(self, "lower", (0.0,) * len(ext))
        else:
            object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        if not 1 <= len(ext) <= 3:
            raise ValueError("dimension must be 1, 2 or 3")
        if len(pts) != len(ext) or len(self.lower) != len(ext):
            raise ValueError("extents, points and lower must have the same length")
        if any(e <= 0 for e in ext):
            raise ValueError("extents must be positive")
        if any(p < 8 for p in pts):
            raise ValueError("at least 8 points per axis are required")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}")

    @classmethod
    def cube(cls, N: int, extent: float, points: int, boundary: str = "neumann", centered=False):
        lower = (-extent / 2,) * N if centered else None
        return cls((extent,) * N, (points,) * N, boundary, lower)

    @property
    def N(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(e / p for e, p in zip(self.extents, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def axis(self, i: int) -> np.ndarray:
        h = self.spacing[i]
        offset = 0.5 if self.boundary == "neumann" else 0.0
        return self.lower[i] + (np.arange(self.points[i]) + offset) * h

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis(i) for i in range(self.N)], indexing="ij")

    @property
    def spectral(self) -> "Spectral":
        return _spectral(self)


@lru_cache(maxsize=32)
def _spectral(grid: Grid) -> "Spectral":
    return Spectral(grid)


class Spectral:
    """Transforms and symbols for one grid (cached per grid)."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.periodic = grid.boundary == "periodic"

    # wavenumbers along one axis in the layout used by ``forward``
    def wavenumbers(self, i: int, last_real: bool = True) -> np.ndarray:
        n, L = self.grid.points[i], self.grid.extents[i]
        if not self.periodic:
            return np.pi * np.arange(n) / L
        if last_real and i == self.grid.N - 1:
            return 2 * np.pi * np.fft.rfftfreq(n, d=1.0 / n) / L
        return 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n) / L

    @cached_property
    def k_vectors(self) -> list[np.ndarray]:
        ks = [self.wavenumbers(i) for i in range(self.grid.N)]
        return np.meshgrid(*ks, indexing="ij")

    @cached_property
    def lam(self) -> np.ndarray:
        """Eigenvalues of -Δ in coefficient layout."""
        return sum(k * k for k in self.k_vectors)

    def forward(self, values: np.ndarray) -> np.ndarray:
        if self.periodic:
            return sfft.rfftn(values, norm="ortho")
        return sfft.dctn(values, type=2, norm="ortho")

    def backward(self, coeffs: np.ndarray) -> np.ndarray:
        if self.periodic:
            return sfft.irfftn(coeffs, s=self.grid.shape, norm="ortho")
        return sfft.idctn(coeffs, type=2, norm="ortho")

    def apply_symbol(self, values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        return self.backward(self.forward(values) * symbol)

    # single-axis derivatives ------------------------------------------------
    def grad_axis(self, values: np.ndarray, i: int) -> np.ndarray:
        n, L = self.grid.points[i], self.grid.extents[i]
        if self.periodic:
            c = sfft.rfft(values, axis=i)
            k = 2 * np.pi * np.fft.rfftfreq(n, d=1.0 / n) / L
            if n % 2 == 0:
                k[-1] = 0.0  # derivative of the Nyquist mode is not representable
            c *= _along(1j * k, i, values.ndim)
            return sfft.irfft(c, n=n, axis=i)
        c = sfft.dct(values, type=2, norm="ortho", axis=i)
        k = np.pi * np.arange(1, n) / L
        sine = np.zeros_like(c)
        idx_src = [slice(None)] * values.ndim
        idx_dst = [slice(None)] * values.ndim
        idx_src[i] = slice(1, n)
        idx_dst[i] = slice(0, n - 1)
        sine[tuple(idx_dst)] = -c[tuple(idx_src)] * _along(k, i, values.ndim)
        return sfft.idst(sine, type=2, norm="ortho", axis=i)

    def div_axis(self, values: np.ndarray, i: int) -> np.ndarray:
        if self.periodic:
            return self.grad_axis(values, i)
        n, L = self.grid.points[i], self.grid.extents[i]
        s = sfft.dst(values, type=2, norm="ortho", axis=i)
        k = np.pi * np.arange(1, n) / L
        cos = np.zeros_like(s)
        idx_src = [slice(None)] * values.ndim
        idx_dst = [slice(None)] * values.ndim
        idx_src[i] = slice(0, n - 1)
        idx_dst[i] = slice(1, n)
        cos[tuple(idx_dst)] = s[tuple(idx_src)] * _along(k, i, values.ndim)
        return sfft.idct(cos, type=2, norm="ortho", axis=i)

    def gradient(self, values: np.ndarray) -> np.ndarray:
        return np.stack([self.grad_axis(values, i) for i in range(self.grid.N)])

    def divergence(self, comps: np.ndarray) -> np.ndarray:
        return sum(self.div_axis(comps[i], i) for i in range(self.grid.N))

    def laplacian(self, values: np.ndarray) -> np.ndarray:
        return self.apply_symbol(values, -self.lam)


def _along(vec: np.ndarray, axis: int, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = vec.size
    return vec.reshape(shape)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid, func) -> "ScalarField":
        return cls(grid, func(*grid.mesh()))

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, c):
        return ScalarField(self.grid, self.values * c)

    __rmul__ = __mul__


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    components: np.ndarray  # shape (N, *grid.shape)

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.shape != (self.grid.N,) + self.grid.shape:
            raise ValueError("vector field needs one component per axis on the grid")
        if not np.all(np.isfinite(c)):
            raise ValueError("field values must be finite")
        c = c.copy()
        c.flags.writeable = False
        object.__setattr__(self, "components", c)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components**2, axis=0))

    def __getitem__(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.components[i])


# ---------------------------------------------------------------------------
# operators


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, f.grid.spectral.gradient(f.values))


def divergence(v: VectorField) -> ScalarField:
    return ScalarField(v.grid, v.grid.spectral.divergence(v.components))


def laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, f.grid.spectral.laplacian(f.values))


def helmholtz_solve(rhs: ScalarField, tau: float) -> ScalarField:
    """Solve (-Δ + τ) w = rhs mode by mode."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    sp = rhs.grid.spectral
    return ScalarField(rhs.grid, sp.apply_symbol(rhs.values, 1.0 / (sp.lam + tau)))


def neumann_poisson_solve(rhs: ScalarField) -> ScalarField:
    """Mean-zero solution of -Δu = rhs - mean(rhs) with the box's boundary condition."""
    sp = rhs.grid.spectral
    c = sp.forward(rhs.values)
    lam = sp.lam.copy()
    lam.flat[0] = 1.0
    c = c / lam
    c.flat[0] = 0.0
    return ScalarField(rhs.grid, sp.backward(c))


def hessian(f: ScalarField) -> np.ndarray:
    """Second derivatives, shape (N, N, *grid.shape)."""
    sp = f.grid.spectral
    N = f.grid.N
    grad = sp.gradient(f.values)
    out = np.empty((N, N) + f.grid.shape)
    for i in range(N):
        for j in range(N):
            if i == j:
                out[i, i] = sp.div_axis(grad[i], i)
            else:
                # mixed derivative: grad[i] is already differentiated along i;
                # differentiate along j with the cosine rule of that axis
                out[i, j] = sp.grad_axis(grad[i], j)
    return out


def _magnitude(f) -> np.ndarray:
    if isinstance(f, VectorField):
        return f.magnitude()
    if isinstance(f, ScalarField):
        return np.abs(f.values)
    return np.abs(np.asarray(f))


def lp_norm(f, p: float, grid: Grid | None = None) -> float:
    """Riemann-sum L^p norm; vector fields use the pointwise Euclidean length."""
    if not (p >= 1):
        raise ValueError("p must be >= 1 or inf")
    grid = grid or f.grid
    mag = _magnitude(f)
    if math.isinf(p):
        return float(mag.max())
    return float((np.sum(mag**p) * grid.cell_volume) ** (1.0 / p))


def integrate(f, grid: Grid | None = None) -> float:
    grid = grid or f.grid
    values = f.values if isinstance(f, ScalarField) else np.asarray(f)
    return float(np.sum(values) * grid.cell_volume)


def mean_value(f: ScalarField) -> float:
    return integrate(f) / f.grid.volume


def coefficient_energy(f: ScalarField) -> float:
    """Σ|coefficient|² scaled by the cell volume; equals lp_norm(f, 2)² (Parseval)."""
    g = f.grid
    if g.boundary == "periodic":
        c = sfft.fftn(f.values, norm="ortho")
    else:
        c = sfft.dctn(f.values, type=2, norm="ortho")
    return float(np.sum(np.abs(c) ** 2) * g.cell_volume)


def energy(u: ScalarField, spec) -> float:
    """∫ (½(Δu)² - φ(∇u)) dx for a conservative nonlinearity."""
    if not spec.conservative:
        raise ValueError("energy is only defined when g has a potential")
    lap = u.grid.spectral.laplacian(u.values)
    phi = spec.potential(u.grid.spectral.gradient(u.values))
    return integrate(0.5 * lap**2 - phi, u.grid)


def lyapunov_energy(u: ScalarField, spec) -> float:
    """∫ (½(Δu)² + φ(∇u)) dx, the functional dissipated by u_t + div(∇Δu - g(∇u)) = 0."""
    if not spec.conservative:
        raise ValueError("energy is only defined when g has a potential")
    lap = u.grid.spectral.laplacian(u.values)
    phi = spec.potential(u.grid.spectral.gradient(u.values))
    return integrate(0.5 * lap**2 + phi, u.grid)


# ---------------------------------------------------------------------------
# serialization


def _grid_meta(grid: Grid) -> dict:
    return {
        "shape": list(grid.shape),
        "extents": list(grid.extents),
        "lower": list(grid.lower),
        "boundary": grid.boundary,
    }


def save_field_csv(f: ScalarField, path) -> None:
    """One row per node: one index per axis, then the value."""
    path = Path(path)
    N = f.grid.N
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"i{a}" for a in range(N)] + ["value"])
        for idx in np.ndindex(*f.grid.shape):
            w.writerow([*idx, f"{f.values[idx]:.17g}"])


def load_field_csv(path, grid: Grid) -> ScalarField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    values = np.empty(grid.shape)
    idx = tuple(data[:, a].astype(int) for a in range(grid.N))
    values[idx] = data[:, -1]
    return ScalarField(grid, values)


def save_field_raw(f: ScalarField, path) -> None:
    """Little-endian float64 in C order plus a ``.json`` sidecar."""
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(_grid_meta(f.grid), indent=2, sort_keys=True)
    )


def load_field_raw(path) -> ScalarField:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    grid = Grid(tuple(meta["extents"]), tuple(meta["shape"]), meta["boundary"], tuple(meta["lower"]))
    values = np.frombuffer(path.read_bytes(), dtype="<f8").reshape(grid.shape)
    return ScalarField(grid, values)
