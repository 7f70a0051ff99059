"""Periodic box [-L, L)^d, discrete fields and spectral operators.

Conventions
-----------
Grid points are ``x_j = -L + j Δx`` with ``Δx = 2L/n``.  Fourier
coefficients are normalised as ``f̂(κ) = Δx^d Σ_j f_j e^{-iκ·x_j}`` so the
zero mode equals mean value times box volume, and
``|f|_2² = (2L)^{-d} Σ_κ |f̂(κ)|²``.

First-derivative symbols ``iκ`` have the Nyquist wavenumber set to zero
(required for real output on an even grid).  The Laplacian symbol is the
square of the same symbols, so ``divergence(gradient(f)) == laplacian(f)``
holds to rounding, and the Bessel weights ``(1 + |κ|²)^{-k}`` of the
negative Sobolev norms use the same ``|κ|²``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class PeriodicGrid:
    dimension: int
    half_width: float
    n: int

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two >= 16, got {self.n}")

    @property
    def L(self) -> float:
        return self.half_width

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dimension

    @property
    def size(self) -> int:
        return self.n**self.dimension

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dimension

    @property
    def volume(self) -> float:
        return (2.0 * self.half_width) ** self.dimension

    @cached_property
    def axis(self) -> Array:
        return -self.half_width + self.spacing * np.arange(self.n)

    @cached_property
    def coords(self) -> tuple[Array, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dimension), indexing="ij"))

    @cached_property
    def points(self) -> Array:
        """Coordinates stacked as ``(d, *shape)``, the layout the model callables take."""
        return np.stack(self.coords)

    @cached_property
    def wavenumbers(self) -> Array:
        """Per-axis wavenumbers π m / L, m = -n/2 .. n/2-1, in FFT order."""
        return np.pi * np.fft.fftfreq(self.n, d=1.0 / self.n) / self.half_width

    @cached_property
    def _dk(self) -> tuple[Array, ...]:
        k = self.wavenumbers.copy()
        k[self.n // 2] = 0.0
        out = []
        for ax in range(self.dimension):
            shape = [1] * self.dimension
            shape[ax] = self.n
            out.append(k.reshape(shape))
        return tuple(out)

    @cached_property
    def ksq(self) -> Array:
        """|κ|² as used by the Laplacian symbol (Nyquist rows zeroed)."""
        return sum(np.broadcast_to(k * k, self.shape) for k in self._dk)

    @cached_property
    def ksq_full(self) -> Array:
        k = self.wavenumbers
        parts = []
        for ax in range(self.dimension):
            shape = [1] * self.dimension
            shape[ax] = self.n
            parts.append(np.broadcast_to((k * k).reshape(shape), self.shape))
        return sum(parts)

    @cached_property
    def _dealias_mask(self) -> Array:
        m = np.abs(np.fft.fftfreq(self.n, d=1.0 / self.n)) <= self.n // 3
        mask = np.ones(self.shape, dtype=bool)
        for ax in range(self.dimension):
            shape = [1] * self.dimension
            shape[ax] = self.n
            mask = mask & m.reshape(shape)
        return mask

    # -- transforms -------------------------------------------------------

    def fft(self, f: Array) -> Array:
        return np.fft.fftn(f, axes=self._axes)

    def ifft(self, F: Array) -> Array:
        return np.fft.ifftn(F, axes=self._axes).real

    @property
    def _axes(self):
        return tuple(range(-self.dimension, 0))

    def _apply_symbol(self, f: Array, symbol: Array) -> Array:
        return self.ifft(self.fft(f) * symbol)

    # -- operators on raw arrays -----------------------------------------

    def laplacian(self, f: Array) -> Array:
        return self._apply_symbol(f, -self.ksq)

    def gradient(self, f: Array) -> Array:
        F = self.fft(f)
        return np.stack([self.ifft(1j * k * F) for k in self._dk])

    def divergence(self, F: Array) -> Array:
        acc = 0
        for ax, k in enumerate(self._dk):
            acc = acc + 1j * k * self.fft(F[ax])
        return self.ifft(acc)

    def gamma(self, f: Array, k: int = 1) -> Array:
        """(I - Δ)^{-k} f."""
        return self._apply_symbol(f, (1.0 + self.ksq) ** (-k))

    def resolvent(self, f: Array, c: float) -> Array:
        """(I - cΔ)^{-1} f."""
        return self._apply_symbol(f, 1.0 / (1.0 + c * self.ksq))

    def smooth(self, f: Array, width: float) -> Array:
        """Periodic Gaussian smoothing with standard deviation ``width`` (last d axes)."""
        if width <= 0:
            return f
        return self._apply_symbol(f, np.exp(-0.5 * width**2 * self.ksq_full))

    def dealias(self, f: Array) -> Array:
        """2/3-rule low-pass filter."""
        return self._apply_symbol(f, self._dealias_mask)

    # -- reductions -------------------------------------------------------

    def integrate(self, f: Array) -> float:
        return float(np.sum(f) * self.cell_volume)

    def inner(self, f: Array, g: Array) -> float:
        return float(np.sum(f * g) * self.cell_volume)

    def norm(self, f: Array, p=2) -> float:
        if p in (np.inf, "inf"):
            return float(np.max(np.abs(f))) if f.size else 0.0
        if p == 1:
            return float(np.sum(np.abs(f)) * self.cell_volume)
        if p == 2:
            return float(np.sqrt(np.sum(f * f) * self.cell_volume))
        raise ValueError(f"unsupported p={p!r}; use 1, 2 or inf")

    def sobolev_norm(self, f: Array, k: int) -> float:
        """Spectral |f|_{-k}; k = 0 gives |f|_2 through Parseval."""
        F = self.fft(f)
        weight = (1.0 + self.ksq) ** (-k)
        total = np.sum(np.abs(F) ** 2 * weight) * self.cell_volume / self.size
        return float(np.sqrt(total))

    # -- resampling -------------------------------------------------------

    def refine(self, f: Array, target: "PeriodicGrid") -> Array:
        """Trigonometric interpolation onto a grid with the same box and a multiple of n."""
        if target.dimension != self.dimension or target.half_width != self.half_width:
            raise ValueError("grids must share dimension and box")
        if target.n == self.n:
            return np.array(f, dtype=float, copy=True)
        if target.n < self.n:
            stride = self.n // target.n
            return np.array(f[(slice(None, None, stride),) * self.dimension], dtype=float)
        F = self.fft(f)
        for ax in range(self.dimension):
            F = _pad_axis(F, ax, target.n)
        return target.ifft(F)


def _pad_axis(F: Array, axis: int, n_new: int) -> Array:
    n = F.shape[axis]
    h = n // 2
    F = np.moveaxis(F, axis, 0)
    out = np.zeros((n_new,) + F.shape[1:], dtype=complex)
    out[:h] = F[:h]
    out[h] = 0.5 * F[h]
    out[n_new - h] = 0.5 * F[h]
    out[n_new - h + 1:] = F[h + 1:]
    return np.moveaxis(out * (n_new / n), 0, axis)


@dataclass(frozen=True)
class ScalarField:
    grid: PeriodicGrid
    values: Array

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn) -> "ScalarField":
        return cls(grid, fn(grid.coords))

    def _check(self, other: "ScalarField") -> None:
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        self._check(other)
        return ScalarField(self.grid, self.values - other.values)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        self._check(other)
        return ScalarField(self.grid, self.values + other.values)


@dataclass(frozen=True)
class VectorField:
    grid: PeriodicGrid
    components: Array

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.shape != (self.grid.dimension,) + self.grid.shape:
            raise ValueError(f"components shape {comps.shape} does not match grid")
        if not np.all(np.isfinite(comps)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "components", comps)


def mass(f: ScalarField) -> float:
    return f.grid.integrate(f.values)


def lp_norm(f: ScalarField, p=2) -> float:
    return f.grid.norm(f.values, p)


def neg_sobolev_norm(f: ScalarField, k: int) -> float:
    if k not in (0, 1, 2):
        raise ValueError(f"k must be 0, 1 or 2, got {k}")
    return f.grid.sobolev_norm(f.values, k)


def laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, f.grid.laplacian(f.values))


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, f.grid.gradient(f.values))


def divergence(F: VectorField) -> ScalarField:
    return ScalarField(F.grid, F.grid.divergence(F.components))


def apply_gamma(f: ScalarField, k: int = 1) -> ScalarField:
    if k not in (1, 2):
        raise ValueError(f"k must be 1 or 2, got {k}")
    return ScalarField(f.grid, f.grid.gamma(f.values, k))


@dataclass
class InequalityReport:
    """Measured ratios (each must be ≤ 1) for the three functional inequalities.

    ``dual_l2``        |f|_{-1} / |f|_2
    ``divergence``     |div F|_{-1} / (2 |F|_2)
    ``interpolation``  |f|_{-1} / (|f|_2^{1/2} |f|_{-2}^{1/2})
    """

    dual_l2: float
    divergence: float
    interpolation: float
    slack: float = 1e-12

    @property
    def passed(self) -> bool:
        return max(self.dual_l2, self.divergence, self.interpolation) <= 1.0 + self.slack


def _ratio(num: float, den: float) -> float:
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den


def check_functional_inequalities(f: ScalarField, F: VectorField, slack: float = 1e-12) -> InequalityReport:
    grid = f.grid
    l2 = grid.sobolev_norm(f.values, 0)
    m1 = grid.sobolev_norm(f.values, 1)
    m2 = grid.sobolev_norm(f.values, 2)
    F_l2 = float(np.sqrt(sum(grid.sobolev_norm(c, 0) ** 2 for c in F.components)))
    div_m1 = grid.sobolev_norm(grid.divergence(F.components), 1)
    return InequalityReport(
        dual_l2=_ratio(m1, l2),
        divergence=_ratio(div_m1, 2.0 * F_l2),
        interpolation=_ratio(m1, np.sqrt(l2 * m2)),
        slack=slack,
    )
