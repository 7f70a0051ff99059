"""Interacting particle system for the McKean-Vlasov SDE

    dX = b(X, u(t, X)) dt + sqrt(2 Φ(u(t, X))) dW,    u(t, ·) = law density of X(t),

with the marginal density closed by a histogram or Gaussian-kernel
estimate refitted from the ensemble at every step.  Its generator is
Φ(u)Δ + b(·, u)·∇, so the particle marginals follow the PDE in :mod:`fplab.pde`.

Randomness is counter based: the Gaussian increments of step ``k`` come
from a Philox stream keyed by the seed with ``k`` in the counter, so runs are
bitwise reproducible from ``(seed, N, dt, model)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from fplab.errors import DegenerateDensity
from fplab.grid import PeriodicGrid, ScalarField
from fplab.model import ModelProblem, phi
from fplab.pde import step_sizes

Array = np.ndarray

DENSITY_FLOOR = 1e-12
_INIT_STREAM = 0
_STEP_STREAM = 1


def _stream(seed: int, index: int, purpose: int) -> np.random.Generator:
    key = int(seed) % 2**64
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, index, purpose]))


def wrap(positions: Array, L: float) -> Array:
    """Map positions into [-L, L)."""
    out = np.mod(positions + L, 2 * L) - L
    # mod can round up to exactly L
    out[out >= L] -= 2 * L
    return out


@dataclass(frozen=True)
class ParticleEnsemble:
    positions: Array  # (N, d)
    rng_seed: int
    time: float = 0.0
    step_index: int = 0
    mass: float = 1.0

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]


def sample_initial(u0: ScalarField, N: int, seed: int) -> ParticleEnsemble:
    """N i.i.d. draws from u0 / mass(u0) by (conditional) inverse CDF.

    u0 is read as piecewise constant on the cells centred at grid points.
    """
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    grid = u0.grid
    vals = u0.values
    if np.min(vals) < -1e-12:
        raise ValueError(f"initial density has negative values (min {np.min(vals):.3e})")
    vals = np.clip(vals, 0.0, None)
    total = grid.integrate(vals)
    if not total > 0:
        raise ValueError("initial density must have positive mass")

    rng = _stream(seed, 0, _INIT_STREAM)
    dx, L, n = grid.spacing, grid.half_width, grid.n
    U = rng.random((N, grid.dimension))
    jitter = rng.random((N, grid.dimension))

    if grid.dimension == 1:
        idx = _inverse_cdf(vals, U[:, 0])[:, None]
    else:
        rows = vals.sum(axis=1)
        i = _inverse_cdf(rows, U[:, 0])
        cdf = np.cumsum(vals, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cdf /= cdf[:, -1:]
        j = np.empty(N, dtype=np.int64)
        for row in np.unique(i):
            sel = i == row
            j[sel] = np.minimum(np.searchsorted(cdf[row], U[sel, 1], side="right"), n - 1)
        idx = np.stack([i, j], axis=1)

    pos = grid.axis[idx] + (jitter - 0.5) * dx
    return ParticleEnsemble(wrap(pos, L), int(seed), 0.0, 0, float(total))


def _inverse_cdf(weights: Array, U: Array) -> Array:
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return np.minimum(np.searchsorted(cdf, U, side="right"), weights.size - 1)


# ---------------------------------------------------------------------------
# density estimation


@dataclass(frozen=True)
class FittedDensity:
    grid: PeriodicGrid
    values: Array
    kind: str
    bandwidth: float

    def field(self) -> ScalarField:
        return ScalarField(self.grid, self.values)

    def evaluate(self, positions: Array) -> Array:
        if self.kind == "histogram":
            return self.values[tuple(_nearest_index(self.grid, positions).T)]
        return _interpolate(self.grid, self.values, positions)


def _nearest_index(grid: PeriodicGrid, positions: Array) -> Array:
    s = (positions + grid.half_width) / grid.spacing
    return np.mod(np.floor(s + 0.5).astype(np.int64), grid.n)


def _interpolate(grid: PeriodicGrid, values: Array, positions: Array) -> Array:
    """Periodic multilinear interpolation of grid values at arbitrary points."""
    s = (positions + grid.half_width) / grid.spacing
    base = np.floor(s).astype(np.int64)
    frac = s - base
    out = np.zeros(positions.shape[0])
    d = grid.dimension
    for corner in range(2**d):
        w = np.ones(positions.shape[0])
        idx = []
        for ax in range(d):
            bit = (corner >> ax) & 1
            w *= frac[:, ax] if bit else 1.0 - frac[:, ax]
            idx.append(np.mod(base[:, ax] + bit, grid.n))
        out += w * values[tuple(idx)]
    return out


def _cic_deposit(grid: PeriodicGrid, positions: Array) -> Array:
    s = (positions + grid.half_width) / grid.spacing
    base = np.floor(s).astype(np.int64)
    frac = s - base
    counts = np.zeros(grid.size)
    d = grid.dimension
    for corner in range(2**d):
        w = np.ones(positions.shape[0])
        idx = []
        for ax in range(d):
            bit = (corner >> ax) & 1
            w *= frac[:, ax] if bit else 1.0 - frac[:, ax]
            idx.append(np.mod(base[:, ax] + bit, grid.n))
        flat = np.ravel_multi_index(tuple(idx), grid.shape)
        counts += np.bincount(flat, weights=w, minlength=grid.size)
    return counts.reshape(grid.shape)


def silverman_bandwidth(positions: Array) -> float:
    N, d = positions.shape
    sigma = float(np.mean(np.std(positions, axis=0)))
    return (4.0 / (d + 2)) ** (1.0 / (d + 4)) * sigma * N ** (-1.0 / (d + 4))


def _periodic_gaussian_kernel(grid: PeriodicGrid, bw: float) -> Array:
    """Kernel on grid offsets, summed over periodic images, with unit integral."""
    offs = grid.spacing * np.fft.fftfreq(grid.n, d=1.0 / grid.n)
    box = 2 * grid.half_width
    images = np.arange(-2, 3)
    k1 = np.exp(-0.5 * ((offs[:, None] + box * images[None, :]) / bw) ** 2).sum(axis=1)
    kern = k1
    for _ in range(grid.dimension - 1):
        kern = np.multiply.outer(kern, k1)
    return kern / (kern.sum() * grid.cell_volume)


@dataclass(frozen=True)
class DensityEstimator:
    """``kind`` is ``"histogram"`` or ``"gaussian_kernel"``; ``bandwidth`` a float or ``"auto"``."""

    grid: PeriodicGrid
    kind: str = "gaussian_kernel"
    bandwidth: float | str = "auto"

    def __post_init__(self):
        if self.kind not in ("histogram", "gaussian_kernel"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")
        if self.bandwidth != "auto" and not float(self.bandwidth) > 0:
            raise ValueError("bandwidth must be positive or 'auto'")

    def fit(self, ens: ParticleEnsemble) -> FittedDensity:
        grid = self.grid
        if ens.dimension != grid.dimension:
            raise ValueError("ensemble and grid dimensions differ")
        N = ens.N
        if self.kind == "histogram":
            flat = np.ravel_multi_index(tuple(_nearest_index(grid, ens.positions).T), grid.shape)
            counts = np.bincount(flat, minlength=grid.size).reshape(grid.shape)
            dens = counts * (ens.mass / (N * grid.cell_volume))
            return FittedDensity(grid, dens, self.kind, grid.spacing)
        bw = silverman_bandwidth(ens.positions) if self.bandwidth == "auto" else float(self.bandwidth)
        bw = max(bw, 1e-3 * grid.spacing)
        counts = _cic_deposit(grid, ens.positions)
        kern = _periodic_gaussian_kernel(grid, bw)
        dens = np.fft.ifftn(np.fft.fftn(counts) * np.fft.fftn(kern)).real
        dens = np.clip(dens, 0.0, None)
        dens *= ens.mass / grid.integrate(dens)
        return FittedDensity(grid, dens, self.kind, bw)


# ---------------------------------------------------------------------------
# dynamics


def step(ens: ParticleEnsemble, dt: float, model: ModelProblem,
         fitted: FittedDensity | DensityEstimator) -> ParticleEnsemble:
    """Euler-Maruyama update with the density frozen at ``fitted``.

    Passing an estimator instead of a fitted density refits it on ``ens`` first.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if isinstance(fitted, DensityEstimator):
        fitted = fitted.fit(ens)
    grid = fitted.grid
    X = ens.positions
    u_hat = np.maximum(fitted.evaluate(X), DENSITY_FLOOR)
    if np.any(u_hat < 0) or not np.all(np.isfinite(u_hat)):
        raise DegenerateDensity("density estimate negative or non-finite at a particle")
    rng = _stream(ens.rng_seed, ens.step_index, _STEP_STREAM)
    xi = rng.standard_normal(X.shape)
    sigma = np.sqrt(2.0 * np.asarray(phi(model, u_hat)) * dt)
    new = X + sigma[:, None] * xi
    if not model.drift.is_zero:
        new = new + dt * model.drift.b(X.T, u_hat).T
    return replace(ens, positions=wrap(new, grid.half_width), time=ens.time + dt, step_index=ens.step_index + 1)


def simulate(u0: ScalarField, T: float, dt: float, N: int, seed: int, model: ModelProblem,
             estimator: DensityEstimator, snapshot_times: Sequence[float] | None = None,
             *, return_ensemble: bool = False):
    """Run the particle system; returns ``[(t, ScalarField), ...]`` at the snapshot times.

    Snapshot times must lie on the step grid ``{0, dt, 2dt, ..., T}``.
    """
    ens = sample_initial(u0, N, seed)
    steps = step_sizes(T, dt)
    times = [0.0] + [T if i == len(steps) - 1 else (i + 1) * dt for i in range(len(steps))]
    wanted = sorted(set(float(t) for t in (snapshot_times if snapshot_times is not None else [T])))
    marks = {}
    for t in wanted:
        i = int(np.argmin(np.abs(np.array(times) - t)))
        if abs(times[i] - t) > 1e-9 * max(1.0, dt):
            raise ValueError(f"snapshot time {t} is not on the step grid")
        marks[i] = t
    out = []
    fitted = estimator.fit(ens)
    if 0 in marks:
        out.append((0.0, fitted.field()))
    for i, h in enumerate(steps):
        ens = step(ens, h, model, fitted)
        fitted = estimator.fit(ens)
        if i + 1 in marks:
            out.append((times[i + 1], fitted.field()))
    if return_ensemble:
        return out, ens
    return out


def law_distance(a: Sequence[tuple[float, ScalarField]], b: Sequence[tuple[float, ScalarField]]) -> Array:
    """Per-snapshot L¹ distances between two density sequences."""
    if len(a) != len(b):
        raise ValueError("sequences have different lengths")
    out = []
    for (ta, fa), (tb, fb) in zip(a, b):
        if not math.isclose(ta, tb, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"snapshot times differ: {ta} vs {tb}")
        if fa.grid != fb.grid:
            raise ValueError("snapshot grids differ")
        out.append(fa.grid.norm(fa.values - fb.values, 1))
    return np.array(out)
