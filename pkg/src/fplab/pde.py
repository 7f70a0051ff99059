"""Implicit time stepping for u_t - Δβ(u) + div(b(x,u)u) = 0 on a periodic box.

Each step of size h solves the stage equation

    u - hΔβ(u) + h div(b(x,u)u) = g

pseudo-spectrally (nonlinear terms pointwise, derivatives in Fourier space)
with damped Newton-GMRES; a contractive fixed-point iteration is the
fallback.  The spectral Δ and div annihilate the zero mode, so every stage
conserves mass to rounding.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from fplab.errors import LinearSolveFailure, NonConvergence
from fplab.grid import PeriodicGrid, ScalarField, VectorField
from fplab.model import ModelProblem, delta_of

log = logging.getLogger(__name__)

Array = np.ndarray


@dataclass(frozen=True)
class SolverConfig:
    h: float = 1e-3
    newton_tol: float = 1e-11
    newton_max_iter: int = 30
    damping: float = 1.0
    epsilon_reg: float = 0.0
    mollifier_width: float = 0.0
    dealias: bool = False
    krylov_rtol: float = 1e-10
    fixed_point_max_iter: int = 5000
    snapshot_stride: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"time step must be positive, got {self.h}")
        if not self.newton_tol >= 1e-14:
            raise ValueError(f"newton_tol must be >= 1e-14, got {self.newton_tol}")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if self.epsilon_reg < 0 or self.mollifier_width < 0:
            raise ValueError("epsilon_reg and mollifier_width must be nonnegative")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    """Snapshots of a solver run; ``fields[i]`` is the solution at ``times[i]``."""

    grid: PeriodicGrid
    times: Array
    fields: list[Array]
    model_name: str = ""
    config: SolverConfig | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.fields)

    def field(self, i: int) -> ScalarField:
        return ScalarField(self.grid, self.fields[i])

    @property
    def final(self) -> ScalarField:
        return self.field(-1)

    def masses(self) -> Array:
        return np.array([self.grid.integrate(f) for f in self.fields])

    def sup_norms(self) -> Array:
        return np.array([np.max(np.abs(f)) for f in self.fields])

    def at(self, t: float) -> Array:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}")
        return self.fields[i]


def step_sizes(T: float, h: float) -> list[float]:
    """Uniform steps of size h, the last one shortened to land exactly on T."""
    if T < 0:
        raise ValueError(f"horizon must be nonnegative, got {T}")
    if T == 0:
        return []
    N = max(1, math.ceil(T / h - 1e-9))
    return [h] * (N - 1) + [T - (N - 1) * h]


# ---------------------------------------------------------------------------
# drift evaluated at grid points


@dataclass
class GridDrift:
    """b(x_j, r) and ∂_r b(x_j, r) at the grid points, as functions of r only."""

    values: Callable[[Array], Array]
    deriv: Callable[[Array], Array]
    is_zero: bool = False


def grid_drift(model: ModelProblem, grid: PeriodicGrid, width: float = 0.0) -> GridDrift:
    """Drift at grid points, optionally mollified in x by a Gaussian of std ``width``."""
    drift = model.drift
    X = grid.points
    if drift.is_zero:
        zeros = np.zeros((grid.dimension,) + grid.shape)
        return GridDrift(lambda r: zeros, lambda r: zeros, is_zero=True)
    if width <= 0:
        return GridDrift(lambda r: drift.b(X, r), lambda r: drift.b_r(X, r))
    if drift.factors is not None:
        fac = drift.factors
        V = grid.smooth(fac.profile(X), width)
        return GridDrift(lambda r: fac.g(r) * V, lambda r: fac.g_prime(r) * V)
    return _dense_mollified_drift(model, grid, width)


def _dense_mollified_drift(model: ModelProblem, grid: PeriodicGrid, width: float) -> GridDrift:
    # b_ε(x_i, r_i) = Σ_j K(x_i - x_j) b(x_j, r_i): spectral Gaussian smoothing of
    # b(·, r) evaluated at each sampled value r = u(x_i)
    d, size = grid.dimension, grid.size
    impulse = np.zeros(grid.shape)
    impulse[(0,) * d] = 1.0
    K = grid.smooth(impulse, width).ravel()
    flat_idx = np.arange(size)
    multi = np.stack(np.unravel_index(flat_idx, grid.shape))
    Y = grid.points.reshape(d, size)

    def convolve(fn, r):
        r_flat = np.asarray(r, dtype=float).ravel()
        out = np.empty((d, size))
        chunk = max(1, 2**22 // size)
        for start in range(0, size, chunk):
            rows = flat_idx[start:start + chunk]
            offs = (multi[:, rows, None] - multi[:, None, :]) % grid.n
            kern = K[np.ravel_multi_index(tuple(offs), grid.shape)]
            rr = np.broadcast_to(r_flat[rows, None], kern.shape)
            vals = fn(np.broadcast_to(Y[:, None, :], (d,) + kern.shape), rr)
            out[:, rows] = np.sum(vals * kern, axis=-1)
        return out.reshape((d,) + grid.shape)

    return GridDrift(lambda r: convolve(model.drift.b, r), lambda r: convolve(model.drift.b_r, r))


# ---------------------------------------------------------------------------
# stage solver


class _Stage:
    """Residual and Jacobian of the stage map for a fixed model, grid and config."""

    def __init__(self, model: ModelProblem, grid: PeriodicGrid, cfg: SolverConfig):
        self.model = model
        self.grid = grid
        self.cfg = cfg
        self.eps = cfg.epsilon_reg
        self.drift = grid_drift(model, grid, cfg.mollifier_width)
        self._filter = grid.dealias if cfg.dealias else (lambda f: f)

    def residual(self, u: Array, g: Array, h: float) -> Array:
        grid, P = self.grid, self._filter
        beta = self.model.beta(u)
        r = u - h * grid.laplacian(P(beta)) - g
        if not self.drift.is_zero:
            r = r + h * grid.divergence(P(self.drift.values(u) * u))
        if self.eps:
            r = r + h * self.eps * beta
        return r

    def jacobian(self, u: Array, h: float) -> Callable[[Array], Array]:
        grid, P = self.grid, self._filter
        bp = self.model.beta_prime(u)
        flux = None
        if not self.drift.is_zero:
            flux = self.drift.values(u) + self.drift.deriv(u) * u
        eps = self.eps

        def matvec(v):
            v = v.reshape(grid.shape)
            out = v - h * grid.laplacian(P(bp * v))
            if flux is not None:
                out = out + h * grid.divergence(P(flux * v))
            if eps:
                out = out + h * eps * bp * v
            return out.ravel()

        return matvec

    def norm(self, r: Array) -> float:
        return self.grid.norm(r, 2)

    def solve(self, g: Array, h: float) -> Array:
        cfg, grid = self.cfg, self.grid
        if not np.any(g):
            return np.zeros_like(g)
        mean_g = float(np.mean(g))
        u = g.copy()
        res = self.residual(u, g, h)
        rnorm = self.norm(res)
        for _ in range(cfg.newton_max_iter):
            if rnorm <= cfg.newton_tol:
                return u
            bp = self.model.beta_prime(u)
            c = 0.5 * (float(np.min(bp)) + float(np.max(bp)))
            A = LinearOperator((grid.size, grid.size), matvec=self.jacobian(u, h), dtype=float)
            M = LinearOperator((grid.size, grid.size),
                               matvec=lambda v: grid.resolvent(v.reshape(grid.shape), h * c).ravel(),
                               dtype=float)
            du, info = gmres(A, -res.ravel(), rtol=cfg.krylov_rtol, atol=0.0, restart=60, maxiter=20, M=M)
            du = du.reshape(grid.shape)
            lam = cfg.damping
            while lam >= 1e-4:
                trial = u + lam * du
                if not self.eps:
                    trial += mean_g - np.mean(trial)
                trial_res = self.residual(trial, g, h)
                trial_norm = self.norm(trial_res)
                if trial_norm < rnorm:
                    break
                lam *= 0.5
            else:
                log.debug("Newton line search stalled at residual %.3e", rnorm)
                break
            u, res, rnorm = trial, trial_res, trial_norm
        if rnorm <= cfg.newton_tol:
            return u
        return self._fixed_point(u, g, h)

    def _fixed_point(self, u: Array, g: Array, h: float) -> Array:
        # u ← (I - hcΔ)^{-1}[g + hΔ(β(u) - cu) - h div(b*(u)) - hεβ(u)]; contractive for
        # the diffusive part once c is the midpoint of the range of β'
        cfg, grid, P = self.cfg, self.grid, self._filter
        lo = float(np.min(self.model.beta_prime(u)))
        hi = float(np.max(self.model.beta_prime(u)))
        rnorm = np.inf
        for _ in range(cfg.fixed_point_max_iter):
            bp = self.model.beta_prime(u)
            lo, hi = min(lo, float(np.min(bp))), max(hi, float(np.max(bp)))
            c = 0.5 * (lo + hi)
            beta = self.model.beta(u)
            rhs = g + h * grid.laplacian(P(beta) - c * u)
            if not self.drift.is_zero:
                rhs = rhs - h * grid.divergence(P(self.drift.values(u) * u))
            if self.eps:
                rhs = rhs - h * self.eps * beta
            u = grid.resolvent(rhs, h * c)
            rnorm = self.norm(self.residual(u, g, h))
            if not np.isfinite(rnorm):
                break
            if rnorm <= cfg.newton_tol:
                return u
        raise NonConvergence(f"stage residual {rnorm:.3e} above tolerance {cfg.newton_tol:.1e}; halve h",
                             residual=float(rnorm))


def implicit_step(g: ScalarField, h: float, model: ModelProblem, cfg: SolverConfig | None = None) -> ScalarField:
    """One stage: solve u - hΔβ(u) + h div(b(x,u)u) (+ hεβ(u)) = g for u."""
    if not h > 0:
        raise ValueError(f"h must be positive, got {h}")
    cfg = cfg or SolverConfig(h=h)
    return ScalarField(g.grid, _Stage(model, g.grid, cfg).solve(g.values, h))


def stage_residual(u: ScalarField, g: ScalarField, h: float, model: ModelProblem,
                   cfg: SolverConfig | None = None) -> float:
    """Discrete L² norm of the stage residual, for diagnostics."""
    cfg = cfg or SolverConfig(h=h)
    stage = _Stage(model, u.grid, cfg)
    return stage.norm(stage.residual(u.values, g.values, h))


def _evolve(u0: ScalarField, T: float, model: ModelProblem, cfg: SolverConfig) -> Trajectory:
    if model.dimension != u0.grid.dimension:
        raise ValueError("model and grid dimensions differ")
    grid = u0.grid
    stage = _Stage(model, grid, cfg)
    u = u0.values.copy()
    times, fields = [0.0], [u.copy()]
    steps = step_sizes(T, cfg.h)
    t = 0.0
    for i, h in enumerate(steps):
        try:
            u = stage.solve(u, h)
        except NonConvergence as exc:
            raise NonConvergence(str(exc), residual=exc.residual, step_index=i) from exc
        t = T if i == len(steps) - 1 else (i + 1) * cfg.h
        if (i + 1) % cfg.snapshot_stride == 0 or i == len(steps) - 1:
            times.append(t)
            fields.append(u.copy())
    return Trajectory(grid, np.array(times), fields, model.name, cfg,
                      meta={"T": T, "steps": len(steps)})


def solve_mild(u0: ScalarField, T: float, model: ModelProblem, cfg: SolverConfig | None = None) -> Trajectory:
    """Implicit Euler chain u^{i+1} - hΔβ(u^{i+1}) + h div(b(x,u^{i+1})u^{i+1}) = u^i."""
    cfg = cfg or SolverConfig()
    if cfg.epsilon_reg or cfg.mollifier_width:
        cfg = replace(cfg, epsilon_reg=0.0, mollifier_width=0.0)
    return _evolve(u0, T, model, cfg)


def solve_regularized(u0: ScalarField, T: float, model: ModelProblem, cfg: SolverConfig) -> Trajectory:
    """Same chain with the extra absorption εβ(u) and the x-mollified drift b_ε.

    With ``epsilon_reg == 0`` and ``mollifier_width == 0`` this is exactly
    :func:`solve_mild`.
    """
    return _evolve(u0, T, model, cfg)


# ---------------------------------------------------------------------------
# linearized equation


def _as_time_function(obj, grid_shape, name):
    if obj is None:
        return None
    if callable(obj):
        return obj
    arr = np.asarray(obj, dtype=float)
    if arr.shape[-len(grid_shape):] != grid_shape:
        raise ValueError(f"{name} has shape {arr.shape}, grid is {grid_shape}")
    return lambda t: arr


def solve_linearized(v0: ScalarField, psi, drift, T: float, cfg: SolverConfig | None = None,
                     *, gamma0: float | None = None) -> Trajectory:
    """Fully implicit Euler for v_t - Δ(Ψv) + div(b v) = 0 with frozen coefficients.

    ``psi`` is an array (constant in time) or a callable ``t -> array``;
    ``drift`` likewise with shape ``(d, *grid.shape)``, or ``None``.
    Coefficients are taken at the new time level of each step.
    """
    cfg = cfg or SolverConfig()
    grid = v0.grid
    psi_t = _as_time_function(psi, grid.shape, "psi")
    drift_t = _as_time_function(drift, grid.shape, "drift")
    floor = 0.0 if gamma0 is None else gamma0 * (1 - 1e-12)
    v = v0.values.copy()
    times, fields = [0.0], [v.copy()]
    steps = step_sizes(T, cfg.h)
    n = grid.size
    for i, h in enumerate(steps):
        t = T if i == len(steps) - 1 else (i + 1) * cfg.h
        Psi = np.broadcast_to(psi_t(t), grid.shape)
        if not np.min(Psi) > floor:
            raise ValueError(f"psi must exceed {floor} pointwise, min is {np.min(Psi):.3e}")
        B = None if drift_t is None else np.asarray(drift_t(t))
        if np.any(v):
            v = _linear_stage(grid, v, h, Psi, B, cfg, i)
        if (i + 1) % cfg.snapshot_stride == 0 or i == len(steps) - 1:
            times.append(t)
            fields.append(v.copy())
    return Trajectory(grid, np.array(times), fields, "linearized", cfg, meta={"T": T, "steps": len(steps)})


def _linear_stage(grid, rhs, h, Psi, B, cfg, step_index):
    n = grid.size

    def matvec(x):
        x = x.reshape(grid.shape)
        out = x - h * grid.laplacian(Psi * x)
        if B is not None:
            out = out + h * grid.divergence(B * x)
        return out.ravel()

    c = 0.5 * (float(np.min(Psi)) + float(np.max(Psi)))
    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    M = LinearOperator((n, n), matvec=lambda x: grid.resolvent(x.reshape(grid.shape), h * c).ravel(), dtype=float)
    x0 = grid.resolvent(rhs, h * c).ravel()
    rtol = min(cfg.krylov_rtol, cfg.newton_tol)
    sol, info = gmres(A, rhs.ravel(), x0=x0, rtol=rtol, atol=0.0, restart=80, maxiter=50, M=M)
    sol = sol.reshape(grid.shape)
    sol += np.mean(rhs) - np.mean(sol)
    resid = grid.norm(matvec(sol.ravel()).reshape(grid.shape) - rhs)
    scale = max(1.0, grid.norm(rhs))
    if info != 0 and resid > cfg.newton_tol * scale:
        raise LinearSolveFailure(f"GMRES stalled (info={info}, residual {resid:.3e})", step_index=step_index)
    return sol


def frozen_coefficients(traj: Trajectory, model: ModelProblem):
    """Ψ(t) = Φ(u(t)) and b(x, u(t)) looked up from a stored nonlinear trajectory."""
    from fplab.model import phi

    X = traj.grid.points
    psi_cache, drift_cache = {}, {}

    def index(t):
        i = int(np.argmin(np.abs(traj.times - t)))
        return i

    def psi(t):
        i = index(t)
        if i not in psi_cache:
            psi_cache[i] = np.asarray(phi(model, traj.fields[i]))
        return psi_cache[i]

    if model.drift.is_zero:
        return psi, None

    def drift(t):
        i = index(t)
        if i not in drift_cache:
            drift_cache[i] = model.drift.b(X, traj.fields[i])
        return drift_cache[i]

    return psi, drift


# ---------------------------------------------------------------------------
# barrier


@dataclass
class BarrierTable:
    """η(t) on a uniform RK4 table; calling it interpolates linearly."""

    times: Array
    values: Array

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    @property
    def alpha(self) -> Array:
        """α(t) = η(t) - η(0)."""
        return self.values - self.values[0]


def barrier_eta(u0_sup: float, T: float, model: ModelProblem, ode_steps: int | None = None,
                *, h: float | None = None, delta: Callable[[float], float] | None = None) -> BarrierTable:
    """Classical RK4 for η' = δ(η)η, η(0) = |u0|_∞.

    Uses at least ``10 * ceil(T/h)`` steps when ``h`` is given.
    """
    if u0_sup < 0:
        raise ValueError(f"u0_sup must be nonnegative, got {u0_sup}")
    if delta is None:
        delta = lambda r: delta_of(model, r)  # noqa: E731
    steps = ode_steps or 1000
    if h is not None and T > 0:
        steps = max(steps, 10 * math.ceil(T / h))
    if T == 0:
        return BarrierTable(np.array([0.0]), np.array([float(u0_sup)]))
    dt = T / steps

    def rhs(y):
        return delta(y) * y

    eta = np.empty(steps + 1)
    eta[0] = y = float(u0_sup)
    for i in range(steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        eta[i + 1] = y
    return BarrierTable(np.linspace(0.0, T, steps + 1), eta)


# ---------------------------------------------------------------------------
# self-convergence


@dataclass
class ConvergenceStudy:
    h_list: list[float]
    distances: Array
    orders: Array
    fitted_order: float

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.distances) <= 0))


def fit_order(h: Array, err: Array) -> float:
    """Least-squares slope of log(err) against log(h); NaN when errors vanish."""
    h, err = np.asarray(h, dtype=float), np.asarray(err, dtype=float)
    good = err > 0
    if good.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(h[good]), np.log(err[good]), 1)[0])


def self_convergence(u0: ScalarField, T: float, model: ModelProblem, h_list, cfg: SolverConfig | None = None,
                     solver=None) -> ConvergenceStudy:
    """L¹ gaps at t = T between successive step sizes and the fitted order in h."""
    h_list = [float(h) for h in h_list]
    if len(h_list) < 3:
        raise ValueError("need at least three step sizes")
    for a, b in zip(h_list, h_list[1:]):
        if not math.isclose(b, a / 2, rel_tol=1e-9):
            raise ValueError("each step size must halve the previous one")
    cfg = cfg or SolverConfig()
    solver = solver or solve_mild
    finals = [solver(u0, T, model, replace(cfg, h=h, snapshot_stride=10**9)).fields[-1] for h in h_list]
    grid = u0.grid
    dist = np.array([grid.norm(a - b, 1) for a, b in zip(finals, finals[1:])])
    with np.errstate(divide="ignore", invalid="ignore"):
        orders = np.log2(dist[:-1] / dist[1:])
    return ConvergenceStudy(h_list, dist, orders, fit_order(np.array(h_list[:-1]), dist))
