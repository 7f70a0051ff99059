"""Executable checks of uniqueness, contraction and boundedness on solver output.

Every check returns :class:`VerificationReport` records whose ``passed``
flag is exactly ``measured <= bound + tolerance``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from fplab.grid import PeriodicGrid, ScalarField
from fplab.model import ModelProblem, lipschitz_constants
from fplab.pde import (
    SolverConfig,
    Trajectory,
    barrier_eta,
    fit_order,
    frozen_coefficients,
    solve_linearized,
    solve_mild,
    solve_regularized,
)

Array = np.ndarray


@dataclass
class VerificationReport:
    name: str
    measured: float
    bound: float
    tolerance: float = 0.0
    provenance: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.measured <= self.bound + self.tolerance)

    def record(self) -> dict:
        return {
            "name": self.name,
            "pass": self.passed,
            "measured": self.measured,
            "bound": self.bound,
            "tolerance": self.tolerance,
        }

    def __str__(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.name}: measured={self.measured:.6g} "
                f"bound={self.bound:.6g} tol={self.tolerance:.3g}")


def _provenance(model: ModelProblem, grid: PeriodicGrid, cfg: SolverConfig | None, **extra) -> dict:
    out = {"model": model.name, "dimension": grid.dimension, "L": grid.half_width, "n": grid.n}
    if cfg is not None:
        out["config"] = cfg.to_dict()
    out.update(extra)
    return out


# ---------------------------------------------------------------------------
# weak formulation and narrow continuity


@dataclass
class SpaceTimeTestFunction:
    """φ(t, x) = τ(t) χ(x) with τ(t) = t²(T - t)² p(t/T), p a random quadratic."""

    tau: Polynomial
    chi: Array
    lap_chi: Array
    grad_chi: Array


def make_test_functions(grid: PeriodicGrid, T: float, count: int, seed: int) -> list[SpaceTimeTestFunction]:
    """Seeded battery of smooth test functions compatible with the periodic box.

    χ is a Gaussian bump (std 0.1L to 0.2L, centre within 0.3L of the
    origin, distances taken periodically) times a box Fourier mode
    cos(π m·x / L + θ) with |m_i| ≤ 3.
    """
    rng = np.random.default_rng(seed)
    L, d = grid.half_width, grid.dimension
    out = []
    base = Polynomial([0, 0, 1]) * Polynomial([T, -1]) ** 2
    for _ in range(count):
        a1, a2 = rng.uniform(-1, 1, size=2)
        tau = base * Polynomial([1.0, a1 / T, a2 / T**2]) * (16.0 / T**4)
        center = rng.uniform(-0.3 * L, 0.3 * L, size=d)
        width = rng.uniform(0.1 * L, 0.2 * L)
        modes = rng.integers(-3, 4, size=d)
        theta = rng.uniform(0, 2 * np.pi)
        r2 = 0.0
        phase = theta
        for ax in range(d):
            dx = np.mod(grid.coords[ax] - center[ax] + L, 2 * L) - L
            r2 = r2 + dx * dx
            phase = phase + np.pi * modes[ax] * grid.coords[ax] / L
        chi = np.exp(-0.5 * r2 / width**2) * np.cos(phase)
        out.append(SpaceTimeTestFunction(tau, chi, grid.laplacian(chi), grid.gradient(chi)))
    return out


def weak_residuals(traj: Trajectory, model: ModelProblem, tests: Sequence[SpaceTimeTestFunction]) -> Array:
    """Space-time quadrature of ∫∫ u φ_t + β(u)Δφ + b(x,u)u·∇φ for each test function.

    The discrete solution is read as u_h(t) = u^i on [t_i, t_{i+1}); time
    integrals of the polynomial factor are exact.
    """
    grid = traj.grid
    times = traj.times
    X = grid.points
    tau_vals = np.array([[p.tau(t) for t in times] for p in tests])
    integrals = np.array([[p.tau.integ()(b) - p.tau.integ()(a) for a, b in zip(times[:-1], times[1:])]
                          for p in tests])
    out = np.zeros(len(tests))
    for i, u in enumerate(traj.fields[:-1]):
        beta = model.beta(u)
        flux = None if model.drift.is_zero else model.drift.b(X, u) * u
        for j, p in enumerate(tests):
            term = (tau_vals[j, i + 1] - tau_vals[j, i]) * grid.inner(u, p.chi)
            space = grid.inner(beta, p.lap_chi)
            if flux is not None:
                space += grid.inner(flux, p.grad_chi)
            out[j] += term + integrals[j, i] * space
    return out


def weak_residual(traj: Trajectory, model: ModelProblem, n_test: int = 20, seed: int = 0) -> float:
    """Max absolute weak-formulation residual over ``n_test`` seeded test functions."""
    if n_test == 0:
        return 0.0
    if traj.config is not None and traj.config.snapshot_stride != 1:
        raise ValueError("weak residual needs every step (snapshot_stride=1)")
    T = float(traj.times[-1])
    tests = make_test_functions(traj.grid, T, n_test, seed)
    return float(np.max(np.abs(weak_residuals(traj, model, tests))))


def default_psi_set(grid: PeriodicGrid) -> list[Array]:
    L = grid.half_width
    x = grid.coords
    psis = [np.ones(grid.shape)]
    for m in (1, 2, 3):
        psis.append(np.cos(np.pi * m * x[0] / L))
        psis.append(np.sin(np.pi * m * x[0] / L))
    psis.append(np.exp(-sum(xi * xi for xi in x)))
    psis.append(np.tanh(x[-1]))
    return psis


def narrow_continuity_modulus(traj: Trajectory, psi_set: Sequence[Array] | None = None) -> float:
    """max over ψ and adjacent snapshots of |∫(u(t) - u(s)) ψ dx|."""
    if len(traj) < 2:
        raise ValueError("need at least two snapshots")
    grid = traj.grid
    psi_set = default_psi_set(grid) if psi_set is None else psi_set
    worst = 0.0
    for a, b in zip(traj.fields[:-1], traj.fields[1:]):
        diff = b - a
        for psi in psi_set:
            worst = max(worst, abs(grid.inner(diff, psi)))
    return worst


# ---------------------------------------------------------------------------
# Grönwall, contraction, barrier


def gronwall_constant(K: float, gamma0: float) -> float:
    """Rate C with d/dt|u|²_{-2} ≤ C|u|²_{-2} from (1/2)D' + γ₀a² ≤ K a^{3/2} D^{1/4}.

    Maximising K a^{3/2} b^{1/2} - γ₀a² over a ≥ 0 gives 27K⁴b²/(256γ₀³).
    """
    return 27.0 * K**4 / (128.0 * gamma0**3)


def log_slopes(times: Array, D: Array, floor: float = 1e-24) -> Array:
    """Centred differences of log D, skipping points where D is numerically zero."""
    times, D = np.asarray(times, dtype=float), np.asarray(D, dtype=float)
    keep = D >= floor
    t, logD = times[keep], np.log(D[keep])
    if t.size < 2:
        return np.array([])
    return np.gradient(logD, t)


def gronwall_check(u0a: ScalarField, u0b: ScalarField, T: float, model: ModelProblem,
                   cfg: SolverConfig | None = None) -> VerificationReport:
    cfg = cfg or SolverConfig()
    ta = solve_mild(u0a, T, model, cfg)
    tb = solve_mild(u0b, T, model, cfg)
    grid = u0a.grid
    D = np.array([grid.sobolev_norm(a - b, 2) ** 2 for a, b in zip(ta.fields, tb.fields)])
    slopes = log_slopes(ta.times, D)
    measured = float(np.max(slopes)) if slopes.size else float("-inf")
    M = max(float(np.max(ta.sup_norms())), float(np.max(tb.sup_norms())), 1e-12)
    beta_M, b_M = lipschitz_constants(model, M)
    u1_sup = float(np.max(ta.sup_norms()))
    K = beta_M + 2.0 * (model.drift.b_sup + b_M * u1_sup)
    C = gronwall_constant(K, model.gamma0)
    identical = all(np.array_equal(a, b) for a, b in zip(ta.fields, tb.fields))
    return VerificationReport(
        "gronwall", measured, C, 0.0,
        _provenance(model, grid, cfg, T=T),
        {"K": K, "beta_M": beta_M, "b_M": b_M, "M": M, "D": D, "times": ta.times,
         "identical": identical, "constant": "derived closure 27K^4/(128 gamma0^3)"},
    )


def l1_contraction_check(u0a: ScalarField, u0b: ScalarField, T: float, model: ModelProblem,
                         cfg: SolverConfig | None = None, slack: float = 1e-8) -> VerificationReport:
    cfg = cfg or SolverConfig()
    ta = solve_mild(u0a, T, model, cfg)
    tb = solve_mild(u0b, T, model, cfg)
    grid = u0a.grid
    dist = np.array([grid.norm(a - b, 1) for a, b in zip(ta.fields, tb.fields)])
    excess = float(np.max(dist - dist[0]))
    return VerificationReport("l1-contraction", excess, 0.0, slack, _provenance(model, grid, cfg, T=T),
                              {"distances": dist, "times": ta.times})


def barrier_check(traj: Trajectory, model: ModelProblem) -> VerificationReport:
    h = traj.config.h if traj.config is not None else float(np.max(np.diff(traj.times), initial=0.0))
    T = float(traj.times[-1])
    u0_sup = float(np.max(np.abs(traj.fields[0])))
    eta = barrier_eta(u0_sup, T, model, h=h)
    eta_t = eta(traj.times)
    upper = np.array([np.max(f) for f in traj.fields]) - eta_t
    lower = -eta_t - np.array([np.min(f) for f in traj.fields])
    measured = float(max(np.max(upper), np.max(lower)))
    return VerificationReport("barrier", measured, 0.0, 1e-6 + 10 * h,
                              _provenance(model, traj.grid, traj.config, T=T),
                              {"eta_final": float(eta.values[-1]), "eta0": u0_sup})


# ---------------------------------------------------------------------------
# uniqueness across resolutions


def _cauchy_ratio(dist: Array) -> float:
    worst = 0.0
    for a, b in zip(dist[:-1], dist[1:]):
        if a > 0:
            worst = max(worst, b / a)
        elif b > 0:
            worst = math.inf
    return worst


def uniqueness_probe(u0: Callable, T: float, model: ModelProblem, resolutions: Sequence[tuple[float, int]],
                     L: float = 10.0, cfg: SolverConfig | None = None,
                     v0: Callable | None = None) -> list[VerificationReport]:
    """Refinement-Cauchy witness for the nonlinear and the linearized equations.

    ``u0`` (and ``v0``) are closed-form generators ``coords -> values``.
    Each resolution ``(h, n)`` is solved, interpolated to the finest grid,
    and successive L¹ gaps must shrink (ratio < 1).
    """
    if len(resolutions) < 2:
        raise ValueError("need at least two resolutions")
    cfg = cfg or SolverConfig()
    d = model.dimension
    finest = PeriodicGrid(d, L, max(n for _, n in resolutions))
    if v0 is None:
        def v0(coords):
            return u0(tuple(c - 1.0 for c in coords))

    nonlin, linear = [], []
    for h, n in resolutions:
        grid = PeriodicGrid(d, L, n)
        run_cfg = replace(cfg, h=h, snapshot_stride=1)
        traj = solve_mild(ScalarField.from_function(grid, u0), T, model, run_cfg)
        psi, drift = frozen_coefficients(traj, model)
        lin = solve_linearized(ScalarField.from_function(grid, v0), psi, drift, T, run_cfg, gamma0=model.gamma0)
        nonlin.append(grid.refine(traj.fields[-1], finest))
        linear.append(grid.refine(lin.fields[-1], finest))

    reports = []
    for label, finals in (("uniqueness-nonlinear", nonlin), ("uniqueness-linearized", linear)):
        dist = np.array([finest.norm(a - b, 1) for a, b in zip(finals[:-1], finals[1:])])
        hs = np.array([h for h, _ in resolutions[:-1]])
        ratio = _cauchy_ratio(dist)
        reports.append(VerificationReport(
            label, ratio, 1.0, 0.0,
            _provenance(model, finest, cfg, T=T, resolutions=list(resolutions)),
            {"distances": dist, "order": fit_order(hs, dist) if len(dist) >= 2 else float("nan")},
        ))
    return reports


def regularization_gap(u0: ScalarField, T: float, model: ModelProblem, eps_list: Sequence[float],
                       cfg: SolverConfig | None = None, width_scale: float = 1.0) -> VerificationReport:
    """L¹ gaps between regularized (ε, width = width_scale·ε) and unregularized runs at t = T.

    Measured value is the largest ratio of successive gaps (must be < 1).
    """
    cfg = cfg or SolverConfig()
    grid = u0.grid
    ref = solve_mild(u0, T, model, replace(cfg, snapshot_stride=10**9)).fields[-1]
    gaps, scales = [], []
    for eps in eps_list:
        reg_cfg = replace(cfg, epsilon_reg=eps, mollifier_width=width_scale * eps, snapshot_stride=10**9)
        fin = solve_regularized(u0, T, model, reg_cfg).fields[-1]
        gaps.append(grid.norm(fin - ref, 1))
        scales.append(10 * eps * T * grid.norm(model.beta(ref), 1))
    gaps = np.array(gaps)
    ratio = _cauchy_ratio(gaps)
    return VerificationReport("regularization", ratio, 1.0, 0.0,
                              _provenance(model, grid, cfg, T=T, eps=list(eps_list), width_scale=width_scale),
                              {"gaps": gaps, "gap_scale": np.array(scales)})


# ---------------------------------------------------------------------------
# PDE vs particles


def pde_particle_consistency(u0: ScalarField, T: float, model: ModelProblem, N_list: Sequence[int],
                             seeds: Sequence[int], dt: float = 1e-3, estimator: str = "gaussian_kernel",
                             cfg: SolverConfig | None = None, cap: float = 0.05) -> list[VerificationReport]:
    """Seed-averaged L¹ distance between particle density estimates and the PDE at t = T.

    Returns a monotonicity report (largest increase of the average distance
    as N grows, bound 0) and a cap report for the largest N.
    """
    from fplab.particles import DensityEstimator, simulate

    if list(N_list) != sorted(N_list):
        raise ValueError("N_list must be increasing")
    cfg = cfg or SolverConfig(h=dt)
    grid = u0.grid
    ref = solve_mild(u0, T, model, replace(cfg, snapshot_stride=10**9)).fields[-1]
    est = DensityEstimator(grid, estimator)
    avg = []
    for N in N_list:
        dists = [grid.norm(simulate(u0, T, dt, N, s, model, est, [T])[-1][1].values - ref, 1) for s in seeds]
        avg.append(float(np.mean(dists)))
    avg = np.array(avg)
    prov = _provenance(model, grid, cfg, T=T, N_list=list(N_list), seeds=list(seeds), dt=dt, estimator=estimator)
    increase = float(np.max(np.diff(avg), initial=0.0)) if avg.size > 1 else 0.0
    return [
        VerificationReport("particles-monotone-in-N", increase, 0.0, 0.0, prov, {"distances": avg}),
        VerificationReport("particles-cap", float(avg[-1]), cap, 0.0, prov, {"distances": avg}),
    ]
