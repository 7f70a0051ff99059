import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_smooth
from fplab import get_model, registered_models
from fplab.errors import NonConvergence
from fplab.grid import PeriodicGrid, ScalarField
from fplab.model import gaussian_density
from fplab.pde import (
    SolverConfig,
    barrier_eta,
    fit_order,
    frozen_coefficients,
    grid_drift,
    implicit_step,
    self_convergence,
    solve_linearized,
    solve_mild,
    solve_regularized,
    stage_residual,
    step_sizes,
)


def _dense_operator(grid, op):
    n = grid.size
    eye = np.eye(n)
    return np.column_stack([op(eye[:, j].reshape(grid.shape)).ravel() for j in range(n)])


def _dense_newton(g, h, model, iters=40):
    """Independent oracle: Newton on the assembled matrices with a direct solver."""
    grid = g.grid
    Lap = _dense_operator(grid, grid.laplacian)
    Div = _dense_operator(grid, lambda f: grid.divergence(f[None]))
    X = grid.points
    u = g.values.ravel().copy()
    for _ in range(iters):
        b = model.drift.b(X, u.reshape(grid.shape))[0].ravel()
        br = model.drift.b_r(X, u.reshape(grid.shape))[0].ravel()
        F = u - h * Lap @ model.beta(u) + h * Div @ (b * u) - g.values.ravel()
        J = np.eye(u.size) - h * Lap * model.beta_prime(u)[None, :] + h * Div * (b + br * u)[None, :]
        u = u - np.linalg.solve(J, F)
        if np.linalg.norm(F) < 1e-14:
            break
    return u.reshape(grid.shape)


@pytest.mark.parametrize("name", registered_models())
def test_stage_matches_dense_newton(name):
    grid = PeriodicGrid(1, 6.0, 64)
    g = ScalarField.from_function(grid, gaussian_density(0.8, 2.0))
    model = get_model(name)
    u = implicit_step(g, 0.05, model, SolverConfig(h=0.05))
    oracle = _dense_newton(g, 0.05, model)
    assert np.max(np.abs(u.values - oracle)) <= 1e-10


def test_linear_stage_is_diagonal_resolvent():
    grid = PeriodicGrid(1, 5.0, 128)
    g = ScalarField.from_function(grid, gaussian_density())
    u = implicit_step(g, 0.1, get_model("LINEAR"))
    expected = grid.ifft(grid.fft(g.values) / (1 + 0.1 * grid.ksq))
    assert np.allclose(u.values, expected, atol=1e-13)


def test_stage_residual_below_tolerance(gauss1d):
    model = get_model("CUBIC-DRIFT")
    cfg = SolverConfig(h=0.01)
    u = implicit_step(gauss1d, 0.01, model, cfg)
    assert stage_residual(u, gauss1d, 0.01, model, cfg) <= cfg.newton_tol


def test_fixed_point_fallback_agrees_with_newton():
    grid = PeriodicGrid(1, 6.0, 64)
    g = ScalarField.from_function(grid, gaussian_density(0.7, 1.5))
    model = get_model("CUBIC")
    newton = implicit_step(g, 0.02, model, SolverConfig(h=0.02))
    # a single damped Newton iteration is not enough, so the fixed-point fallback finishes the stage
    fallback = implicit_step(g, 0.02, model, SolverConfig(h=0.02, newton_max_iter=1, damping=0.01))
    assert np.max(np.abs(newton.values - fallback.values)) <= 1e-10


def test_nonconvergence_reports_step():
    grid = PeriodicGrid(1, 6.0, 64)
    g = ScalarField.from_function(grid, gaussian_density(0.3, 20.0))
    cfg = SolverConfig(h=0.5, newton_max_iter=1, damping=0.001, fixed_point_max_iter=2, newton_tol=1e-14)
    with pytest.raises(NonConvergence, match="step 0") as info:
        solve_mild(g, 1.0, get_model("CUBIC"), cfg)
    assert info.value.step_index == 0
    assert info.value.residual > 0


def test_step_sizes_final_partial_step():
    assert step_sizes(0.0, 0.1) == []
    s = step_sizes(0.25, 0.1)
    assert len(s) == 3 and s[:2] == [0.1, 0.1] and s[2] == pytest.approx(0.05)
    assert sum(s) == pytest.approx(0.25, abs=1e-15)
    assert step_sizes(0.3, 0.1) == pytest.approx([0.1, 0.1, 0.1])
    with pytest.raises(ValueError):
        step_sizes(-1.0, 0.1)


def test_trajectory_snapshots_and_lookup(gauss1d):
    traj = solve_mild(gauss1d, 0.105, get_model("LINEAR"), SolverConfig(h=0.01, snapshot_stride=5))
    assert traj.times.tolist() == pytest.approx([0.0, 0.05, 0.1, 0.105])
    assert traj.meta["steps"] == 11
    assert np.array_equal(traj.at(0.05), traj.fields[1])
    with pytest.raises(KeyError):
        traj.at(0.07)


def test_solver_config_validation():
    for bad in [dict(h=0), dict(newton_tol=1e-16), dict(damping=0), dict(snapshot_stride=0),
                dict(epsilon_reg=-1), dict(newton_max_iter=0)]:
        with pytest.raises(ValueError):
            SolverConfig(**bad)


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10**6), name=st.sampled_from(registered_models()))
def test_mass_conserved_property(seed, name):
    grid = PeriodicGrid(1, 10.0, 128)
    u0 = random_smooth(grid, np.random.default_rng(seed))
    traj = solve_mild(u0, 0.05, get_model(name), SolverConfig(h=5e-3))
    m = traj.masses()
    assert np.max(np.abs(m - m[0])) <= 1e-12 * abs(m[0])


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10**6), name=st.sampled_from(registered_models()))
def test_l1_contraction_property(seed, name):
    grid = PeriodicGrid(1, 10.0, 128)
    rng = np.random.default_rng(seed)
    a, b = random_smooth(grid, rng), random_smooth(grid, rng)
    cfg = SolverConfig(h=5e-3)
    ta, tb = solve_mild(a, 0.1, get_model(name), cfg), solve_mild(b, 0.1, get_model(name), cfg)
    d = [grid.norm(x - y, 1) for x, y in zip(ta.fields, tb.fields)]
    assert max(d) <= d[0] + 1e-8


def test_two_dimensional_run(grid1d):
    grid = PeriodicGrid(2, 6.0, 32)
    u0 = ScalarField.from_function(grid, gaussian_density(center=[0.5, -0.5]))
    traj = solve_mild(u0, 0.05, get_model("CUBIC-DRIFT", 2), SolverConfig(h=0.01))
    m = traj.masses()
    assert abs(m[-1] - m[0]) <= 1e-12
    assert np.max(traj.final.values) < np.max(u0.values)


def test_heat_kernel_first_order_in_h():
    grid = PeriodicGrid(1, 10.0, 256)
    u0 = ScalarField.from_function(grid, gaussian_density())
    T = 0.2
    s2 = 1 + 2 * T
    exact = np.exp(-grid.axis**2 / (2 * s2)) / math.sqrt(2 * math.pi * s2)
    hs = [8e-3, 4e-3, 2e-3]
    errs = [grid.norm(solve_mild(u0, T, get_model("LINEAR"), SolverConfig(h=h)).final.values - exact, 1)
            for h in hs]
    assert fit_order(np.array(hs), np.array(errs)) == pytest.approx(1.0, abs=0.1)


def test_regularized_reduces_to_mild(gauss1d):
    model = get_model("CUBIC-DRIFT")
    cfg = SolverConfig(h=0.01)
    a = solve_mild(gauss1d, 0.05, model, cfg)
    b = solve_regularized(gauss1d, 0.05, model, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.fields, b.fields))
    # solve_mild ignores regularization settings
    c = solve_mild(gauss1d, 0.05, model, replace(cfg, epsilon_reg=0.1, mollifier_width=0.1))
    assert np.array_equal(a.final.values, c.final.values)


def test_regularized_absorbs_mass(gauss1d):
    traj = solve_regularized(gauss1d, 0.1, get_model("CUBIC"), SolverConfig(h=0.01, epsilon_reg=0.5))
    m = traj.masses()
    assert np.all(np.diff(m) < 0)


def test_mollified_drift_profile():
    grid = PeriodicGrid(1, 10.0, 256)
    model = get_model("CUBIC-DRIFT")
    raw = grid_drift(model, grid, 0.0)
    moll = grid_drift(model, grid, 0.3)
    u = np.full(grid.shape, 0.5)
    # Gaussian profile exp(-x^2) convolved with N(0, w^2) stays Gaussian
    w2 = 0.09
    expected = np.tanh(0.5) * np.exp(-grid.axis**2 / (1 + 2 * w2)) / math.sqrt(1 + 2 * w2)
    assert np.allclose(moll.values(u)[0], expected, atol=1e-12)
    assert np.allclose(raw.values(u)[0], np.tanh(0.5) * np.exp(-grid.axis**2), atol=1e-15)


def test_linearized_zero_stays_zero(grid1d):
    zero = ScalarField(grid1d, np.zeros(grid1d.shape))
    traj = solve_linearized(zero, np.full(grid1d.shape, 2.0), None, 0.05, SolverConfig(h=0.01), gamma0=1.0)
    assert all(not np.any(f) for f in traj.fields)


def test_linearized_rejects_small_psi(gauss1d):
    with pytest.raises(ValueError, match="psi"):
        solve_linearized(gauss1d, np.full(gauss1d.grid.shape, 0.5), None, 0.05, SolverConfig(h=0.01), gamma0=1.0)


def test_linearized_reproduces_nonlinear_solution(gauss1d):
    model = get_model("CUBIC-DRIFT")
    cfg = SolverConfig(h=0.01)
    traj = solve_mild(gauss1d, 0.1, model, cfg)
    psi, drift = frozen_coefficients(traj, model)
    lin = solve_linearized(gauss1d, psi, drift, 0.1, cfg, gamma0=model.gamma0)
    assert max(np.max(np.abs(a - b)) for a, b in zip(traj.fields, lin.fields)) <= 1e-10


def test_barrier_constant_without_drift():
    eta = barrier_eta(0.7, 1.0, get_model("CUBIC"))
    assert np.all(eta.values == 0.7)
    assert np.all(eta.alpha == 0.0)


def test_barrier_matches_exponential_for_constant_delta():
    eta = barrier_eta(0.5, 2.0, get_model("LINEAR"), ode_steps=200, delta=lambda r: 0.3)
    assert eta.values[-1] == pytest.approx(0.5 * math.exp(0.6), rel=1e-10)
    assert eta(1.0) == pytest.approx(0.5 * math.exp(0.3), rel=1e-6)


def test_barrier_step_count_follows_h():
    eta = barrier_eta(0.5, 1.0, get_model("CUBIC-DRIFT"), ode_steps=10, h=1e-3)
    assert eta.times.size == 10 * 1000 + 1
    assert np.all(np.diff(eta.values) >= 0)
    with pytest.raises(ValueError):
        barrier_eta(-1.0, 1.0, get_model("LINEAR"))


def test_self_convergence_validates_h_list(gauss1d):
    with pytest.raises(ValueError):
        self_convergence(gauss1d, 0.1, get_model("LINEAR"), [0.02, 0.01])
    with pytest.raises(ValueError):
        self_convergence(gauss1d, 0.1, get_model("LINEAR"), [0.04, 0.03, 0.01])


def test_self_convergence_order(gauss1d):
    study = self_convergence(gauss1d, 0.1, get_model("CUBIC"), [8e-3, 4e-3, 2e-3])
    assert study.monotone
    assert study.fitted_order == pytest.approx(1.0, abs=0.1)


def test_fit_order_exact_power_law():
    h = np.array([0.4, 0.2, 0.1])
    assert fit_order(h, 3 * h**2) == pytest.approx(2.0)
    assert math.isnan(fit_order(h, np.zeros(3)))
