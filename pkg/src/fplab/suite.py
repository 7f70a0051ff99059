"""Named verification checks driven by a :class:`~fplab.scenario.Scenario`."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable

import numpy as np

from fplab.grid import ScalarField, VectorField
from fplab.grid import check_functional_inequalities as _inequalities
from fplab.model import gaussian_density
from fplab.pde import frozen_coefficients, self_convergence, solve_linearized, solve_mild
from fplab.scenario import Scenario
from fplab import verify
from fplab.verify import VerificationReport

ORDER_RATIO = 2.0**-0.9
THREADS_ENV = "FPLAB_THREADS"


def _u0(s: Scenario) -> ScalarField:
    return ScalarField.from_function(s.grid(), s.initial_condition())


def _partner(s: Scenario) -> ScalarField:
    """Second initial datum: narrower, heavier, shifted by one unit."""
    fn = gaussian_density(0.8 * s.sigma, 1.25 * s.initial_mass, [s.center + 1.0] * s.dimension)
    return ScalarField.from_function(s.grid(), fn)


def _prov(s: Scenario, **extra) -> dict:
    out = {"scenario": s.to_dict()}
    out.update(extra)
    return out


def check_mass(s):
    m = s.model_problem()
    traj = solve_mild(_u0(s), s.T, m, s.solver_config())
    masses = traj.masses()
    drift = float(np.max(np.abs(masses - masses[0])) / abs(masses[0]))
    return [VerificationReport("mass", drift, 1e-10, 0.0, _prov(s), {"steps": traj.meta["steps"]})]


def check_l1_contraction(s):
    return [verify.l1_contraction_check(_u0(s), _partner(s), s.T, s.model_problem(), s.solver_config())]


def check_barrier(s):
    m = s.model_problem()
    return [verify.barrier_check(solve_mild(_u0(s), s.T, m, s.solver_config()), m)]


def check_gronwall(s):
    return [verify.gronwall_check(_u0(s), _partner(s), s.T, s.model_problem(), s.solver_config())]


def _halving_ratio(s, measure: Callable) -> tuple[float, float, float]:
    m = s.model_problem()
    cfg = replace(s.solver_config(), snapshot_stride=1)
    coarse = measure(solve_mild(_u0(s), s.T, m, cfg), m)
    fine = measure(solve_mild(_u0(s), s.T, m, replace(cfg, h=cfg.h / 2)), m)
    return (fine / coarse if coarse > 0 else 0.0), coarse, fine


def check_weak_residual(s):
    ratio, a, b = _halving_ratio(s, lambda tr, m: verify.weak_residual(tr, m, 20, s.seed))
    return [VerificationReport("weak-residual-halving", ratio, ORDER_RATIO, 0.0, _prov(s),
                               {"residual_h": a, "residual_h/2": b})]


def check_narrow_continuity(s):
    ratio, a, b = _halving_ratio(s, lambda tr, m: verify.narrow_continuity_modulus(tr))
    return [VerificationReport("narrow-continuity-halving", ratio, ORDER_RATIO, 0.0, _prov(s),
                               {"modulus_h": a, "modulus_h/2": b})]


def check_functional_inequalities(s):
    grid = s.grid()
    rng = np.random.default_rng(s.seed)
    worst = 0.0
    for _ in range(100):
        f = ScalarField(grid, rng.standard_normal(grid.shape))
        F = VectorField(grid, rng.standard_normal((grid.dimension,) + grid.shape))
        rep = _inequalities(f, F)
        worst = max(worst, rep.dual_l2, rep.divergence, rep.interpolation)
    return [VerificationReport("functional-inequalities", worst, 1.0, 1e-12, _prov(s))]


def _resolutions(s):
    return [(4 * s.h, max(16, s.n // 4)), (2 * s.h, max(16, s.n // 2)), (s.h, s.n)]


def check_uniqueness(s):
    return verify.uniqueness_probe(s.initial_condition(), s.T, s.model_problem(), _resolutions(s), s.L,
                                   s.solver_config())


def check_self_convergence(s):
    study = self_convergence(_u0(s), s.T, s.model_problem(), [4 * s.h, 2 * s.h, s.h], s.solver_config())
    d = study.distances
    ratio = float(d[1] / d[0]) if d[0] > 0 else 0.0
    return [VerificationReport("self-convergence", ratio, ORDER_RATIO, 0.0, _prov(s),
                               {"distances": d, "fitted_order": study.fitted_order})]


def check_regularization(s):
    return [verify.regularization_gap(_u0(s), s.T, s.model_problem(), [1e-2, 1e-3, 1e-4], s.solver_config())]


def check_linearized(s):
    """The nonlinear solution solves its own linearization with Ψ = Φ(u) frozen at the new level."""
    m = s.model_problem()
    u0 = _u0(s)
    traj = solve_mild(u0, s.T, m, replace(s.solver_config(), snapshot_stride=1))
    psi, drift = frozen_coefficients(traj, m)
    lin = solve_linearized(u0, psi, drift, s.T, replace(s.solver_config(), snapshot_stride=1), gamma0=m.gamma0)
    gap = max(traj.grid.norm(a - b, 1) for a, b in zip(traj.fields, lin.fields))
    return [VerificationReport("linearized-tracks-nonlinear", gap, 1e-8, 0.0, _prov(s))]


def check_particles(s):
    m = s.model_problem()
    u0 = _u0(s)
    N = s.particles
    n_list = sorted({max(1, N // 100), max(1, N // 10), N})
    return verify.pde_particle_consistency(u0, s.T, m, n_list, [s.seed, s.seed + 1], s.particle_dt,
                                           s.estimator, s.solver_config())


CHECKS: dict[str, Callable[[Scenario], list[VerificationReport]]] = {
    "mass": check_mass,
    "l1-contraction": check_l1_contraction,
    "barrier": check_barrier,
    "gronwall": check_gronwall,
    "weak-residual": check_weak_residual,
    "narrow-continuity": check_narrow_continuity,
    "functional-inequalities": check_functional_inequalities,
    "uniqueness": check_uniqueness,
    "self-convergence": check_self_convergence,
    "regularization": check_regularization,
    "linearized": check_linearized,
    "particles": check_particles,
}


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def run_checks(scenario: Scenario, names) -> list[VerificationReport]:
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s) {', '.join(unknown)}; registered: {', '.join(CHECKS)}")
    with ThreadPoolExecutor(max_workers=thread_count()) as pool:
        results = list(pool.map(lambda name: CHECKS[name](scenario), names))
    return [r for group in results for r in group]
