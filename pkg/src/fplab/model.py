"""Problem coefficients: the diffusion nonlinearity β and the drift b(x, r).

Coefficients are closed-form callables (value plus the derivatives the
solvers need).  Spatial arguments use the layout ``x.shape == (d, *S)`` and
``r.shape == S``; drift values come back as ``(d, *S)`` and drift Jacobians
in x as ``(d, d, *S)`` with ``J[i, j] = ∂b_i/∂x_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray

PHI_THRESHOLD = 1e-8
FD_RTOL = 1e-5


@dataclass(frozen=True)
class Nonlinearity:
    """Strongly monotone β with β(0) = 0 and β' ≥ gamma0."""

    beta: Callable[[Array], Array]
    beta_prime: Callable[[Array], Array]
    gamma0: float
    name: str = ""

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")


@dataclass(frozen=True)
class SeparableFactors:
    """Factorisation b(x, r) = g(r) V(x), used to mollify V alone."""

    g: Callable[[Array], Array]
    g_prime: Callable[[Array], Array]
    profile: Callable[[Array], Array]
    profile_jacobian: Callable[[Array], Array]


@dataclass(frozen=True)
class DriftField:
    """Bounded drift b(x, r) with b(x, 0) = 0.

    ``delta`` is the closed-form modulus sup_x |b_x(x, r)| when known; when
    it is ``None`` the modulus is obtained by sampling (see :func:`delta_of`).
    """

    dimension: int
    b: Callable[[Array, Array], Array]
    b_r: Callable[[Array, Array], Array]
    b_x: Callable[[Array, Array], Array]
    b_sup: float
    delta: Callable[[Array], Array] | None = None
    factors: SeparableFactors | None = None
    name: str = ""

    @property
    def is_zero(self) -> bool:
        return self.b_sup == 0.0


@dataclass(frozen=True)
class ModelProblem:
    name: str
    nonlinearity: Nonlinearity
    drift: DriftField
    dimension: int
    initial_condition: Callable[[tuple[Array, ...]], Array]
    description: str = ""

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.dimension}")
        if self.drift.dimension != self.dimension:
            raise ValueError("drift dimension does not match model dimension")

    @property
    def gamma0(self) -> float:
        return self.nonlinearity.gamma0

    def beta(self, r):
        return self.nonlinearity.beta(np.asarray(r, dtype=float))

    def beta_prime(self, r):
        return self.nonlinearity.beta_prime(np.asarray(r, dtype=float))

    def b_star(self, x: Array, r: Array) -> Array:
        """Flux density b(x, r) r."""
        r = np.asarray(r, dtype=float)
        return self.drift.b(x, r) * r


# ---------------------------------------------------------------------------
# building blocks


def zero_drift(dimension: int) -> DriftField:
    def b(x, r):
        return np.zeros((dimension,) + np.shape(r))

    def b_x(x, r):
        return np.zeros((dimension, dimension) + np.shape(r))

    return DriftField(
        dimension=dimension,
        b=b,
        b_r=b,
        b_x=b_x,
        b_sup=0.0,
        delta=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        name="zero",
    )


def separable_drift(
    dimension: int,
    g: Callable[[Array], Array],
    g_prime: Callable[[Array], Array],
    g_sup: float,
    profile: Callable[[Array], Array],
    profile_jacobian: Callable[[Array], Array],
    profile_sup: float,
    profile_jacobian_sup: float,
    name: str = "",
) -> DriftField:
    """Drift b(x, r) = g(r) V(x) with g(0) = 0.

    ``profile_jacobian_sup`` must bound the operator norm of ∇V; the drift
    modulus is then δ(r) = |g(r)| * profile_jacobian_sup.
    """

    def b(x, r):
        return g(r) * profile(x)

    def b_r(x, r):
        return g_prime(r) * profile(x)

    def b_x(x, r):
        return g(r) * profile_jacobian(x)

    def delta(r):
        return np.abs(g(np.asarray(r, dtype=float))) * profile_jacobian_sup

    return DriftField(
        dimension=dimension,
        b=b,
        b_r=b_r,
        b_x=b_x,
        b_sup=g_sup * profile_sup,
        delta=delta,
        factors=SeparableFactors(g, g_prime, profile, profile_jacobian),
        name=name,
    )


def gaussian_bump_profile(dimension: int, width: float = 1.0):
    """V(x) = exp(-|x|²/width²) e with e = (1, ..., 1).

    Returns ``(V, ∇V, sup|V|, sup‖∇V‖)``; ∇V = e ⊗ ∇G is rank one so its
    operator norm is |e| |∇G| ≤ √d √2 e^{-1/2} / width.
    """
    e_norm = math.sqrt(dimension)

    def bump(x):
        return np.exp(-np.sum(x * x, axis=0) / width**2)

    def profile(x):
        return np.broadcast_to(bump(x), (dimension,) + x.shape[1:]).copy()

    def jacobian(x):
        grad_g = -2.0 * x / width**2 * bump(x)
        return np.broadcast_to(grad_g[None], (dimension,) + x.shape).copy()

    jac_sup = e_norm * math.sqrt(2.0) * math.exp(-0.5) / width
    return profile, jacobian, e_norm, jac_sup


def gaussian_density(sigma: float = 1.0, mass: float = 1.0, center=None):
    """Closed-form isotropic Gaussian initial density."""

    def u0(coords: tuple[Array, ...]) -> Array:
        d = len(coords)
        c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
        r2 = sum((xi - ci) ** 2 for xi, ci in zip(coords, c))
        return mass * np.exp(-r2 / (2 * sigma**2)) / (2 * np.pi * sigma**2) ** (d / 2)

    return u0


# ---------------------------------------------------------------------------
# registry

IDENTITY = Nonlinearity(beta=lambda r: r * 1.0, beta_prime=lambda r: np.ones_like(r), gamma0=1.0, name="r")
CUBIC_BETA = Nonlinearity(
    beta=lambda r: r + r**3, beta_prime=lambda r: 1.0 + 3.0 * r**2, gamma0=1.0, name="r+r^3"
)


def _rational(r):
    return r / (1.0 + r * r)


def _rational_prime(r):
    return (1.0 - r * r) / (1.0 + r * r) ** 2


def _cosh2_inv(r):
    return 1.0 / np.cosh(r) ** 2


def _linear(d: int) -> ModelProblem:
    return ModelProblem("LINEAR", IDENTITY, zero_drift(d), d, gaussian_density(),
                        "heat equation: beta(r)=r, b=0")


def _cubic(d: int) -> ModelProblem:
    return ModelProblem("CUBIC", CUBIC_BETA, zero_drift(d), d, gaussian_density(),
                        "beta(r)=r+r^3, b=0")


def _cubic_drift(d: int) -> ModelProblem:
    V, jac, v_sup, jac_sup = gaussian_bump_profile(d, width=1.0)
    drift = separable_drift(d, np.tanh, _cosh2_inv, 1.0, V, jac, v_sup, jac_sup, name="tanh(r)*exp(-|x|^2)*e")
    return ModelProblem("CUBIC-DRIFT", CUBIC_BETA, drift, d, gaussian_density(),
                        "beta(r)=r+r^3, b(x,r)=tanh(r) exp(-|x|^2) (1,..,1)")


def _linear_drift(d: int) -> ModelProblem:
    V, jac, v_sup, jac_sup = gaussian_bump_profile(d, width=2.0)
    drift = separable_drift(d, _rational, _rational_prime, 0.5, V, jac, v_sup, jac_sup,
                            name="r/(1+r^2)*exp(-|x|^2/4)*e")
    return ModelProblem("LINEAR-DRIFT", IDENTITY, drift, d, gaussian_density(),
                        "beta(r)=r, b(x,r)=r/(1+r^2) exp(-|x|^2/4) (1,..,1)")


_REGISTRY: dict[str, Callable[[int], ModelProblem]] = {
    "LINEAR": _linear,
    "CUBIC": _cubic,
    "CUBIC-DRIFT": _cubic_drift,
    "LINEAR-DRIFT": _linear_drift,
}


def registered_models() -> list[str]:
    return list(_REGISTRY)


def get_model(name: str, dimension: int = 1) -> ModelProblem:
    """Look up a registered model; raises ``KeyError`` for unknown names."""
    try:
        factory = _REGISTRY[name.upper()]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; registered: {', '.join(_REGISTRY)}") from None
    return factory(dimension)


# ---------------------------------------------------------------------------
# derived quantities


def phi(model: ModelProblem, r):
    """Diffusivity Φ(r) = β(r)/r, continued by β'(0) at the origin."""
    r = np.asarray(r, dtype=float)
    small = np.abs(r) < PHI_THRESHOLD
    safe = np.where(small, 1.0, r)
    out = np.where(small, model.beta_prime(np.zeros_like(r)), model.beta(safe) / safe)
    return out if out.ndim else float(out)


def _spatial_samples(d: int, extent: float, per_axis: int) -> Array:
    axis = np.linspace(-extent, extent, per_axis)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh])


def _jacobian_opnorm(jac: Array) -> Array:
    """Operator 2-norm of ``jac`` with shape (d, d, *S)."""
    d = jac.shape[0]
    if d == 1:
        return np.abs(jac[0, 0])
    return np.linalg.norm(np.moveaxis(jac, (0, 1), (-2, -1)), ord=2, axis=(-2, -1))


def delta_of(model: ModelProblem, r, *, extent: float = 5.0, per_axis: int | None = None) -> float:
    """Drift modulus δ(r) = sup_x ‖b_x(x, r)‖.

    Uses the registered closed form when the drift has one; otherwise takes
    the maximum over a dense spatial grid and polishes the best sample with
    a local maximisation.
    """
    drift = model.drift
    if drift.delta is not None:
        return float(drift.delta(np.asarray(r, dtype=float)))
    from scipy.optimize import minimize

    d = model.dimension
    per_axis = per_axis or (20001 if d == 1 else 401)
    xs = _spatial_samples(d, extent, per_axis)
    rr = np.full(xs.shape[1], float(r))
    vals = _jacobian_opnorm(drift.b_x(xs, rr))
    best = int(np.argmax(vals))

    def neg(x):
        x = np.asarray(x, dtype=float).reshape(d, 1)
        return -float(_jacobian_opnorm(drift.b_x(x, np.array([float(r)])))[0])

    res = minimize(neg, xs[:, best], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
    return max(float(vals[best]), -float(res.fun))


def lipschitz_constants(model: ModelProblem, M: float, *, n_r: int = 4001,
                        extent: float = 5.0) -> tuple[float, float]:
    """``(beta_M, b_M)``: sup of β' and of |b_r| for |r| ≤ M."""
    if not M > 0:
        raise ValueError(f"M must be positive, got {M}")
    r = np.linspace(-M, M, n_r)
    beta_M = float(np.max(model.beta_prime(r)))
    if model.drift.is_zero:
        return beta_M, 0.0
    d = model.dimension
    xs = _spatial_samples(d, extent, 201 if d == 1 else 61)
    r_coarse = np.linspace(-M, M, 401)
    X = np.repeat(xs, r_coarse.size, axis=1)
    R = np.tile(r_coarse, xs.shape[1])
    b_M = float(np.max(np.linalg.norm(model.drift.b_r(X, R), axis=0)))
    return beta_M, b_M


# ---------------------------------------------------------------------------
# assumption validation


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    worst: float
    sample: tuple = ()
    note: str = ""

    def __str__(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: worst={self.worst:.3e} at {self.sample} {self.note}".rstrip()


@dataclass
class ValidationReport:
    model: str
    M: float
    checks: list[AssumptionCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __str__(self):
        return "\n".join([f"{self.model} (M={self.M})"] + [f"  {c}" for c in self.checks])


def _fd_mismatch(exact: Array, fd: Array) -> Array:
    return np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))


def validate_assumptions(model: ModelProblem, M: float, n_samples: int = 1000, *,
                         extent: float = 5.0, seed: int = 0) -> ValidationReport:
    """Sample-based check of the standing assumptions on β and b over |r| ≤ M.

    Covers β(0) = 0, strong monotonicity of β, positivity and C² smoothness
    of Φ, b(x, 0) = 0, boundedness of b, δ dominating ‖b_x‖, and finite
    difference consistency of every supplied derivative.
    """
    if not M > 0:
        raise ValueError(f"M must be positive, got {M}")
    if n_samples < 100:
        raise ValueError(f"n_samples must be at least 100, got {n_samples}")

    rng = np.random.default_rng(seed)
    nl = model.nonlinearity
    g0 = nl.gamma0
    report = ValidationReport(model.name, M)
    add = report.checks.append

    b0 = float(np.abs(model.beta(0.0)))
    add(AssumptionCheck("beta(0)=0", b0 <= 1e-14, b0, (0.0,)))

    # strong monotonicity on random pairs plus a grid through the origin
    r_grid = np.linspace(-M, M, max(n_samples, 101) | 1)
    r1 = np.concatenate([rng.uniform(-M, M, n_samples), r_grid[:-1]])
    r2 = np.concatenate([rng.uniform(-M, M, n_samples), r_grid[1:]])
    keep = np.abs(r1 - r2) > 1e-12
    r1, r2 = r1[keep], r2[keep]
    quotient = (model.beta(r1) - model.beta(r2)) / (r1 - r2)
    deriv = model.beta_prime(r_grid)
    margins = np.concatenate([quotient - g0, deriv - g0])
    i = int(np.argmin(margins))
    sample = (float(r1[i]), float(r2[i])) if i < r1.size else (float(r_grid[i - r1.size]),)
    add(AssumptionCheck("monotonicity", bool(margins[i] >= -1e-12 * max(1.0, g0)), float(margins[i]), sample,
                        "min of (beta(r1)-beta(r2))/(r1-r2) - gamma0"))

    step = 1e-5 * (1.0 + np.abs(r_grid))
    fd = (model.beta(r_grid + step) - model.beta(r_grid - step)) / (2 * step)
    mis = _fd_mismatch(deriv, fd)
    i = int(np.argmax(mis))
    add(AssumptionCheck("beta_prime consistent", bool(mis[i] <= FD_RTOL), float(mis[i]), (float(r_grid[i]),)))

    ph = np.asarray(phi(model, r_grid))
    i = int(np.argmin(ph))
    add(AssumptionCheck("phi >= gamma0", bool(ph[i] >= g0 * (1 - 1e-12)), float(ph[i] - g0), (float(r_grid[i]),)))

    # C² probe: second differences at two step sizes must agree and stay finite
    probe = np.linspace(-M, M, 201)
    s = 1e-2 * max(M, 1e-3)
    d2a = (np.asarray(phi(model, probe + s)) - 2 * np.asarray(phi(model, probe)) + np.asarray(phi(model, probe - s))) / s**2
    s2 = s / 2
    d2b = (np.asarray(phi(model, probe + s2)) - 2 * np.asarray(phi(model, probe)) + np.asarray(phi(model, probe - s2))) / s2**2
    gap = np.abs(d2a - d2b) / np.maximum(1.0, np.abs(d2b))
    ok = bool(np.all(np.isfinite(d2a)) and np.all(np.isfinite(d2b)) and np.max(gap) <= 1e-2)
    i = int(np.nanargmax(np.where(np.isfinite(gap), gap, np.inf)))
    add(AssumptionCheck("phi C2 probe", ok, float(gap[i]), (float(probe[i]),)))

    drift = model.drift
    d = model.dimension
    xs = rng.uniform(-extent, extent, size=(d, n_samples))
    rs = rng.uniform(-M, M, size=n_samples)

    at_zero = np.linalg.norm(drift.b(xs, np.zeros(n_samples)), axis=0)
    i = int(np.argmax(at_zero))
    add(AssumptionCheck("b(x,0)=0", bool(at_zero[i] <= 1e-14), float(at_zero[i]), tuple(xs[:, i])))

    mag = np.linalg.norm(drift.b(xs, rs), axis=0)
    i = int(np.argmax(mag))
    add(AssumptionCheck("|b| <= b_sup", bool(mag[i] <= drift.b_sup * (1 + 1e-12) + 1e-15),
                        float(mag[i] - drift.b_sup), tuple(xs[:, i]) + (float(rs[i]),)))

    if not drift.is_zero:
        hr = 1e-5 * (1.0 + np.abs(rs))
        fd_r = (drift.b(xs, rs + hr) - drift.b(xs, rs - hr)) / (2 * hr)
        mis = np.max(_fd_mismatch(drift.b_r(xs, rs), fd_r), axis=0)
        jac = drift.b_x(xs, rs)
        for j in range(d):
            e = np.zeros((d, 1))
            e[j] = 1e-5 * (1.0 + np.max(np.abs(xs)))
            fd_x = (drift.b(xs + e, rs) - drift.b(xs - e, rs)) / (2 * e[j])
            mis = np.maximum(mis, np.max(_fd_mismatch(jac[:, j], fd_x), axis=0))
        i = int(np.argmax(mis))
        add(AssumptionCheck("drift derivatives consistent", bool(mis[i] <= FD_RTOL), float(mis[i]),
                            tuple(xs[:, i]) + (float(rs[i]),)))

        opn = _jacobian_opnorm(jac)
        if drift.delta is not None:
            dl = np.asarray(drift.delta(rs), dtype=float)
        else:
            uniq = np.linspace(-M, M, 21)
            table = np.array([delta_of(model, r) for r in uniq])
            dl = np.interp(rs, uniq, table) + np.max(np.abs(np.diff(table)))
        gap = opn - dl
        i = int(np.argmax(gap))
        ok = bool(gap[i] <= 1e-12 and np.all(np.isfinite(dl)))
        add(AssumptionCheck("delta >= |b_x|", ok, float(gap[i]), tuple(xs[:, i]) + (float(rs[i]),)))
    return report
