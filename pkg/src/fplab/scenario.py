"""Scenario files: flat TOML ``key = value`` documents.

Unknown keys are errors, so a misspelt tolerance cannot silently fall
back to a default.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from fplab.grid import PeriodicGrid
from fplab.model import ModelProblem, gaussian_density, get_model
from fplab.pde import SolverConfig


class ScenarioError(ValueError):
    """Malformed scenario (syntax, unknown key, bad value)."""


class UnknownModel(KeyError):
    pass


@dataclass(frozen=True)
class Scenario:
    model: str = "LINEAR"
    dimension: int = 1
    L: float = 10.0
    n: int = 256
    T: float = 0.5
    h: float = 1e-3
    newton_tol: float = 1e-11
    newton_max_iter: int = 30
    damping: float = 1.0
    epsilon_reg: float = 0.0
    mollifier_width: float = 0.0
    dealias: bool = False
    snapshot_stride: int = 1
    # initial condition: Gaussian with these parameters
    sigma: float = 1.0
    initial_mass: float = 1.0
    center: float = 0.0
    # particles
    particles: int = 100_000
    particle_dt: float = 1e-3
    seed: int = 0
    estimator: str = "gaussian_kernel"
    bandwidth: str = "auto"
    reference: str = ""
    output: str = "out"

    def __post_init__(self):
        checks = [
            (self.dimension in (1, 2), "dimension must be 1 or 2"),
            (self.L > 0, "L must be positive"),
            (self.n >= 16 and not self.n & (self.n - 1), "n must be a power of two >= 16"),
            (self.T >= 0, "T must be nonnegative"),
            (self.h > 0, "h must be positive"),
            (self.newton_tol >= 1e-14, "newton_tol must be >= 1e-14"),
            (self.newton_max_iter >= 1, "newton_max_iter must be >= 1"),
            (0 < self.damping <= 1, "damping must lie in (0, 1]"),
            (self.epsilon_reg >= 0, "epsilon_reg must be nonnegative"),
            (self.mollifier_width >= 0, "mollifier_width must be nonnegative"),
            (self.snapshot_stride >= 1, "snapshot_stride must be >= 1"),
            (self.sigma > 0, "sigma must be positive"),
            (self.initial_mass > 0, "initial_mass must be positive"),
            (self.particles >= 1, "particles must be >= 1"),
            (self.particle_dt > 0, "particle_dt must be positive"),
            (self.estimator in ("histogram", "gaussian_kernel"), "estimator must be histogram or gaussian_kernel"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ScenarioError(msg)
        if self.bandwidth != "auto":
            try:
                if float(self.bandwidth) <= 0:
                    raise ValueError
            except ValueError:
                raise ScenarioError("bandwidth must be 'auto' or a positive number") from None

    # -- derived objects --------------------------------------------------

    def model_problem(self) -> ModelProblem:
        try:
            return get_model(self.model, self.dimension)
        except KeyError as exc:
            raise UnknownModel(exc.args[0]) from None

    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.dimension, self.L, self.n)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            h=self.h, newton_tol=self.newton_tol, newton_max_iter=self.newton_max_iter, damping=self.damping,
            epsilon_reg=self.epsilon_reg, mollifier_width=self.mollifier_width, dealias=self.dealias,
            snapshot_stride=self.snapshot_stride,
        )

    def initial_condition(self):
        return gaussian_density(self.sigma, self.initial_mass, [self.center] * self.dimension)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(Scenario)}


def _coerce(key: str, value, *, from_text: bool = False):
    kind = _FIELDS[key].type
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            if from_text and str(value).lower() in ("true", "false", "1", "0"):
                return str(value).lower() in ("true", "1")
            raise TypeError
        if kind == "int":
            if isinstance(value, bool):
                raise TypeError
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == "str":
            if not from_text and not isinstance(value, str):
                if key == "bandwidth" and isinstance(value, (int, float)):
                    return str(value)
                raise TypeError
            return str(value)
    except (TypeError, ValueError):
        raise ScenarioError(f"key {key!r}: expected {kind}, got {value!r}") from None
    raise AssertionError(kind)


def build_scenario(values: dict, overrides: dict | None = None) -> Scenario:
    merged = {}
    for key, value in values.items():
        if key not in _FIELDS:
            raise ScenarioError(f"unknown key {key!r}; allowed: {', '.join(_FIELDS)}")
        merged[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ScenarioError(f"unknown key {key!r} in override")
        merged[key] = _coerce(key, value, from_text=isinstance(value, str))
    return Scenario(**merged)


def load_scenario(path, overrides: dict | None = None) -> Scenario:
    text = Path(path).read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise ScenarioError(f"{path}: scenario files are flat; unexpected table {nested[0]!r}")
    return build_scenario(data, overrides)


def dump_scenario(s: Scenario) -> str:
    lines = []
    for key, value in s.to_dict().items():
        if isinstance(value, bool):
            lines.append(f"{key} = {'true' if value else 'false'}")
        elif isinstance(value, str):
            lines.append(f'{key} = "{value}"')
        elif isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
