"""Scenario files: a versioned YAML document describing one experiment.

Units: positions in m, velocities in m/s, time step in s, bearing in rad.
Covariances are in the squared units of their variables. A covariance may be
given as a scalar (scaled identity) or as a full nested list.

Example::

    schema_version: 1
    name: demo
    seed: 0
    trials: 100
    n_steps: 30
    dynamics: {dt: 0.5, sigma: [0.1, 0.1]}
    sensor: {station: [0.0, 0.0], rho: [0.001, 0.001]}
    initial_state: [0.0, -1.0, 0.0, 0.0]
    prior: {mean: [0.0, -1.0, 0.0, 0.0], cov: 0.5}
    goal: {x_star: [0.0, 1.0, 0.0, 0.0], cov: 0.5}
    agent: {kind: efe2, horizon: 10, u_max: 1.0, eta: 1.0e-8}
    heatmap: {agents: [efe1, efer, efe2], range: [-2.0, 2.0], resolution: 101, cov: 1.0}
    output: {dir: results/demo}
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .efe import GoalPrior
from .gaussian import Gaussian
from .models import RangeBearingSensor, SensorStation, build_double_integrator
from .planners import Agent, AgentKind, PlannerConfig
from .sim import Scenario
from .transforms import UnscentedParams

SCHEMA_VERSION = 1
SUFFIX = ".scenario"


class ScenarioError(ValueError):
    """Invalid scenario document."""


def _floats(value, n=None, name="value") -> tuple:
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise ScenarioError(f"{name} must be a list of numbers, got {value!r}") from None
    if n is not None and len(out) != n:
        raise ScenarioError(f"{name} must have {n} entries, got {len(out)}")
    return out


def _cov(value, n, name):
    """Scalar or n x n nested list; stored as given (float or tuple of tuples)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        if not value > 0:
            raise ScenarioError(f"{name} must be positive")
        return float(value)
    try:
        rows = tuple(_floats(r, n, name) for r in value)
    except TypeError:
        raise ScenarioError(f"{name} must be a number or a {n}x{n} matrix") from None
    if len(rows) != n:
        raise ScenarioError(f"{name} must be {n}x{n}")
    return rows


def _cov_matrix(value, n) -> np.ndarray:
    return value * np.eye(n) if isinstance(value, float) else np.array(value, dtype=float)


def _pair(value, name) -> tuple:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value), float(value))
    return _floats(value, 2, name)


@dataclass(frozen=True)
class DynamicsSection:
    dt: float = 0.5                  # s
    sigma: tuple = (0.1, 0.1)        # process noise scale per axis

    def __post_init__(self):
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "sigma", _pair(self.sigma, "dynamics.sigma"))
        if not self.dt > 0:
            raise ScenarioError("dynamics.dt must be positive")


@dataclass(frozen=True)
class SensorSection:
    station: tuple = (0.0, 0.0)      # m
    rho: tuple = (0.001, 0.001)      # noise std of (distance m, bearing rad)

    def __post_init__(self):
        object.__setattr__(self, "station", _floats(self.station, 2, "sensor.station"))
        object.__setattr__(self, "rho", _pair(self.rho, "sensor.rho"))
        if min(self.rho) <= 0:
            raise ScenarioError("sensor.rho must be positive")


@dataclass(frozen=True)
class PriorSection:
    mean: tuple = (0.0, -1.0, 0.0, 0.0)
    cov: object = 0.5

    def __post_init__(self):
        object.__setattr__(self, "mean", _floats(self.mean, 4, "prior.mean"))
        object.__setattr__(self, "cov", _cov(self.cov, 4, "prior.cov"))


@dataclass(frozen=True)
class GoalSection:
    x_star: tuple = (0.0, 1.0, 0.0, 0.0)
    cov: object = 0.5                # observation-space covariance (m^2, rad^2)
    mean: tuple | None = None        # explicit observation goal; default is g(x_star)

    def __post_init__(self):
        object.__setattr__(self, "x_star", _floats(self.x_star, 4, "goal.x_star"))
        object.__setattr__(self, "cov", _cov(self.cov, 2, "goal.cov"))
        if self.mean is not None:
            object.__setattr__(self, "mean", _floats(self.mean, 2, "goal.mean"))


@dataclass(frozen=True)
class AgentSection:
    kind: str = "efe2"
    horizon: int = 10
    u_max: float = 1.0               # m/s^2
    eta: float = 1e-8
    max_evals: int = 2000
    tol: float = 1e-6
    restarts: int = 3
    planner_seed: int = 0

    def __post_init__(self):
        try:
            AgentKind(str(self.kind).lower())
        except ValueError:
            raise ScenarioError(f"agent.kind must be one of {[a.value for a in AgentKind]}") from None
        object.__setattr__(self, "kind", str(self.kind).lower())
        for name in ("horizon", "max_evals", "restarts", "planner_seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ScenarioError(f"agent.{name} must be an integer")
        for name in ("u_max", "eta", "tol"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.horizon < 1 or self.u_max <= 0 or self.eta < 0 or self.restarts < 0:
            raise ScenarioError("agent: horizon >= 1, u_max > 0, eta >= 0 and restarts >= 0 required")


@dataclass(frozen=True)
class HeatmapSection:
    agents: tuple = ("efe1", "efer", "efe2")
    range: tuple = (-2.0, 2.0)       # m, applied to both axes
    resolution: int = 101
    cov: object = 1.0                # state covariance at every cell

    def __post_init__(self):
        agents = tuple(str(a).lower() for a in self.agents)
        for a in agents:
            if a not in ("efe1", "efer", "efe2"):
                raise ScenarioError(f"heatmap.agents: unknown EFE agent {a!r}")
        object.__setattr__(self, "agents", agents)
        object.__setattr__(self, "range", _floats(self.range, 2, "heatmap.range"))
        object.__setattr__(self, "cov", _cov(self.cov, 4, "heatmap.cov"))
        if not self.range[0] < self.range[1]:
            raise ScenarioError("heatmap.range must be increasing")
        if isinstance(self.resolution, bool) or not isinstance(self.resolution, int) or self.resolution < 2:
            raise ScenarioError("heatmap.resolution must be an integer >= 2")


@dataclass(frozen=True)
class OutputSection:
    dir: str = "results"


@dataclass(frozen=True)
class UnscentedSection:
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float | None = None       # None means 3 - D_x

    def __post_init__(self):
        try:
            self.params().weights(4)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"unscented: {exc}") from None

    def params(self) -> UnscentedParams:
        return UnscentedParams(self.alpha, self.beta, self.kappa)


_SECTIONS = {
    "dynamics": DynamicsSection, "sensor": SensorSection, "prior": PriorSection, "goal": GoalSection,
    "agent": AgentSection, "heatmap": HeatmapSection, "output": OutputSection, "unscented": UnscentedSection,
}


@dataclass(frozen=True)
class ScenarioFile:
    name: str = "scenario"
    seed: int = 0
    trials: int = 100
    n_steps: int = 30
    initial_state: tuple = (0.0, -1.0, 0.0, 0.0)   # m, m, m/s, m/s
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    sensor: SensorSection = field(default_factory=SensorSection)
    prior: PriorSection = field(default_factory=PriorSection)
    goal: GoalSection = field(default_factory=GoalSection)
    agent: AgentSection = field(default_factory=AgentSection)
    heatmap: HeatmapSection = field(default_factory=HeatmapSection)
    output: OutputSection = field(default_factory=OutputSection)
    unscented: UnscentedSection = field(default_factory=UnscentedSection)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "initial_state", _floats(self.initial_state, 4, "initial_state"))
        for name in ("seed", "trials", "n_steps"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise ScenarioError(f"{name} must be an integer")
        if self.trials < 1 or self.n_steps < 1 or self.seed < 0:
            raise ScenarioError("trials and n_steps must be >= 1 and seed >= 0")

    # --- conversion -------------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioFile":
        if not isinstance(doc, dict):
            raise ScenarioError("scenario document must be a mapping")
        if "schema_version" not in doc:
            raise ScenarioError("missing schema_version")
        if doc["schema_version"] != SCHEMA_VERSION:
            raise ScenarioError(f"unsupported schema_version {doc['schema_version']!r} (expected {SCHEMA_VERSION})")
        kwargs = {}
        top = {f.name for f in fields(cls)}
        for key, value in doc.items():
            if key not in top:
                raise ScenarioError(f"unknown key {key!r}")
            if key in _SECTIONS:
                kwargs[key] = _section(_SECTIONS[key], value, key)
            else:
                kwargs[key] = value
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            return v
        out = {"schema_version": self.schema_version}
        for f in fields(self):
            if f.name == "schema_version":
                continue
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                out[f.name] = {g.name: plain(getattr(v, g.name)) for g in fields(v)}
            else:
                out[f.name] = plain(v)
        return out

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def with_overrides(self, **kw) -> "ScenarioFile":
        kw = {k: v for k, v in kw.items() if v is not None}
        agent_kind = kw.pop("agent", None)
        out = dataclasses.replace(self, **kw)
        if agent_kind is not None:
            out = dataclasses.replace(out, agent=_replace_section(out.agent, kind=agent_kind))
        return out

    # --- model construction -------------------------------------------------

    def sensor_model(self) -> RangeBearingSensor:
        return RangeBearingSensor.with_noise(*self.sensor.rho, station=SensorStation(self.sensor.station))

    def goal_prior(self) -> GoalPrior:
        model = self.sensor_model()
        mean = model.observe(np.array(self.goal.x_star)) if self.goal.mean is None else np.array(self.goal.mean)
        return GoalPrior(mean, _cov_matrix(self.goal.cov, 2))

    def agent_kind(self) -> AgentKind:
        return AgentKind(self.agent.kind)

    def build(self) -> Scenario:
        try:
            return self._build()
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None

    def _build(self) -> Scenario:
        a = self.agent
        kind = AgentKind(a.kind)
        cfg = PlannerConfig.for_agent(kind, horizon=a.horizon, u_max=a.u_max, eta=a.eta, max_evals=a.max_evals,
                                      tol=a.tol, restarts=a.restarts, seed=a.planner_seed)
        agent = Agent(kind, cfg, x_star=np.array(self.goal.x_star))
        model = self.sensor_model()
        return Scenario(
            dyn=build_double_integrator(self.dynamics.dt, *self.dynamics.sigma),
            model=model,
            station=model.station,
            x0=np.array(self.initial_state),
            prior=Gaussian(np.array(self.prior.mean), _cov_matrix(self.prior.cov, 4)),
            goal=self.goal_prior(),
            x_star=np.array(self.goal.x_star),
            n_steps=self.n_steps,
            agent=agent,
            seed=self.seed,
        )


def _section(cls, value, key):
    if value is None:
        value = {}
    if not isinstance(value, dict):
        raise ScenarioError(f"{key} must be a mapping")
    names = {f.name for f in fields(cls)}
    for k in value:
        if k not in names:
            raise ScenarioError(f"unknown key {key}.{k}")
    try:
        return cls(**value)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{key}: {exc}") from None


def _replace_section(sec, **kw):
    try:
        return dataclasses.replace(sec, **kw)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from None


def loads(text: str) -> ScenarioFile:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"malformed YAML: {exc}") from None
    return ScenarioFile.from_dict(doc)


def load(path) -> ScenarioFile:
    """Read a scenario from ``path``; OSError propagates for I/O problems."""
    return loads(Path(path).read_text(encoding="utf-8"))


def bundled_names() -> list[str]:
    root = resources.files("efe_nav") / "scenarios"
    return sorted(p.name[: -len(SUFFIX)] for p in root.iterdir() if p.name.endswith(SUFFIX))


def bundled_path(name: str):
    if name.endswith(SUFFIX):
        name = name[: -len(SUFFIX)]
    p = resources.files("efe_nav") / "scenarios" / f"{name}{SUFFIX}"
    if not p.is_file():
        raise FileNotFoundError(f"no bundled scenario named {name!r}; have {bundled_names()}")
    return p


def resolve(name_or_path: str) -> ScenarioFile:
    """Load a path, or a bundled scenario by name when no such file exists."""
    if Path(name_or_path).is_file():
        return load(name_or_path)
    return loads(bundled_path(name_or_path).read_text(encoding="utf-8"))
