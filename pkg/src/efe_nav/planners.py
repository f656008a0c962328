"""Receding-horizon planners: EFE MAP control and the quadratic MPC baseline."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from .efe import GoalPrior, HorizonObjective
from .filtering import FilterState
from .gaussian import Gaussian, symmetric_sqrt
from .models import LinearDynamics, MeasurementModel
from .transforms import TAYLOR1, TAYLOR2, TransformKind


class AgentKind(str, enum.Enum):
    MPC = "mpc"
    EFE1 = "efe1"  # first-order Taylor, risk + ambiguity
    EFER = "efer"  # second-order Taylor, risk only
    EFE2 = "efe2"  # second-order Taylor, risk + ambiguity

    @property
    def transform(self) -> TransformKind:
        return TAYLOR1 if self in (AgentKind.MPC, AgentKind.EFE1) else TAYLOR2

    @property
    def include_ambiguity(self) -> bool:
        return self in (AgentKind.EFE1, AgentKind.EFE2)


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 10
    u_max: float = 1.0
    kind: TransformKind = TAYLOR2
    include_ambiguity: bool = True
    eta: float = 1e-8
    max_evals: int = 2000
    tol: float = 1e-6
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.u_max > 0:
            raise ValueError("u_max must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")

    @classmethod
    def for_agent(cls, agent: AgentKind, **kwargs) -> "PlannerConfig":
        return cls(kind=agent.transform, include_ambiguity=agent.include_ambiguity, **kwargs)


@dataclass(frozen=True)
class ControlPlan:
    controls: np.ndarray  # (T, D_u)
    objective: float
    degraded: bool = False
    n_evals: int = 0

    @property
    def first(self) -> np.ndarray:
        return self.controls[0]

    def shifted(self) -> "ControlPlan":
        """Drop the executed control and repeat the last one."""
        c = np.concatenate([self.controls[1:], self.controls[-1:]], axis=0)
        return replace(self, controls=c)


def plan_efe(cfg: PlannerConfig, dyn: LinearDynamics, model: MeasurementModel, belief: Gaussian,
             goal: GoalPrior, warm_start: ControlPlan | None = None) -> ControlPlan:
    """MAP control sequence under the EFE objective with box constraints.

    Multi-start L-BFGS-B from the zero plan, the warm start and ``cfg.restarts``
    seeded random feasible plans; the best local solution wins. The result is
    never worse than any of the starting plans.
    """
    obj = HorizonObjective(cfg.kind, dyn, model, belief, goal, cfg.horizon, cfg.eta, cfg.include_ambiguity)
    n, nu = cfg.horizon, dyn.dim_u
    lo, hi = -cfg.u_max, cfg.u_max
    starts = [np.zeros(n * nu)]
    if warm_start is not None:
        w = np.asarray(warm_start.controls, dtype=float)
        if w.shape != (n, nu):
            raise ValueError(f"warm start has shape {w.shape}, expected {(n, nu)}")
        starts.append(np.clip(w.reshape(-1), lo, hi))
    rng = np.random.default_rng(cfg.seed)
    starts.extend(rng.uniform(lo, hi, size=(cfg.restarts, n * nu)))

    budget = max(cfg.max_evals // len(starts), 10)
    best_x, best_f = None, np.inf
    any_success = False
    for x0 in starts:
        f0 = obj(x0)
        if f0 < best_f:
            best_x, best_f = x0, f0
        res = optimize.minimize(
            obj.value_and_grad, x0, jac=True, method="L-BFGS-B",
            bounds=[(lo, hi)] * (n * nu),
            options={"maxfun": budget, "ftol": cfg.tol, "gtol": 1e-5},
        )
        any_success |= bool(res.success)
        x = np.clip(res.x, lo, hi)
        f = obj(x)
        if f < best_f:
            best_x, best_f = x, f
    return ControlPlan(best_x.reshape(n, nu), float(best_f), degraded=not any_success, n_evals=obj.n_evals)


def _rollout_matrices(dyn: LinearDynamics, horizon: int):
    nx, nu = dyn.dim_x, dyn.dim_u
    powers = [np.eye(nx)]
    for _ in range(horizon):
        powers.append(dyn.A @ powers[-1])
    F = np.zeros((horizon, nx, horizon, nu))
    for t in range(horizon):
        for s in range(t + 1):
            F[t, :, s, :] = powers[t - s] @ dyn.B
    free = np.stack([powers[t + 1] for t in range(horizon)])  # maps x_hat to x_t
    return F.reshape(horizon * nx, horizon * nu), free


def mpc_objective(dyn: LinearDynamics, x_hat, x_star, C, eta: float, plan) -> float:
    plan = np.asarray(plan, dtype=float).reshape(-1, dyn.dim_u)
    x = np.asarray(x_hat, dtype=float)
    total = 0.0
    for u in plan:
        x = dyn.A @ x + dyn.B @ u
        e = x - x_star
        total += float(e @ C @ e) + eta * float(u @ u)
    return total


def plan_mpc(cfg: PlannerConfig, dyn: LinearDynamics, belief_mean, x_star, C=None) -> ControlPlan:
    """Box-constrained finite-horizon quadratic tracking of ``x_star``.

    Solved as a (bounded) linear least-squares problem.
    """
    n, nx, nu = cfg.horizon, dyn.dim_x, dyn.dim_u
    x_hat = np.asarray(belief_mean, dtype=float).reshape(nx)
    x_star = np.asarray(x_star, dtype=float).reshape(nx)
    C = np.diag([1.0, 1.0] + [0.0] * (nx - 2)) if C is None else np.asarray(C, dtype=float)
    if C.shape != (nx, nx):
        raise ValueError(f"cost matrix must be {nx}x{nx}, got {C.shape}")
    F, free = _rollout_matrices(dyn, n)
    W = np.kron(np.eye(n), symmetric_sqrt(C))
    target = np.tile(x_star, n) - (free @ x_hat).reshape(-1)
    M = np.vstack([W @ F, np.sqrt(cfg.eta) * np.eye(n * nu)])
    b = np.concatenate([W @ target, np.zeros(n * nu)])
    u, *_ = np.linalg.lstsq(M, b, rcond=None)
    if np.any(np.abs(u) > cfg.u_max):
        u = optimize.lsq_linear(M, b, bounds=(-cfg.u_max, cfg.u_max), method="bvls", tol=1e-12).x
    plan = u.reshape(n, nu)
    return ControlPlan(plan, mpc_objective(dyn, x_hat, x_star, C, cfg.eta, plan))


@dataclass(frozen=True)
class Agent:
    """A planner together with what it is trying to reach."""

    kind: AgentKind
    planner: PlannerConfig
    x_star: np.ndarray | None = None
    cost: np.ndarray | None = field(default=None)

    @property
    def filter_kind(self) -> TransformKind:
        return self.kind.transform


def receding_horizon_step(agent: Agent, dyn: LinearDynamics, model: MeasurementModel, state: FilterState,
                          goal: GoalPrior, warm_start: ControlPlan | None = None):
    """Plan from the current posterior; return the first control and the next warm start."""
    if agent.kind is AgentKind.MPC:
        plan = plan_mpc(agent.planner, dyn, state.belief.mean, agent.x_star, agent.cost)
    else:
        plan = plan_efe(agent.planner, dyn, model, state.belief, goal, warm_start)
    return plan.first.copy(), plan.shifted(), plan
