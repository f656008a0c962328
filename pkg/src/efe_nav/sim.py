"""Environment simulation, single trials, Monte-Carlo batches and EFE heatmaps."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .efe import SINGULARITY_PENALTY, GoalPrior, batched_efe_terms, efe_step
from .filtering import FilterState, filter_step
from .gaussian import Gaussian
from .models import LinearDynamics, MeasurementModel, SensorSingularityError, SensorStation
from .planners import Agent, AgentKind, ControlPlan, receding_horizon_step

log = logging.getLogger(__name__)

# draw kinds for the keyed generator
PROCESS_NOISE = 0
MEASUREMENT_NOISE = 1

DIVERGENCE_ERROR = 1e3
LOST_TRACK_ERROR = 1.0
GOAL_RADIUS = 0.3


def noise_rng(seed: int, step: int, draw: int) -> np.random.Generator:
    """Generator keyed by (trial seed, step, draw kind).

    Environment noise never depends on what the agent did with its own
    randomness, so different agents see identical noise realisations.
    """
    return np.random.default_rng([int(seed), int(step), int(draw)])


def step_env(dyn: LinearDynamics, model: MeasurementModel, x_true, u, seed: int, step: int):
    """Advance the true system one step and emit a noisy observation."""
    x_true = np.asarray(x_true, dtype=float)
    u = np.asarray(u, dtype=float)
    rng = noise_rng(seed, step, PROCESS_NOISE)
    mean = dyn.A @ x_true + dyn.B @ u
    for _ in range(2):
        x_next = mean + rng.multivariate_normal(np.zeros(dyn.dim_x), dyn.Q, method="eigh")
        if not model.singular_mask(x_next):
            break
    else:
        raise SensorSingularityError("true state landed on the sensor station twice")
    v = noise_rng(seed, step, MEASUREMENT_NOISE).multivariate_normal(
        np.zeros(model.dim_y), model.R, method="eigh")
    y = model.wrap(model.observe(x_next) + v)
    return x_next, y


@dataclass(frozen=True, eq=False)
class Scenario:
    dyn: LinearDynamics
    model: MeasurementModel
    station: SensorStation
    x0: np.ndarray
    prior: Gaussian
    goal: GoalPrior
    x_star: np.ndarray
    n_steps: int
    agent: Agent
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.dyn.dim_x,) or self.prior.dim != self.dyn.dim_x:
            raise ValueError("initial state / prior dimension does not match the dynamics")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x_star", np.asarray(self.x_star, dtype=float))


@dataclass
class TrialRecord:
    states: np.ndarray        # (K, D_x) true state after each step
    observations: np.ndarray  # (K, D_y)
    controls: np.ndarray      # (K, D_u)
    means: np.ndarray         # (K, D_x) posterior means
    covs: np.ndarray          # (K, D_x, D_x)
    risk: np.ndarray          # (K,) of the executed control (NaN for MPC)
    ambiguity: np.ndarray
    objective: np.ndarray     # planner objective at the returned plan
    seed: int
    diverged: bool = False
    error: str = ""
    summary: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.states)

    @property
    def tracking_errors(self) -> np.ndarray:
        return np.linalg.norm(self.states[:, :2] - self.means[:, :2], axis=1)


def _summarise(rec: TrialRecord, scn: Scenario) -> dict:
    pos = rec.states[:, :2] if rec.n_steps else scn.x0[None, :2]
    err = rec.tracking_errors if rec.n_steps else np.zeros(1)
    d_station = np.linalg.norm(pos - scn.station.position, axis=1)
    final_goal = float(np.linalg.norm(pos[-1] - scn.x_star[:2]))
    return {
        "steps_completed": int(rec.n_steps),
        "diverged": bool(rec.diverged),
        "final_distance_to_goal": final_goal,
        "reached_goal": bool(not rec.diverged and final_goal <= GOAL_RADIUS),
        "min_distance_to_station": float(d_station.min()),
        "final_tracking_error": float(err[-1]),
        "max_tracking_error": float(err.max()),
        "lost_track": bool(rec.diverged or err[-1] > LOST_TRACK_ERROR),
    }


def run_trial(scn: Scenario) -> TrialRecord:
    """Plan, act, observe and filter for ``scn.n_steps`` steps."""
    agent = scn.agent
    state = FilterState(scn.prior, 0)
    x = scn.x0.copy()
    warm: ControlPlan | None = None
    rows: dict[str, list] = {k: [] for k in ("x", "y", "u", "m", "S", "risk", "amb", "obj")}
    diverged, error = False, ""
    for k in range(1, scn.n_steps + 1):
        try:
            u, warm, plan = receding_horizon_step(agent, scn.dyn, scn.model, state, scn.goal, warm)
            if agent.kind is AgentKind.MPC:
                terms = (np.nan, np.nan)
            else:
                t = efe_step(agent.planner.kind, scn.dyn, scn.model, state.belief, u, scn.goal,
                             agent.planner.include_ambiguity)
                terms = (t.risk, t.ambiguity)
        except (SensorSingularityError, np.linalg.LinAlgError, ValueError) as exc:
            terms, plan = (SINGULARITY_PENALTY, 0.0), None
            u = np.zeros(scn.dyn.dim_u) if warm is None else warm.controls[0]
            log.debug("planning failed at step %d: %s", k, exc)
        x, y = step_env(scn.dyn, scn.model, x, u, scn.seed, k)
        try:
            state = filter_step(agent.filter_kind, scn.dyn, scn.model, state, u, y)
            m, S = state.belief.mean, state.belief.cov
            if not (np.all(np.isfinite(m)) and np.all(np.isfinite(S))):
                raise ValueError("non-finite belief")
        except (SensorSingularityError, np.linalg.LinAlgError, ValueError) as exc:
            diverged, error = True, f"filter failure at step {k}: {exc}"
            break
        for key, val in zip(rows, (x, y, u, m, S, terms[0], terms[1],
                                   np.nan if plan is None else plan.objective)):
            rows[key].append(val)
        if np.linalg.norm(x[:2] - m[:2]) > DIVERGENCE_ERROR:
            diverged, error = True, f"tracking error exceeded {DIVERGENCE_ERROR:g} at step {k}"
            break
    nx, ny, nu = scn.dyn.dim_x, scn.model.dim_y, scn.dyn.dim_u

    def arr(key, shape):
        return np.array(rows[key], dtype=float).reshape((-1,) + shape)

    rec = TrialRecord(
        states=arr("x", (nx,)), observations=arr("y", (ny,)), controls=arr("u", (nu,)),
        means=arr("m", (nx,)), covs=arr("S", (nx, nx)), risk=arr("risk", ()),
        ambiguity=arr("amb", ()), objective=arr("obj", ()), seed=scn.seed,
        diverged=diverged, error=error,
    )
    rec.summary = _summarise(rec, scn)
    return rec


def _with_seed(scn: Scenario, seed: int) -> Scenario:
    return Scenario(scn.dyn, scn.model, scn.station, scn.x0, scn.prior, scn.goal, scn.x_star,
                    scn.n_steps, scn.agent, seed)


def worker_count() -> int:
    raw = os.environ.get("EFE_NAV_THREADS", "0").strip() or "0"
    n = int(raw)
    return (os.cpu_count() or 1) if n <= 0 else n


@dataclass
class MonteCarloSummary:
    trials: list[TrialRecord]
    mean: np.ndarray     # (K, D_x) mean true state per step over completed trials
    std: np.ndarray
    stderr: np.ndarray
    n_completed: int
    n_diverged: int
    stats: dict


def aggregate(trials: list[TrialRecord], n_steps: int) -> MonteCarloSummary:
    """Order-independent reduction of trial records (trials sorted by seed)."""
    trials = sorted(trials, key=lambda r: r.seed)
    done = [r for r in trials if not r.diverged and r.n_steps == n_steps]
    if done:
        X = np.stack([r.states for r in done])
        mean = X.mean(axis=0)
        std = X.std(axis=0, ddof=1) if len(done) > 1 else np.zeros_like(mean)
        stderr = std / np.sqrt(len(done))
    else:
        mean = std = stderr = np.full((n_steps, trials[0].states.shape[-1] if trials else 0), np.nan)
    n = len(trials)
    stats = {
        "n_trials": n,
        "n_completed": len(done),
        "n_diverged": n - len(done),
        "lost_track": sum(r.summary["lost_track"] for r in trials),
        "lost_track_rate": sum(r.summary["lost_track"] for r in trials) / n,
        "reached_goal": sum(r.summary["reached_goal"] for r in trials),
        "max_abs_x1_of_mean": float(np.nanmax(np.abs(mean[:, 0]))) if done else float("nan"),
        "mean_position_stderr": float(np.nanmean(stderr[:, :2])) if done else float("nan"),
        "mean_min_distance_to_station": float(np.mean([r.summary["min_distance_to_station"] for r in trials])),
        "mean_final_distance_to_goal": float(np.mean([r.summary["final_distance_to_goal"] for r in trials])),
    }
    return MonteCarloSummary(trials, mean, std, stderr, len(done), n - len(done), stats)


def run_monte_carlo(scn: Scenario, n_trials: int, workers: int | None = None) -> MonteCarloSummary:
    """Trial ``i`` runs with seed ``scn.seed + i``."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    scenarios = [_with_seed(scn, scn.seed + i) for i in range(n_trials)]
    workers = worker_count() if workers is None else workers
    if workers > 1 and n_trials > 1:
        with ProcessPoolExecutor(max_workers=min(workers, n_trials)) as pool:
            trials = list(pool.map(run_trial, scenarios))
    else:
        trials = [run_trial(s) for s in scenarios]
    return aggregate(trials, scn.n_steps)


@dataclass
class Heatmap:
    x1: np.ndarray
    x2: np.ndarray
    values: np.ndarray   # (len(x2), len(x1)); row i is x2[i]
    argmin: tuple[float, float]
    agent: AgentKind


def efe_heatmap(model: MeasurementModel, goal: GoalPrior, agent: AgentKind, x_range=(-2.0, 2.0),
                y_range=None, resolution: int = 101, cov=None) -> Heatmap:
    """EFE of sitting at each grid position with a fixed state covariance.

    Velocities are zero; cells where the sensor is undefined get the penalty value.
    """
    if agent is AgentKind.MPC:
        raise ValueError("heatmaps are defined for EFE agents only")
    y_range = x_range if y_range is None else y_range
    x1 = np.linspace(*x_range, resolution)
    x2 = np.linspace(*y_range, resolution)
    cov = np.eye(model.dim_x) if cov is None else np.asarray(cov, dtype=float)
    P1, P2 = np.meshgrid(x1, x2)
    means = np.zeros(P1.shape + (model.dim_x,))
    means[..., 0], means[..., 1] = P1, P2
    covs = np.broadcast_to(cov, means.shape + (model.dim_x,))
    r, a, bad = batched_efe_terms(agent.transform, model, means, covs, goal, agent.include_ambiguity)
    values = np.where(bad, SINGULARITY_PENALTY, r + a)
    i, j = np.unravel_index(np.argmin(values), values.shape)
    return Heatmap(x1, x2, values, (float(x1[j]), float(x2[i])), agent)


def nearest_regular_cells(hm: Heatmap, point=(0.0, 0.0)) -> list[tuple[int, int]]:
    """Indices of the non-penalised cells closest to ``point``."""
    P1, P2 = np.meshgrid(hm.x1, hm.x2)
    d = np.hypot(P1 - point[0], P2 - point[1])
    d = np.where(hm.values >= SINGULARITY_PENALTY, np.inf, d)
    dmin = d.min()
    return [tuple(ix) for ix in np.argwhere(np.isclose(d, dmin, rtol=1e-9, atol=1e-12))]
