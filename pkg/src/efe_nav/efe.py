"""Expected free energy: risk, ambiguity and their sum over a planning horizon.

Two evaluation paths exist on purpose. :func:`efe_step` / :func:`efe_horizon`
work one belief at a time through :class:`~efe_nav.gaussian.JointApprox` and
are the readable reference. :class:`HorizonObjective` evaluates many plans at
once and is what the planner optimises; the test suite pins the two together.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filtering import predict
from .gaussian import (
    LOG_2PI_E,
    Gaussian,
    JointApprox,
    NotPSDError,
    SingularMatrixError,
    kl_gaussian,
    logdet_psd,
)
from .models import SINGULARITY_RADIUS, LinearDynamics, MeasurementModel, RangeBearingSensor, SensorSingularityError
from .transforms import Taylor1, Taylor2, TransformKind, batched_moments, second_order_term, transform

SINGULARITY_PENALTY = 1e6


@dataclass(frozen=True)
class GoalPrior:
    """Desired distribution over future observations."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        g = Gaussian(self.mean, self.cov)
        object.__setattr__(self, "mean", g.mean)
        object.__setattr__(self, "cov", g.cov)

    def as_gaussian(self) -> Gaussian:
        return Gaussian(self.mean, self.cov)


@dataclass(frozen=True)
class ControlPrior:
    """Zero-mean isotropic Gaussian prior on each control, precision ``eta``."""

    precision: float

    def __post_init__(self):
        if not self.precision > 0:
            raise ValueError(f"control precision must be positive, got {self.precision}")

    def neg_log(self, u) -> float:
        """``-ln p(u)`` up to its normalising constant."""
        u = np.asarray(u, dtype=float)
        return 0.5 * self.precision * float(np.sum(u * u))


@dataclass(frozen=True)
class EfeTerms:
    risk: float
    ambiguity: float
    total: float


@dataclass(frozen=True)
class HorizonBreakdown:
    steps: tuple[EfeTerms, ...]
    control_penalty: float
    total: float


def ambiguity_generic(j: JointApprox) -> float:
    """Conditional entropy of y given x under the joint (nats)."""
    try:
        logdet = logdet_psd(j.schur())
    except NotPSDError as exc:
        raise SingularMatrixError(f"conditional covariance is not positive definite: {exc}") from exc
    return 0.5 * j.dim_y * LOG_2PI_E + 0.5 * logdet


def ambiguity_closed_form(kind: TransformKind, model: MeasurementModel, belief: Gaussian) -> float:
    """Ambiguity without forming the joint.

    First-order Taylor and unscented transforms give a constant set by ``R``;
    the second-order expansion adds the Hessian term, which depends on the mean.
    """
    cov = model.R
    if isinstance(kind, Taylor2):
        if model.singular_mask(belief.mean):
            raise SensorSingularityError("Hessian undefined at the sensor station")
        cov = cov + second_order_term(model.hessians(belief.mean), belief.cov)
    return 0.5 * model.dim_y * LOG_2PI_E + 0.5 * logdet_psd(cov)


def risk(pred: Gaussian, goal: GoalPrior) -> float:
    """KL divergence from the goal prior to the predicted observation."""
    return kl_gaussian(pred, goal.as_gaussian())


def _aligned_prediction(j: JointApprox, model: MeasurementModel, goal: GoalPrior) -> Gaussian:
    # angles compared along the short arc
    mu = goal.mean + model.residual(j.mu, goal.mean)
    return Gaussian(mu, j.sigma)


def efe_terms(kind: TransformKind, model: MeasurementModel, state_belief: Gaussian,
              goal: GoalPrior, include_ambiguity: bool = True) -> EfeTerms:
    """Risk and ambiguity for a given predictive state belief."""
    j = transform(kind, model, state_belief)
    r = risk(_aligned_prediction(j, model, goal), goal)
    a = ambiguity_generic(j) if include_ambiguity else 0.0
    return EfeTerms(r, a, r + a)


def efe_step(kind: TransformKind, dyn: LinearDynamics, model: MeasurementModel, belief: Gaussian,
             u, goal: GoalPrior, include_ambiguity: bool = True) -> EfeTerms:
    """One-step expected free energy of applying ``u`` from posterior ``belief``."""
    return efe_terms(kind, model, predict(dyn, belief, u), goal, include_ambiguity)


def efe_horizon_breakdown(kind: TransformKind, dyn: LinearDynamics, model: MeasurementModel,
                          belief: Gaussian, plan, goal: GoalPrior, prior: ControlPrior,
                          include_ambiguity: bool = True) -> HorizonBreakdown:
    plan = np.asarray(plan, dtype=float).reshape(-1, dyn.dim_u)
    if plan.shape[0] < 1:
        raise ValueError("plan must contain at least one control")
    steps = []
    b = belief
    for u in plan:
        b = predict(dyn, b, u)
        try:
            steps.append(efe_terms(kind, model, b, goal, include_ambiguity))
        except (SensorSingularityError, SingularMatrixError):
            steps.append(EfeTerms(SINGULARITY_PENALTY, 0.0, SINGULARITY_PENALTY))
    control = sum(prior.neg_log(u) for u in plan)
    total = sum(s.total for s in steps) + control
    return HorizonBreakdown(tuple(steps), control, total)


def efe_horizon(kind: TransformKind, dyn: LinearDynamics, model: MeasurementModel, belief: Gaussian,
                plan, goal: GoalPrior, prior: ControlPrior, include_ambiguity: bool = True) -> float:
    """Planning objective: summed one-step EFE plus the control prior's negative log."""
    return efe_horizon_breakdown(kind, dyn, model, belief, plan, goal, prior, include_ambiguity).total


def _compiled_terms(kind, model: RangeBearingSensor, means, covs, goal: GoalPrior, include_ambiguity: bool):
    from ._kernels import range_bearing_taylor_terms

    lead = means.shape[:-1]
    nx = means.shape[-1]
    m = np.ascontiguousarray(means, dtype=float).reshape(-1, nx)
    S = np.ascontiguousarray(np.broadcast_to(covs, lead + (nx, nx)), dtype=float).reshape(-1, nx, nx)
    _, goal_logdet = np.linalg.slogdet(goal.cov)
    r, a, bad = range_bearing_taylor_terms(
        m, S, model.station.position, model.R, goal.mean, np.linalg.inv(goal.cov), goal_logdet,
        isinstance(kind, Taylor2), include_ambiguity, SINGULARITY_RADIUS)
    return r.reshape(lead), a.reshape(lead), bad.reshape(lead)


def batched_efe_terms(kind: TransformKind, model: MeasurementModel, means: np.ndarray, covs: np.ndarray,
                      goal: GoalPrior, include_ambiguity: bool = True, compiled: bool = True):
    """Vectorised ``(risk, ambiguity, bad)`` for stacks of predictive beliefs.

    With ``compiled`` set, range-bearing sensors under Taylor expansions go
    through a compiled kernel; everything else uses the generic joint.
    """
    if compiled and isinstance(model, RangeBearingSensor) and isinstance(kind, (Taylor1, Taylor2)):
        return _compiled_terms(kind, model, means, covs, goal, include_ambiguity)
    mu, sigma, gamma, bad = batched_moments(kind, model, means, covs)
    dy = model.dim_y
    goal_prec = np.linalg.inv(goal.cov)
    _, goal_logdet = np.linalg.slogdet(goal.cov)
    sign, logdet = np.linalg.slogdet(sigma)
    bad = bad | (sign <= 0)
    d = model.residual(goal.mean, mu)
    trace = np.einsum("ij,...ji->...", goal_prec, sigma)
    maha = np.einsum("...i,ij,...j->...", d, goal_prec, d)
    risk_ = 0.5 * (goal_logdet - logdet - dy + trace + maha)
    if include_ambiguity:
        schur = sigma - np.swapaxes(gamma, -1, -2) @ np.linalg.solve(covs, gamma)
        sign_c, logdet_c = np.linalg.slogdet(schur)
        bad = bad | (sign_c <= 0)
        amb = 0.5 * dy * LOG_2PI_E + 0.5 * logdet_c
    else:
        amb = np.zeros_like(risk_)
    bad = bad | ~np.isfinite(risk_) | ~np.isfinite(amb)
    return risk_, amb, bad


class HorizonObjective:
    """Vectorised horizon objective for a fixed starting belief.

    Rolled-out covariances do not depend on the plan and are computed once;
    predicted means are affine in the stacked controls. Each step's EFE is a
    function of that step's predicted mean only, so the gradient is assembled
    from central differences in state space followed by the (exact) chain rule
    through the mean rollout.
    """

    def __init__(self, kind: TransformKind, dyn: LinearDynamics, model: MeasurementModel,
                 belief: Gaussian, goal: GoalPrior, horizon: int, eta: float,
                 include_ambiguity: bool = True, fd_step: float = 1e-6):
        if horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.kind, self.dyn, self.model, self.goal = kind, dyn, model, goal
        self.horizon = horizon
        self.prior = ControlPrior(eta)
        self.include_ambiguity = include_ambiguity
        self.fd_step = fd_step
        A, B = dyn.A, dyn.B
        nx, nu = dyn.dim_x, dyn.dim_u
        covs = np.empty((horizon, nx, nx))
        free = np.empty((horizon, nx))
        S, m = belief.cov, belief.mean
        powers = [np.eye(nx)]
        for t in range(horizon):
            S = A @ S @ A.T + dyn.Q
            S = 0.5 * (S + S.T)
            m = A @ m
            covs[t], free[t] = S, m
            powers.append(A @ powers[-1])
        response = np.zeros((horizon, nx, horizon, nu))
        for t in range(horizon):
            for s in range(t + 1):
                response[t, :, s, :] = powers[t - s] @ B
        self.covs = covs
        self.free = free
        self.response = response.reshape(horizon * nx, horizon * nu)
        self.n_evals = 0
        self.dim = horizon * nu

    def means(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float)).reshape(-1, self.dim)
        m = U @ self.response.T
        return m.reshape(-1, self.horizon, self.dyn.dim_x) + self.free

    def step_terms(self, means: np.ndarray):
        """``(risk, ambiguity, total)`` per step for means of shape ``(..., T, D_x)``."""
        covs = np.broadcast_to(self.covs, means.shape + (means.shape[-1],))
        r, a, bad = batched_efe_terms(self.kind, self.model, means, covs, self.goal, self.include_ambiguity)
        total = np.where(bad, SINGULARITY_PENALTY, r + a)
        return np.where(bad, SINGULARITY_PENALTY, r), np.where(bad, 0.0, a), total

    def values(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float)).reshape(-1, self.dim)
        self.n_evals += U.shape[0]
        _, _, total = self.step_terms(self.means(U))
        return total.sum(axis=-1) + 0.5 * self.prior.precision * np.sum(U * U, axis=-1)

    def __call__(self, u) -> float:
        return float(self.values(u)[0])

    def value_and_grad(self, u) -> tuple[float, np.ndarray]:
        u = np.asarray(u, dtype=float).reshape(self.dim)
        self.n_evals += 1
        nx = self.dyn.dim_x
        m = self.means(u)[0]  # (T, nx)
        h = self.fd_step * np.maximum(1.0, np.abs(m))  # (T, nx)
        pts = np.repeat(m[:, None, :], 2 * nx + 1, axis=1)
        idx = np.arange(nx)
        pts[:, 1 + idx, idx] += h
        pts[:, 1 + nx + idx, idx] -= h
        # (T, 2nx+1) -> evaluate with the step's own covariance
        covs = np.broadcast_to(self.covs[:, None], pts.shape + (nx,))
        r, a, bad = batched_efe_terms(self.kind, self.model, pts, covs, self.goal, self.include_ambiguity)
        total = np.where(bad, SINGULARITY_PENALTY, r + a)
        grad_m = (total[:, 1:1 + nx] - total[:, 1 + nx:]) / (2.0 * h)
        grad = self.response.T @ grad_m.reshape(-1) + self.prior.precision * u
        value = float(total[:, 0].sum()) + self.prior.neg_log(u)
        return value, grad
