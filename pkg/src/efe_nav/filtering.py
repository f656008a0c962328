"""Gaussian filtering with a pluggable sensor approximation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import Gaussian, JointApprox, solve_psd, symmetrize
from .models import LinearDynamics, MeasurementModel, wrap_angle
from .transforms import TransformKind, transform


@dataclass(frozen=True)
class FilterState:
    belief: Gaussian
    step: int = 0

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be non-negative")


def predict(dyn: LinearDynamics, post: Gaussian, u) -> Gaussian:
    """Prior predictive ``N(A m + B u, A S A^T + Q)``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if post.dim != dyn.dim_x:
        raise ValueError(f"belief has dimension {post.dim}, dynamics expect {dyn.dim_x}")
    if u.shape != (dyn.dim_u,):
        raise ValueError(f"control must have shape ({dyn.dim_u},), got {u.shape}")
    A = dyn.A
    return Gaussian(A @ post.mean + dyn.B @ u, A @ post.cov @ A.T + dyn.Q)


def update(j: JointApprox, y_hat) -> Gaussian:
    """Condition the joint's state marginal on an observation.

    Angular innovation components are wrapped before the gain is applied.
    """
    y_hat = np.atleast_1d(np.asarray(y_hat, dtype=float))
    if y_hat.shape != (j.dim_y,):
        raise ValueError(f"observation must have shape ({j.dim_y},), got {y_hat.shape}")
    innov = y_hat - j.mu
    if j.angular:
        idx = list(j.angular)
        innov[idx] = wrap_angle(innov[idx])
    # K^T = Sigma^-1 Gamma^T
    gain_t = solve_psd(j.sigma, j.gamma.T)
    mean = j.state.mean + gain_t.T @ innov
    cov = symmetrize(j.state.cov - j.gamma @ gain_t)
    return Gaussian(mean, cov)


def filter_step(kind: TransformKind, dyn: LinearDynamics, model: MeasurementModel,
                state: FilterState, u, y_hat) -> FilterState:
    prior = predict(dyn, state.belief, u)
    joint = transform(kind, model, prior)
    return FilterState(update(joint, y_hat), state.step + 1)
