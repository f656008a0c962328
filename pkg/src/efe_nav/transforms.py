"""Gaussian approximations of a nonlinear sensor applied to a Gaussian state.

Each transform maps a state belief ``N(m, S)`` to the joint parameters
``(mu, sigma, gamma)``. The batched core (:func:`batched_moments`) is what the
planner calls thousands of times per step; the single-belief functions wrap it.
Angular observation components are averaged through residuals relative to a
reference output so the unscented and Monte-Carlo means behave across the
``+-pi`` cut.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .gaussian import Gaussian, JointApprox, batched_symmetric_sqrt, cholesky_psd, symmetrize
from .models import MeasurementModel, SensorSingularityError


@dataclass(frozen=True)
class Taylor1:
    """First-order Taylor (EKF) linearisation about the mean."""

    name = "taylor1"


@dataclass(frozen=True)
class Taylor2:
    """Second-order Taylor expansion with Hessian corrections."""

    name = "taylor2"


@dataclass(frozen=True)
class UnscentedParams:
    """Scaled unscented transform; ``kappa=None`` means ``3 - D_x``."""

    alpha: float = 1.0
    beta: float = 2.0
    kappa: float | None = None

    name = "unscented"

    def kappa_for(self, dim_x: int) -> float:
        return 3.0 - dim_x if self.kappa is None else float(self.kappa)

    def lam(self, dim_x: int) -> float:
        return self.alpha**2 * (dim_x + self.kappa_for(dim_x)) - dim_x

    def weights(self, dim_x: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance weights for the ``2 D_x + 1`` sigma points."""
        lam = self.lam(dim_x)
        scale = dim_x + lam
        if not scale > 0:
            raise ValueError(f"D_x + lambda must be positive, got {scale}")
        wm = np.full(2 * dim_x + 1, 1.0 / (2.0 * scale))
        wm[0] = lam / scale
        wc = wm.copy()
        wc[0] += 1.0 - self.alpha**2 + self.beta
        return wm, wc


TransformKind = Union[Taylor1, Taylor2, UnscentedParams]

TAYLOR1 = Taylor1()
TAYLOR2 = Taylor2()

_KIND_ALIASES = {
    "taylor1": "taylor1", "t1": "taylor1", "ekf": "taylor1",
    "taylor2": "taylor2", "t2": "taylor2",
    "unscented": "unscented", "ut": "unscented", "ukf": "unscented",
}


def kind_from_name(name: str, **ut_params) -> TransformKind:
    key = _KIND_ALIASES.get(name.lower())
    if key is None:
        raise ValueError(f"unknown transform {name!r}")
    if key == "taylor1":
        return TAYLOR1
    if key == "taylor2":
        return TAYLOR2
    return UnscentedParams(**ut_params)


def sigma_points(mean: np.ndarray, cov: np.ndarray, params: UnscentedParams) -> np.ndarray:
    """Sigma points, shape ``(..., 2 D_x + 1, D_x)``; rows 1..D_x are ``+`` columns."""
    mean = np.asarray(mean, dtype=float)
    dim = mean.shape[-1]
    scale = dim + params.lam(dim)
    if not scale > 0:
        raise ValueError(f"D_x + lambda must be positive, got {scale}")
    root = batched_symmetric_sqrt(cov)
    offs = math.sqrt(scale) * np.swapaxes(root, -1, -2)  # row i = column i of the root
    m = mean[..., None, :]
    return np.concatenate([m, m + offs, m - offs], axis=-2)


def second_order_term(hessians: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """``0.5 * tr(H_i S H_j S)`` for every output pair, shape ``(..., D_y, D_y)``."""
    HS = np.einsum("...iab,...bc->...iac", hessians, cov)
    return 0.5 * np.einsum("...iac,...jca->...ij", HS, HS)


def _safe(model: MeasurementModel, x: np.ndarray, bad: np.ndarray) -> np.ndarray:
    if not bad.any():
        return x
    x = x.copy()
    x[bad] = model.regular_point()
    return x


def batched_moments(kind: TransformKind, model: MeasurementModel, means: np.ndarray, covs: np.ndarray):
    """Joint moments for a stack of beliefs.

    Returns ``(mu, sigma, gamma, bad)`` where ``bad`` flags beliefs whose
    expansion point (or any sigma point) is singular for the sensor; their
    moments are computed at a placeholder state and must not be used.
    """
    means = np.asarray(means, dtype=float)
    covs = np.asarray(covs, dtype=float)
    R = model.R
    if isinstance(kind, (Taylor1, Taylor2)):
        bad = model.singular_mask(means)
        x = _safe(model, means, bad)
        J = model.jacobian(x)
        mu = model.observe(x)
        gamma = covs @ np.swapaxes(J, -1, -2)
        sigma = J @ gamma + R
        if isinstance(kind, Taylor2):
            H = model.hessians(x)
            mu = mu + 0.5 * np.einsum("...iab,...ba->...i", H, covs)
            sigma = sigma + second_order_term(H, covs)
        return model.wrap(mu), symmetrize(sigma), gamma, bad
    if isinstance(kind, UnscentedParams):
        dim = means.shape[-1]
        wm, wc = kind.weights(dim)
        chi = sigma_points(means, covs, kind)
        bad_pts = model.singular_mask(chi)
        bad = bad_pts.any(axis=-1)
        Y = model.observe(_safe(model, chi, bad_pts))
        delta = model.residual(Y, Y[..., :1, :])
        shift = np.einsum("k,...ki->...i", wm, delta)
        mu = Y[..., 0, :] + shift
        r = delta - shift[..., None, :]
        sigma = np.einsum("k,...ki,...kj->...ij", wc, r, r) + R
        gamma = np.einsum("k,...ki,...kj->...ij", wc, chi - means[..., None, :], r)
        return model.wrap(mu), symmetrize(sigma), gamma, bad
    raise TypeError(f"unknown transform kind {kind!r}")


def transform(kind: TransformKind, model: MeasurementModel, belief: Gaussian) -> JointApprox:
    mu, sigma, gamma, bad = batched_moments(kind, model, belief.mean, belief.cov)
    if bad:
        raise SensorSingularityError(f"{kind.name} transform hits the sensor singularity")
    return JointApprox(mu, sigma, gamma, belief, model.angular)


def taylor1_transform(model: MeasurementModel, belief: Gaussian) -> JointApprox:
    return transform(TAYLOR1, model, belief)


def taylor2_transform(model: MeasurementModel, belief: Gaussian) -> JointApprox:
    return transform(TAYLOR2, model, belief)


def unscented_transform(model: MeasurementModel, belief: Gaussian,
                        params: UnscentedParams | None = None) -> JointApprox:
    return transform(UnscentedParams() if params is None else params, model, belief)


@dataclass(frozen=True)
class MonteCarloMoments:
    """Sample moments plus standard errors of each estimate."""

    joint: JointApprox
    mu_se: np.ndarray
    sigma_se: np.ndarray
    gamma_se: np.ndarray
    n: int


def mc_moments(model: MeasurementModel, belief: Gaussian, n: int = 1_000_000, seed: int = 0,
               max_rejections: int = 100) -> MonteCarloMoments:
    if n < 10_000:
        raise ValueError(f"need at least 1e4 samples, got {n}")
    rng = np.random.default_rng(seed)
    L = cholesky_psd(belief.cov)
    x = belief.mean + rng.standard_normal((n, belief.dim)) @ L.T
    bad = model.singular_mask(x)
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > max_rejections:
            raise SensorSingularityError("Monte-Carlo samples keep hitting the sensor singularity")
        k = int(bad.sum())
        x[bad] = belief.mean + rng.standard_normal((k, belief.dim)) @ L.T
        bad = model.singular_mask(x)
    y = model.observe(x)
    ref = model.observe(belief.mean) if not model.singular_mask(belief.mean) else y[0]
    delta = model.residual(y, ref)
    shift = delta.mean(axis=0)
    r = delta - shift
    dx = x - x.mean(axis=0)
    yy = r[:, :, None] * r[:, None, :]
    xy = dx[:, :, None] * r[:, None, :]
    mu = model.wrap(ref + shift)
    sigma = yy.sum(axis=0) / (n - 1) + model.R
    gamma = xy.sum(axis=0) / (n - 1)
    sqn = math.sqrt(n)
    joint = JointApprox(mu, sigma, gamma, belief, model.angular)
    return MonteCarloMoments(
        joint=joint,
        mu_se=r.std(axis=0, ddof=1) / sqn,
        sigma_se=yy.std(axis=0, ddof=1) / sqn,
        gamma_se=xy.std(axis=0, ddof=1) / sqn,
        n=n,
    )


def mc_moment_oracle(model: MeasurementModel, belief: Gaussian, n: int = 1_000_000,
                     seed: int = 0) -> JointApprox:
    """Sampling estimate of the joint moments; test oracle for the transforms."""
    return mc_moments(model, belief, n, seed).joint
