"""Dynamics and sensor models: the planar double integrator and a range-bearing station.

Measurement models are vectorised: ``observe``, ``jacobian`` and ``hessians``
accept states with arbitrary leading batch axes ``(..., D_x)`` and return
``(..., D_y)``, ``(..., D_y, D_x)`` and ``(..., D_y, D_x, D_x)`` respectively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gaussian import is_psd, is_symmetric

SINGULARITY_RADIUS = 1e-9


class SensorSingularityError(ValueError):
    """The sensor (or one of its derivatives) is undefined at the requested state."""


def wrap_angle(a):
    """Wrap angles into ``[-pi, pi)``."""
    return (np.asarray(a, dtype=float) + math.pi) % (2.0 * math.pi) - math.pi


def _check_cov(name: str, M: np.ndarray, dim: int) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (dim, dim):
        raise ValueError(f"{name} must be {dim}x{dim}, got {M.shape}")
    if not is_symmetric(M, 1e-10) or not is_psd(M):
        raise ValueError(f"{name} must be symmetric positive semidefinite")
    return M


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    """``x_k = A x_{k-1} + B u_k + e_k`` with ``e_k ~ N(0, Q)``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        Q = _check_cov("Q", self.Q, A.shape[0])
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)

    @property
    def dim_x(self) -> int:
        return self.A.shape[0]

    @property
    def dim_u(self) -> int:
        return self.B.shape[1]


def build_double_integrator(dt: float, sigma1: float, sigma2: float | None = None) -> LinearDynamics:
    """Constant-velocity model on the plane, state ordering (pos1, pos2, vel1, vel2).

    Process noise is continuous white acceleration noise with spectral
    densities ``sigma1**2`` and ``sigma2**2`` integrated over one step.
    """
    if sigma2 is None:
        sigma2 = sigma1
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError("noise scales must be positive")
    A = np.eye(4)
    A[0, 2] = A[1, 3] = dt
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = dt
    Q = np.zeros((4, 4))
    for pos, vel, s in ((0, 2, sigma1), (1, 3, sigma2)):
        q = s * s
        Q[pos, pos] = q * dt**3 / 3.0
        Q[pos, vel] = Q[vel, pos] = q * dt**2 / 2.0
        Q[vel, vel] = q * dt
    return LinearDynamics(A, B, Q)


@dataclass(frozen=True, eq=False)
class SensorStation:
    position: np.ndarray = (0.0, 0.0)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(2)
        if not np.all(np.isfinite(p)):
            raise ValueError("station position must be finite")
        object.__setattr__(self, "position", p)


class MeasurementModel:
    """Nonlinear sensor ``y = g(x) + v`` with ``v ~ N(0, R)``.

    Subclasses implement ``observe``, ``jacobian`` and ``hessians``.
    """

    dim_x: int
    dim_y: int
    R: np.ndarray
    angular: tuple[int, ...] = ()

    def observe(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessians(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def singular_mask(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask over batch axes marking states where ``g`` is undefined."""
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1], dtype=bool)

    def regular_point(self) -> np.ndarray:
        """Some state at which the sensor is well defined."""
        return np.zeros(self.dim_x)

    def residual(self, y: np.ndarray, ref: np.ndarray) -> np.ndarray:
        """``y - ref`` with angular components wrapped into ``[-pi, pi)``."""
        d = np.asarray(y, dtype=float) - np.asarray(ref, dtype=float)
        if self.angular:
            d = d.copy()
            idx = list(self.angular)
            d[..., idx] = wrap_angle(d[..., idx])
        return d

    def wrap(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if not self.angular:
            return y
        y = y.copy()
        idx = list(self.angular)
        y[..., idx] = wrap_angle(y[..., idx])
        return y


class LinearSensor(MeasurementModel):
    """Affine sensor ``g(x) = H x + c``; handy for exactness checks."""

    def __init__(self, H, R, c=None):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.dim_y, self.dim_x = self.H.shape
        self.c = np.zeros(self.dim_y) if c is None else np.asarray(c, dtype=float).reshape(self.dim_y)
        self.R = _check_cov("R", R, self.dim_y)

    def observe(self, x):
        return np.asarray(x, dtype=float) @ self.H.T + self.c

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.H, x.shape[:-1] + self.H.shape).copy()

    def hessians(self, x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (self.dim_y, self.dim_x, self.dim_x))


def _offsets(x, station: SensorStation, check: bool = True):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ValueError(f"state needs at least two position components, got {x.shape}")
    d1 = x[..., 0] - station.position[0]
    d2 = x[..., 1] - station.position[1]
    r = np.hypot(d1, d2)
    if check and np.any(r < SINGULARITY_RADIUS):
        raise SensorSingularityError("state is at the sensor station")
    return x, d1, d2, r


def range_bearing_observe(x, station: SensorStation = SensorStation()) -> np.ndarray:
    """Distance and angle ``atan2(d1, d2)`` (measured from the +x2 axis)."""
    _, d1, d2, r = _offsets(x, station)
    return np.stack([r, np.arctan2(d1, d2)], axis=-1)


def range_bearing_jacobian(x, station: SensorStation = SensorStation()) -> np.ndarray:
    x, d1, d2, r = _offsets(x, station)
    J = np.zeros(x.shape[:-1] + (2, x.shape[-1]))
    r2 = r * r
    J[..., 0, 0] = d1 / r
    J[..., 0, 1] = d2 / r
    J[..., 1, 0] = d2 / r2
    J[..., 1, 1] = -d1 / r2
    return J


def range_bearing_hessians(x, station: SensorStation = SensorStation()) -> np.ndarray:
    """Per-output Hessians stacked along axis -3: (distance, angle)."""
    x, d1, d2, r = _offsets(x, station)
    H = np.zeros(x.shape[:-1] + (2, x.shape[-1], x.shape[-1]))
    r3 = r**3
    r4 = r**4
    H[..., 0, 0, 0] = d2 * d2 / r3
    H[..., 0, 1, 1] = d1 * d1 / r3
    H[..., 0, 0, 1] = H[..., 0, 1, 0] = -d1 * d2 / r3
    H[..., 1, 0, 0] = -2.0 * d1 * d2 / r4
    H[..., 1, 1, 1] = 2.0 * d1 * d2 / r4
    H[..., 1, 0, 1] = H[..., 1, 1, 0] = (d1 * d1 - d2 * d2) / r4
    return H


class RangeBearingSensor(MeasurementModel):
    """Station reporting (distance, angle) to the robot's planar position."""

    angular = (1,)

    def __init__(self, R, station: SensorStation | None = None, dim_x: int = 4):
        self.station = SensorStation() if station is None else station
        self.dim_x = dim_x
        self.dim_y = 2
        self.R = _check_cov("R", R, 2)

    @classmethod
    def with_noise(cls, rho1: float, rho2: float | None = None, station=None) -> "RangeBearingSensor":
        rho2 = rho1 if rho2 is None else rho2
        return cls(np.diag([rho1**2, rho2**2]), station)

    def observe(self, x):
        return range_bearing_observe(x, self.station)

    def jacobian(self, x):
        return range_bearing_jacobian(x, self.station)

    def hessians(self, x):
        return range_bearing_hessians(x, self.station)

    def regular_point(self):
        x = np.zeros(self.dim_x)
        x[:2] = self.station.position + (1.0, 0.0)
        return x

    def singular_mask(self, x):
        _, _, _, r = _offsets(x, self.station, check=False)
        return r < SINGULARITY_RADIUS
