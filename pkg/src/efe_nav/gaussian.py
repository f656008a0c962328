"""Dense Gaussian primitives: entropy, KL divergence, conditioning and PSD helpers.

Covariances are small (a handful of dimensions) so everything here works on
plain numpy arrays. The joint over state and observation is parameterised by
the predicted observation mean ``mu``, its covariance ``sigma`` and the
state/observation cross-covariance ``gamma`` with shape ``(D_x, D_y)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

LOG_2PI_E = math.log(2.0 * math.pi * math.e)

_SYM_RTOL = 1e-12
_SYM_REPAIR_RTOL = 1e-8
_PSD_RTOL = 1e-10
_JITTER_SCALE = 1e-12
_JITTER_RETRIES = 3


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix that must be invertible is (numerically) singular."""


class NotPSDError(ValueError):
    """A matrix that must be symmetric positive (semi)definite is not."""


def symmetrize(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def _scale(S: np.ndarray) -> float:
    return max(float(np.max(np.abs(S))) if S.size else 0.0, 1e-300)


def is_symmetric(S: np.ndarray, rtol: float = _SYM_RTOL) -> bool:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        return False
    return bool(np.max(np.abs(S - S.T), initial=0.0) <= rtol * _scale(S))


def is_psd(S: np.ndarray, rtol: float = _PSD_RTOL) -> bool:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        return False
    if not np.all(np.isfinite(S)):
        return False
    eigs = np.linalg.eigvalsh(symmetrize(S))
    return bool(eigs.min(initial=0.0) >= -rtol * _scale(S))


def cholesky_psd(S: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with symmetrisation and escalating diagonal jitter.

    Jitter starts at ``1e-12 * trace(S) / D`` and grows tenfold per retry.
    """
    S = symmetrize(S)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NotPSDError("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    d = S.shape[0]
    jitter = _JITTER_SCALE * abs(float(np.trace(S))) / d
    if jitter == 0.0:
        raise NotPSDError("matrix is zero; cannot factor")
    for _ in range(_JITTER_RETRIES):
        try:
            return np.linalg.cholesky(S + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NotPSDError("matrix is not positive definite")


_EXT = np.longdouble
_EXT_MAX_DIM = 8


def _cholesky_ext(S: np.ndarray) -> np.ndarray | None:
    """Unjittered Cholesky factor in extended precision, or None on failure.

    The joints handled here pair O(1) blocks with sensor noise many orders of
    magnitude smaller, so the extra mantissa bits of ``longdouble`` (where the
    platform has them) keep the cancellation in Schur complements and joint
    determinants from eating the answer.
    """
    n = S.shape[0]
    if n > _EXT_MAX_DIM:
        return None
    A = np.asarray(S, dtype=_EXT)
    A = (A + A.T) / 2
    L = np.zeros((n, n), dtype=_EXT)
    for j in range(n):
        d = A[j, j] - np.dot(L[j, :j], L[j, :j])
        if not d > 0:
            return None
        L[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (A[i, j] - np.dot(L[i, :j], L[j, :j])) / L[j, j]
    return L


def _cho_solve_ext(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = L.shape[0]
    X = np.asarray(B, dtype=_EXT).reshape(n, -1).copy()
    for i in range(n):
        X[i] = (X[i] - L[i, :i] @ X[:i]) / L[i, i]
    for i in reversed(range(n)):
        X[i] = (X[i] - L[i + 1:, i] @ X[i + 1:]) / L[i, i]
    return X


def logdet_psd(S: np.ndarray) -> float:
    """Natural log-determinant of a symmetric positive definite matrix."""
    S = np.asarray(S, dtype=float)
    if S.ndim == 2 and S.shape[0] == S.shape[1] and np.all(np.isfinite(S)):
        Le = _cholesky_ext(S)
        if Le is not None:
            return float(2 * np.sum(np.log(np.diag(Le))))
    L = cholesky_psd(S)
    diag = np.diag(L)
    if np.any(diag <= 0.0):
        raise NotPSDError("non-positive pivot in Cholesky factor")
    return 2.0 * float(np.sum(np.log(diag)))


def solve_psd(S: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``S X = B`` for symmetric positive definite ``S``."""
    try:
        L = cholesky_psd(S)
    except NotPSDError as exc:
        raise SingularMatrixError(str(exc)) from exc
    return linalg.cho_solve((L, True), np.asarray(B, dtype=float))


def symmetric_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric square root ``M`` with ``M @ M == S`` via eigendecomposition.

    A triangular factor would not do: the unscented cross-covariance relies on
    ``M.T @ inv(S) @ M == I``, which only the symmetric root satisfies.
    """
    S = np.asarray(S, dtype=float)
    if not is_symmetric(S, _SYM_REPAIR_RTOL):
        raise NotPSDError("symmetric_sqrt requires a symmetric matrix")
    w, V = np.linalg.eigh(symmetrize(S))
    if w.min(initial=0.0) < -_PSD_RTOL * _scale(S):
        raise NotPSDError(f"matrix is indefinite (min eigenvalue {w.min():.3e})")
    M = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return symmetrize(M)


def batched_symmetric_sqrt(S: np.ndarray) -> np.ndarray:
    """Stack version of :func:`symmetric_sqrt` without validation."""
    w, V = np.linalg.eigh(symmetrize(S))
    M = (V * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.swapaxes(V, -1, -2)
    return symmetrize(M)


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if mean.ndim != 1:
            raise ValueError(f"mean must be a vector, got shape {mean.shape}")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"cov shape {cov.shape} does not match mean of length {mean.size}")
        if not is_symmetric(cov, _SYM_REPAIR_RTOL):
            raise NotPSDError("covariance is not symmetric")
        cov = symmetrize(cov)
        if not is_psd(cov):
            raise NotPSDError("covariance is not positive semidefinite")
        mean.flags.writeable = False
        cov.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        L = cholesky_psd(self.cov)
        diff = (x - self.mean).reshape(-1, self.dim)
        z = linalg.solve_triangular(L, diff.T, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        out = -0.5 * (np.sum(z**2, axis=0) + logdet + self.dim * math.log(2 * math.pi))
        return out if x.ndim > 1 else out[0]


@dataclass(frozen=True)
class JointApprox:
    """Gaussian joint over a state and its observation.

    ``state`` is the belief ``N(m, S)`` the approximation was built from,
    ``mu``/``sigma`` the observation marginal and ``gamma`` = Cov(x, y).
    ``angular`` lists observation components that live on the circle.
    """

    mu: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    state: Gaussian
    angular: tuple[int, ...] = field(default=())

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = symmetrize(np.atleast_2d(np.asarray(self.sigma, dtype=float)))
        gamma = np.asarray(self.gamma, dtype=float).reshape(self.state.dim, mu.size)
        if sigma.shape != (mu.size, mu.size):
            raise ValueError(f"sigma shape {sigma.shape} does not match mu of length {mu.size}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "angular", tuple(int(i) for i in self.angular))

    @property
    def dim_x(self) -> int:
        return self.state.dim

    @property
    def dim_y(self) -> int:
        return self.mu.size

    def observation_marginal(self) -> Gaussian:
        return Gaussian(self.mu, self.sigma)

    def joint_cov(self) -> np.ndarray:
        return np.block([[self.state.cov, self.gamma], [self.gamma.T, self.sigma]])

    def joint(self) -> Gaussian:
        return Gaussian(np.concatenate([self.state.mean, self.mu]), self.joint_cov())

    def schur(self) -> np.ndarray:
        """``sigma - gamma.T @ inv(S) @ gamma``: covariance of y given x."""
        L = _cholesky_ext(self.state.cov)
        if L is not None:
            G = self.gamma.astype(_EXT)
            C = self.sigma.astype(_EXT) - G.T @ _cho_solve_ext(L, G)
            return symmetrize(((C + C.T) / 2).astype(float))
        return symmetrize(self.sigma - self.gamma.T @ solve_psd(self.state.cov, self.gamma))


def gaussian_entropy(g: Gaussian) -> float:
    """Differential entropy in nats."""
    try:
        logdet = logdet_psd(g.cov)
    except NotPSDError as exc:
        raise SingularMatrixError(str(exc)) from exc
    return 0.5 * g.dim * LOG_2PI_E + 0.5 * logdet


def kl_gaussian(p: Gaussian, q: Gaussian) -> float:
    """KL(p || q) in nats."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    try:
        logdet_q = logdet_psd(q.cov)
    except NotPSDError as exc:
        raise SingularMatrixError(f"q covariance: {exc}") from exc
    try:
        logdet_p = logdet_psd(p.cov)
    except NotPSDError as exc:
        raise SingularMatrixError(f"p covariance: {exc}") from exc
    diff = q.mean - p.mean
    psi = np.outer(diff, diff)
    trace = float(np.trace(solve_psd(q.cov, p.cov + psi)))
    return 0.5 * (logdet_q - logdet_p - p.dim + trace)


def condition_obs_given_state(j: JointApprox, x: np.ndarray) -> Gaussian:
    """``p(y | x)`` implied by the joint: linear in x with fixed covariance."""
    x = np.asarray(x, dtype=float)
    if x.shape != (j.dim_x,):
        raise ValueError(f"state must have shape ({j.dim_x},), got {x.shape}")
    gain = solve_psd(j.state.cov, j.gamma)  # S^-1 Gamma, (D_x, D_y)
    mean = j.mu + gain.T @ (x - j.state.mean)
    return Gaussian(mean, j.schur())
