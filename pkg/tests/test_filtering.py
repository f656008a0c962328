import math

import numpy as np
import pytest

from efe_nav.filtering import FilterState, filter_step, predict, update
from efe_nav.gaussian import Gaussian, JointApprox
from efe_nav.models import LinearDynamics, LinearSensor, RangeBearingSensor, build_double_integrator
from efe_nav.sim import step_env
from efe_nav.transforms import TAYLOR1, TAYLOR2, UnscentedParams, transform

ALL_KINDS = [TAYLOR1, TAYLOR2, UnscentedParams()]
DYN = build_double_integrator(0.5, 0.1)
RB = RangeBearingSensor.with_noise(1e-3)


def kalman_step(A, B, Q, H, R, c, m, S, u, y):
    """Textbook predict/update, written independently of the package."""
    m = A @ m + B @ u
    S = A @ S @ A.T + Q
    K = S @ H.T @ np.linalg.inv(H @ S @ H.T + R)
    m = m + K @ (y - (H @ m + c))
    S = (np.eye(len(m)) - K @ H) @ S
    return m, 0.5 * (S + S.T)


# --- predict -----------------------------------------------------------------

def test_predict_identity_dynamics():
    dyn = LinearDynamics(np.eye(4), np.zeros((4, 2)), np.zeros((4, 4)))
    b = Gaussian([1.0, 2.0, 3.0, 4.0], np.diag([1.0, 2.0, 3.0, 4.0]))
    p = predict(dyn, b, [0.3, -0.2])
    np.testing.assert_array_equal(p.mean, b.mean)
    np.testing.assert_array_equal(p.cov, b.cov)


def test_predict_example():
    p = predict(DYN, Gaussian([0.0, -1.0, 0.0, 0.0], 0.5 * np.eye(4)), [0.0, 1.0])
    np.testing.assert_allclose(p.mean, [0.0, -1.0, 0.0, 0.5])


def test_predict_covariance_grows():
    b = Gaussian(np.zeros(4), 0.3 * np.eye(4))
    p = predict(DYN, b, [0.0, 0.0])
    assert np.trace(p.cov) > np.trace(DYN.A @ b.cov @ DYN.A.T)
    no_noise = LinearDynamics(DYN.A, DYN.B, np.zeros((4, 4)))
    assert np.trace(predict(no_noise, b, [0.0, 0.0]).cov) == pytest.approx(np.trace(DYN.A @ b.cov @ DYN.A.T))


def test_predict_shape_errors():
    b = Gaussian(np.zeros(4), np.eye(4))
    with pytest.raises(ValueError):
        predict(DYN, b, [1.0])
    with pytest.raises(ValueError):
        predict(DYN, Gaussian(np.zeros(2), np.eye(2)), [0.0, 0.0])


# --- update ------------------------------------------------------------------

def test_update_uninformative_observation():
    b = Gaussian([1.0, 2.0], [[1.0, 0.2], [0.2, 2.0]])
    j = JointApprox([0.0], [[1.0]], np.zeros((2, 1)), b)
    post = update(j, [5.0])
    np.testing.assert_array_equal(post.mean, b.mean)
    np.testing.assert_array_equal(post.cov, b.cov)


def test_update_exact_measurement_limit():
    b = Gaussian([0.0, 0.0], np.eye(2))
    j = transform(TAYLOR1, LinearSensor(np.eye(2), 1e-12 * np.eye(2)), b)
    post = update(j, [0.7, -1.3])
    np.testing.assert_allclose(post.mean, [0.7, -1.3], atol=1e-5)


def test_update_matches_kalman():
    rng = np.random.default_rng(0)
    H = rng.standard_normal((2, 4))
    R = np.diag([0.1, 0.2])
    model = LinearSensor(H, R)
    A = rng.standard_normal((4, 4))
    b = Gaussian(rng.standard_normal(4), A @ A.T + np.eye(4))
    y = rng.standard_normal(2)
    post = update(transform(TAYLOR1, model, b), y)
    K = b.cov @ H.T @ np.linalg.inv(H @ b.cov @ H.T + R)
    np.testing.assert_allclose(post.mean, b.mean + K @ (y - H @ b.mean), atol=1e-10)
    np.testing.assert_allclose(post.cov, (np.eye(4) - K @ H) @ b.cov, atol=1e-10)


def test_update_wraps_bearing_innovation():
    b = Gaussian([0.3, -1.0, 0.0, 0.0], 0.2 * np.eye(4))
    j = transform(TAYLOR1, RB, b)
    y = RB.observe(np.array([0.25, -1.05, 0.0, 0.0]))
    p1 = update(j, y)
    p2 = update(j, y + [0.0, 2 * math.pi])
    np.testing.assert_allclose(p2.mean, p1.mean, atol=1e-9)
    np.testing.assert_allclose(p2.cov, p1.cov, atol=1e-9)


def test_update_rejects_bad_observation_shape():
    j = transform(TAYLOR1, RB, Gaussian([1.0, 1.0, 0, 0], np.eye(4)))
    with pytest.raises(ValueError):
        update(j, [1.0])


# --- filter_step -------------------------------------------------------------

def test_linear_filters_match_kalman_over_50_steps():
    rng = np.random.default_rng(1)
    H = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])
    R = 0.01 * np.eye(2)
    c = np.array([0.1, -0.2])
    model = LinearSensor(H, R, c)
    x = np.array([0.0, -1.0, 0.0, 0.0])
    m_ref, S_ref = x.copy(), 0.5 * np.eye(4)
    states = {k.name: FilterState(Gaussian(x, 0.5 * np.eye(4))) for k in ALL_KINDS}
    for _ in range(50):
        u = rng.uniform(-1, 1, 2)
        x = DYN.A @ x + DYN.B @ u + rng.multivariate_normal(np.zeros(4), DYN.Q)
        y = H @ x + c + rng.multivariate_normal(np.zeros(2), R)
        m_ref, S_ref = kalman_step(DYN.A, DYN.B, DYN.Q, H, R, c, m_ref, S_ref, u, y)
        for kind in ALL_KINDS:
            s = filter_step(kind, DYN, model, states[kind.name], u, y)
            states[kind.name] = s
            np.testing.assert_allclose(s.belief.mean, m_ref, atol=1e-9)
            np.testing.assert_allclose(s.belief.cov, S_ref, atol=1e-9)
    assert all(s.step == 50 for s in states.values())


def test_repeated_observations_shrink_covariance():
    static = LinearDynamics(np.eye(4), np.zeros((4, 2)), np.zeros((4, 4)))
    s = FilterState(Gaussian([1.0, 1.0, 0.0, 0.0], np.eye(4)))
    y = RB.observe(np.array([1.0, 1.0, 0, 0]))
    traces = [np.trace(s.belief.cov)]
    for _ in range(5):
        s = filter_step(TAYLOR1, static, RB, s, [0.0, 0.0], y)
        traces.append(np.trace(s.belief.cov))
    assert all(b < a for a, b in zip(traces, traces[1:]))


@pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.name)
def test_posterior_covariance_psd_along_trajectory(kind):
    s = FilterState(Gaussian([0.0, -1.0, 0.0, 0.0], 0.5 * np.eye(4)))
    x = np.array([0.0, -1.0, 0.0, 0.0])
    for k in range(1, 31):
        u = np.array([0.6, 0.3]) if k < 10 else np.array([-0.4, 0.2])
        x, y = step_env(DYN, RB, x, u, 3, k)
        s = filter_step(kind, DYN, RB, s, u, y)
        assert np.linalg.eigvalsh(s.belief.cov).min() > 0


def test_golden_trace_one_step():
    x0 = np.array([0.0, -1.0, 0.0, 0.0])
    u = np.array([0.0, 1.0])
    x, y = step_env(DYN, RB, x0, u, seed=42, step=1)
    s = filter_step(TAYLOR1, DYN, RB, FilterState(Gaussian(x0, 0.5 * np.eye(4))), u, y)
    np.testing.assert_allclose(x, [0.00137870065288044, -0.9817535699986092, -0.00955639382559524,
                                   0.5296583550493806], rtol=1e-12)
    np.testing.assert_allclose(y, [0.9808983038885318, 3.14087291315753], rtol=1e-12)
    np.testing.assert_allclose(s.belief.mean, [7.1973928144755401e-04, -9.8089833443083518e-01,
                                               2.8914242952223526e-04, 5.0767375372298895e-01], rtol=1e-9)
    np.testing.assert_allclose(np.diag(s.belief.cov), [9.9999840108555560e-07, 9.9999840108555560e-07,
                                                       4.0406495152839195e-01, 4.0406495152839195e-01],
                               rtol=1e-9)


def test_filter_state_rejects_negative_step():
    with pytest.raises(ValueError):
        FilterState(Gaussian(np.zeros(4), np.eye(4)), -1)
