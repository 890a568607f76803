import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biaslab.core import (ContinuousModel, DiscreteModel, coarsen, discretize, matrix_exp,
                          model_from_json, model_to_json, noise_integral, window_measurement)
from biaslab.errors import DimensionError, DomainError
from biaslab.oracles import LinearGaussianUnroll, simpson_noise_integral, taylor_exp

from conftest import random_spd, random_stable

F_SPRING = np.array([[0.0, 1.0], [-1.0, -0.5]])
Q_SPRING = np.diag([1e-8, 1e-2])

# Taylor (40 terms) and 20000-panel Simpson references
A_REF = np.array([[0.9950863850030471, 0.09737867044696732],
                  [-0.09737867044696732, 0.9463970497795635]])
B_REF = np.array([0.04868933522348366, 0.47319852488978176])
C_REF = np.array([[3.205805949898153e-06, 4.741297827467854e-05],
                  [4.741297827467854e-05, 9.485001903103723e-04]])


def test_exp_zero_is_identity():
    assert np.array_equal(matrix_exp(np.zeros((3, 3))), np.eye(3))


def test_exp_diagonal():
    np.testing.assert_allclose(matrix_exp(np.diag([1.0, 2.0])), np.diag([math.e, math.e ** 2]), rtol=1e-14)


def test_exp_spring_matches_taylor():
    got = matrix_exp(F_SPRING * 0.1)
    assert np.abs(got - taylor_exp(F_SPRING * 0.1, 30)).max() <= 1e-10
    np.testing.assert_allclose(got, A_REF, rtol=0, atol=1e-15)


def test_exp_rejects_non_square():
    with pytest.raises(DimensionError):
        matrix_exp(np.zeros((2, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_exp_inverse_property(d, seed):
    M = random_stable(np.random.default_rng(seed), d)
    np.testing.assert_allclose(matrix_exp(M) @ matrix_exp(-M), np.eye(d), atol=1e-10)


def test_noise_integral_constant_integrand():
    np.testing.assert_allclose(noise_integral(np.zeros((2, 2)), np.eye(2), 2.0), 2.0 * np.eye(2), atol=1e-14)


def test_noise_integral_matches_simpson():
    got = noise_integral(F_SPRING, Q_SPRING, 0.1)
    assert np.abs(got - simpson_noise_integral(F_SPRING, Q_SPRING, 0.1, 10_000)).max() <= 1e-10
    np.testing.assert_allclose(got, C_REF, rtol=1e-12, atol=0)


def test_noise_integral_small_step_limit():
    step = 1e-6
    C = noise_integral(F_SPRING, np.eye(2), step)
    np.testing.assert_allclose(C / step, np.eye(2), rtol=1e-3, atol=1e-3)


def test_noise_integral_symmetric():
    C = noise_integral(F_SPRING, Q_SPRING, 0.37)
    assert np.array_equal(C, C.T)


def test_discretize_spring_effect(spring):
    dm = discretize(spring, 0.1)
    np.testing.assert_allclose(dm.B[:, 0], A_REF @ [0.0, 0.5], rtol=1e-14)
    np.testing.assert_allclose(dm.B[:, 0], B_REF, rtol=1e-13)
    assert dm.B[0, 0] > 0 and dm.B[1, 0] > 0


def test_discretize_zero_dynamics():
    cm = ContinuousModel(np.zeros((2, 2)), [[1.0], [2.0]], np.eye(2), [[1.0, 0.0]], [[1.0]])
    dm = discretize(cm, 0.3)
    assert np.array_equal(dm.A, np.eye(2))
    assert np.array_equal(dm.B, cm.G)


def test_discretize_copies_measurement_model(spring):
    dm = discretize(spring, 0.25)
    assert dm.H.tobytes() == spring.H.tobytes()
    assert dm.R.tobytes() == spring.R.tobytes()
    assert dm.step == 0.25


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 2.0), st.floats(0.01, 2.0))
def test_discretize_semigroup(d1, d2):
    cm = ContinuousModel(F_SPRING, [[0.0], [0.5]], Q_SPRING, [[1.0, 0.0]], [[1e-4]])
    a, b, ab = discretize(cm, d1), discretize(cm, d2), discretize(cm, d1 + d2)
    np.testing.assert_allclose(ab.A, a.A @ b.A, atol=1e-10)
    np.testing.assert_allclose(ab.C, b.A @ a.C @ b.A.T + b.C, atol=1e-10)


def test_coarsen_identity(fine):
    c = coarsen(fine, 1)
    assert c.Ac is fine.A and c.Bc is fine.B and c.Cc is fine.C
    assert c.window == fine.step


def test_coarsen_two_effect_blocks(fine):
    c = coarsen(fine, 2)
    B, A = fine.B, fine.A
    expected = np.block([[B, np.zeros_like(B)], [A @ B, B]])
    np.testing.assert_allclose(c.Bc, expected, rtol=1e-15)


def test_coarsen_transition_sparsity(fine):
    c = coarsen(fine, 4)
    assert np.all(c.Ac[:, :6] == 0.0)
    for i in range(4):
        np.testing.assert_allclose(c.Ac[2 * i:2 * i + 2, 6:], np.linalg.matrix_power(fine.A, i + 1), atol=1e-15)


def _coarse_vs_unroll(dm, m, x0, P0, u):
    c = coarsen(dm, m)
    d = dm.d
    un = LinearGaussianUnroll(dm.A, dm.B, dm.C, x0, P0, [[a] for a in u])
    mu, S = un.moments(range(m))
    prev_mean = np.zeros(m * d)
    prev_mean[-d:] = x0
    prev_cov = np.zeros((m * d, m * d))
    prev_cov[-d:, -d:] = P0
    mc = c.Ac @ prev_mean + c.Bc @ np.asarray(u, dtype=float)
    Sc = c.Ac @ prev_cov @ c.Ac.T + c.Cc
    return np.abs(mc - mu).max(), np.abs(Sc - S).max()


def test_coarsen_three_matches_unrolling(fine):
    rng = np.random.default_rng(3)
    errs = _coarse_vs_unroll(fine, 3, rng.standard_normal(2), np.eye(2), [1, 0, 1])
    assert max(errs) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([2, 3, 5]), st.integers(0, 2**32 - 1))
def test_coarsen_exact_for_random_models(m, seed):
    rng = np.random.default_rng(seed)
    d, q = 2, 1
    dm = DiscreteModel(random_stable(rng, d), rng.standard_normal((d, q)), random_spd(rng, d, 0.1),
                       [[1.0, 0.0]], [[0.01]])
    u = rng.integers(0, 2, m)
    assert max(_coarse_vs_unroll(dm, m, rng.standard_normal(d), random_spd(rng, d), u)) <= 1e-9


def test_coarsen_of_discretized_is_stacked_fine_law(spring):
    # coarsening the step-δ model reproduces the law of the δ-grid states directly
    dm = discretize(spring, 0.1)
    c = coarsen(dm, 5)
    for i in range(5):
        Ai = discretize(spring, 0.1 * (i + 1))
        np.testing.assert_allclose(c.Ac[2 * i:2 * i + 2, -2:], Ai.A, atol=1e-12)
        np.testing.assert_allclose(c.Cc[2 * i:2 * i + 2, 2 * i:2 * i + 2], Ai.C, atol=1e-12)


def test_coarsen_covariance_psd(fine):
    c = coarsen(fine, 25)
    assert np.array_equal(c.Cc, c.Cc.T)
    assert np.linalg.eigvalsh(c.Cc).min() >= -1e-12


def test_coarsen_rejects_bad_factor(fine):
    with pytest.raises(DomainError):
        coarsen(fine, 0)


def test_window_measurement_full_average(fine):
    wm = window_measurement(fine, 2, {1, 2})
    np.testing.assert_array_equal(wm.Hrow, [0.5, 0.0, 0.5, 0.0])
    assert wm.Rvar == pytest.approx(0.5e-4, rel=1e-15)


def test_window_measurement_single(fine):
    wm = window_measurement(fine, 4, {3})
    expected = np.zeros(8)
    expected[4:6] = fine.H[0]
    np.testing.assert_array_equal(wm.Hrow, expected)
    assert wm.Rvar == float(fine.R[0, 0])


def test_window_measurement_variance_of_mean(fine):
    wm = window_measurement(fine, 4, {1, 2, 3, 4})
    assert wm.Rvar == pytest.approx(2.5e-5, rel=1e-14)
    # Monte Carlo check of the variance of a mean of four N(0, 1e-4) draws
    rng = np.random.default_rng(0)
    draws = rng.normal(0.0, 1e-2, size=(200_000, 4)).mean(axis=1)
    se = draws.var() * math.sqrt(2.0 / draws.size)
    assert abs(draws.var() - 2.5e-5) < 4 * se


def test_window_measurement_all_observed_equals_uniform_average(fine):
    m = 5
    wm = window_measurement(fine, m, range(1, m + 1))
    Hprime = np.kron(np.eye(m), fine.H)
    np.testing.assert_allclose(wm.Hrow, (np.full(m, 1.0 / m) @ Hprime), rtol=1e-15)


def test_window_measurement_empty(fine):
    wm = window_measurement(fine, 3, [])
    assert not wm.measured
    assert np.all(wm.Hrow == 0)


def test_window_measurement_out_of_range(fine):
    with pytest.raises(DomainError):
        window_measurement(fine, 3, {0})
    with pytest.raises(DomainError):
        window_measurement(fine, 3, {4})


def test_model_validation():
    with pytest.raises(DomainError):
        ContinuousModel(F_SPRING, [[0.0], [1.0]], [[1.0, 0.5], [0.0, 1.0]], [[1.0, 0.0]], [[1.0]])
    with pytest.raises(DomainError):
        ContinuousModel(F_SPRING, [[0.0], [1.0]], np.eye(2), [[1.0, 0.0]], [[0.0]])
    with pytest.raises(DimensionError):
        ContinuousModel(F_SPRING, [[0.0], [1.0], [2.0]], np.eye(2), [[1.0, 0.0]], [[1.0]])
    with pytest.raises(DomainError):
        DiscreteModel(np.eye(2), [[0.0], [1.0]], np.eye(2), [[1.0, 0.0]], [[1.0]], step=0.0)


def test_json_round_trip(spring, fine):
    cm2 = model_from_json(model_to_json(spring))
    assert np.array_equal(cm2.F, spring.F) and np.array_equal(cm2.Q, spring.Q)
    dm2 = model_from_json(model_to_json(fine))
    assert np.array_equal(dm2.C, fine.C) and dm2.step == fine.step
    c = coarsen(fine, 3)
    doc = json.loads(model_to_json(c))
    assert doc["factor"] == 3 and doc["step"] == 0.1
    for key in ("H", "R", "step", "factor"):
        assert key in doc
    c2 = model_from_json(doc)
    assert np.array_equal(c2.Cc, c.Cc)


def test_spring_json_names(spring):
    doc = json.loads(model_to_json(spring))
    for key in ("F", "G", "Q", "H", "R"):
        assert key in doc
    assert doc["F"] == [[0.0, 1.0], [-1.0, -0.5]]
