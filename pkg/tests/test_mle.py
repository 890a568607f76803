import dataclasses

import numpy as np
import pytest

from biaslab.core import coarsen, stacked_effect, window_measurement
from biaslab.errors import DimensionError, RankDeficiencyError
from biaslab.kalman import GaussianBelief, StepInput, filter_loglik
from biaslab.mle import (Coarsened, Continuous, DesignBuilder, Quadratic, embed_theta, fit_effect,
                         innovation_columns, loglik, loglik_quadratic, verify_concavity)
from biaslab.policy import PolicyParams, coarsen_dataset, simulate_trajectory, trajectory_timeline


@pytest.fixture(scope="module")
def trajs(fine):
    return [simulate_trajectory(fine, PolicyParams(beta1=-2.0), 300, seed=s) for s in range(12)]


@pytest.fixture(scope="module")
def cont(spring):
    return spring


def test_family_labels():
    assert Coarsened(1).label == "coarsened-01"
    assert Coarsened(25).label == "coarsened-25"
    assert Continuous().label == "continuous"


def test_embed_zero_and_unit(fine):
    assert not embed_theta([0.0, 0.0], Coarsened(4), fine).any()
    np.testing.assert_array_equal(embed_theta([0.3, -1.0], Coarsened(1), fine), [[0.3], [-1.0]])
    got = embed_theta([1.0, 0.0], Coarsened(2), fine)
    expect = np.zeros((4, 2))
    expect[:2, 0] = [1.0, 0.0]
    expect[2:, 0] = fine.A[:, 0]
    expect[2:, 1] = [1.0, 0.0]
    np.testing.assert_allclose(got, expect, rtol=0, atol=1e-15)


def test_embed_continuous(cont, fine):
    out = embed_theta([0.0, 0.5], Continuous(), cont, gaps=[0.1])
    np.testing.assert_allclose(out[0.1], fine.B, rtol=1e-13)


def test_embed_checks_dimension(fine):
    with pytest.raises(DimensionError):
        embed_theta([1.0, 2.0, 3.0], Coarsened(2), fine)


def test_embed_matches_stacked_effect(fine):
    theta = np.array([0.2, 0.7])
    np.testing.assert_array_equal(embed_theta(theta, Coarsened(5), fine),
                                  stacked_effect(fine.A, theta.reshape(-1, 1), 5))


def test_no_actions_is_rank_deficient(fine):
    t = simulate_trajectory(fine, PolicyParams(beta0=-800.0), 200, seed=0)
    assert not t.actions.any()
    with pytest.raises(RankDeficiencyError) as err:
        fit_effect([coarsen_dataset(t, 1)], Coarsened(1), fine)
    assert err.value.null_direction.shape == (2,)


def test_empty_dataset_list_rejected(fine):
    with pytest.raises(ValueError):
        fit_effect([], Coarsened(1), fine)


@pytest.mark.parametrize("m", [1, 5, 10])
def test_quadratic_is_exact(fine, trajs, m):
    data = [coarsen_dataset(t, m) for t in trajs[:4]]
    quad = loglik_quadratic(data, Coarsened(m), fine)
    rng = np.random.default_rng(m)
    for _ in range(4):
        th = rng.normal(0, 0.5, 2)
        direct = loglik(th, data, Coarsened(m), fine)
        assert abs(direct - quad(th)) <= 1e-8 * max(1.0, abs(direct))


def test_innovations_affine_in_effect(fine, trajs):
    builder = DesignBuilder(Coarsened(10), fine)
    design = builder.build(coarsen_dataset(trajs[0], 10))
    resid, var = innovation_columns(design)
    th = np.array([0.37, -1.4])
    r_th, v_th, _, _ = design.run(th.reshape(-1, 1))
    ok = ~np.isnan(var)
    pred = resid[ok, 0] + (resid[ok, 1:] - resid[ok, :1]) @ th
    np.testing.assert_allclose(r_th[ok, 0], pred, rtol=0, atol=1e-10)
    np.testing.assert_array_equal(v_th, var)


def test_design_loglik_matches_reference_filter(fine, trajs):
    # the bulk design path reproduces a step-by-step filter on the same windows
    m = 5
    ds = coarsen_dataset(trajs[1], m)
    th = np.array([0.1, 0.4])
    c = coarsen(fine, m)
    Bc = embed_theta(th, Coarsened(m), fine)
    inputs = []
    for val, idx, acts in ds.windows:
        if idx:
            wm = window_measurement(fine, m, idx)
            inputs.append(StepInput(acts, val, (wm.Hrow, wm.Rvar)))
        else:
            inputs.append(StepInput(acts))
    cov0 = np.zeros((2 * m, 2 * m))
    cov0[-2:, -2:] = np.eye(2)
    ref = filter_loglik(GaussianBelief(np.zeros(2 * m), cov0), [(c.Ac, Bc, c.Cc)] * len(inputs), inputs).loglik
    assert loglik(th, [ds], Coarsened(m), fine) == pytest.approx(ref, rel=1e-12, abs=1e-9)


def test_closed_form_is_the_maximiser(fine, trajs):
    data = [coarsen_dataset(t, 10) for t in trajs]
    fam = Coarsened(10)
    fit = fit_effect(data, fam, fine)

    def f(th):
        return loglik(th, data, fam, fine)

    # coordinate-wise grid refinement from a distant start, using only direct evaluations
    th = np.zeros(2)
    width = 2.0
    for _ in range(40):
        for j in range(2):
            grid = th[j] + np.linspace(-width, width, 9)
            vals = []
            for g in grid:
                probe = th.copy()
                probe[j] = g
                vals.append(f(probe))
            th[j] = grid[int(np.argmax(vals))]
        width *= 0.5
    assert np.abs(th - fit.theta_hat).max() <= 1e-6
    assert f(fit.theta_hat) >= f(th) - 1e-9
    for e in (np.array([1e-4, 0]), np.array([0, 1e-4]), np.array([-1e-4, 1e-4])):
        assert f(fit.theta_hat) > f(fit.theta_hat + e)


def test_fit_result_consistency(fine, trajs):
    data = [coarsen_dataset(t, 1) for t in trajs]
    fit = fit_effect(data, Coarsened(1), fine)
    assert fit.n_trajectories == len(trajs)
    assert fit.loglik_at_hat == pytest.approx(loglik(fit.theta_hat, data, Coarsened(1), fine), rel=1e-10)
    assert np.all(np.linalg.eigvalsh(fit.curvature) < 0)
    np.testing.assert_allclose(fit.stderr, np.sqrt(np.diag(np.linalg.inv(-fit.curvature))))


def test_continuous_agrees_with_unit_coarsening(fine, cont, trajs):
    a = fit_effect([coarsen_dataset(t, 1) for t in trajs], Coarsened(1), fine)
    b = fit_effect([trajectory_timeline(t) for t in trajs], Continuous(), cont)
    np.testing.assert_allclose(fine.A @ b.theta_hat, a.theta_hat, rtol=0, atol=1e-6)


def test_sign_equivariance(fine, trajs):
    # with a zero prior mean, flipping every measurement flips the estimate
    data = [coarsen_dataset(t, 10) for t in trajs[:6]]
    flipped = [dataclasses.replace(ds, y=-ds.y) for ds in data]
    a = fit_effect(data, Coarsened(10), fine).theta_hat
    b = fit_effect(flipped, Coarsened(10), fine).theta_hat
    np.testing.assert_allclose(b, -a, rtol=1e-9, atol=1e-12)


def test_pooling_adds_quadratics(fine, trajs):
    data = [coarsen_dataset(t, 20) for t in trajs[:4]]
    whole = loglik_quadratic(data, Coarsened(20), fine)
    parts = loglik_quadratic(data[:2], Coarsened(20), fine) + loglik_quadratic(data[2:], Coarsened(20), fine)
    np.testing.assert_allclose(whole.info, parts.info, rtol=1e-12)
    np.testing.assert_allclose(whole.lin, parts.lin, rtol=1e-12)
    assert whole.n_measured == parts.n_measured


def test_quadratic_zero():
    q = Quadratic.zero(3)
    assert q(np.ones(3)) == 0.0


def test_concavity_probe(fine, trajs):
    data = [coarsen_dataset(t, 25) for t in trajs[:5]]
    probes = verify_concavity(data, Coarsened(25), fine, [np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    for p in probes:
        assert p.concave
        assert p.scale_consistent(1e-8)
        assert p.second_differences[1.0] < 0


def test_concavity_with_no_measurements(fine):
    t = simulate_trajectory(fine, PolicyParams(p_missing=1.0), 100, seed=1)
    probes = verify_concavity([coarsen_dataset(t, 10)], Coarsened(10), fine, [np.array([1.0, 0.0])])
    assert probes[0].second_differences == {1.0: 0.0, 2.0: 0.0}
