"""Self-check suite behind ``biaslab verify``: fast paths against brute-force oracles."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import oracles
from .core import coarsen, discretize, matrix_exp, noise_integral, spring_model, window_measurement
from .kalman import GaussianBelief, StepInput, continuous_filter_loglik, filter_loglik
from .mle import Coarsened, Continuous, fit_effect, verify_concavity
from .policy import PolicyParams, coarsen_dataset, simulate_trajectory, trajectory_timeline


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float


def _spring(delta=0.1):
    cm = spring_model()
    return cm, discretize(cm, delta)


def check_matrix_exp():
    cm, _ = _spring()
    err = np.abs(matrix_exp(cm.F * 0.1) - oracles.taylor_exp(cm.F * 0.1, 30)).max()
    return err <= 1e-10, f"max |expm - taylor30| = {err:.2e}"


def check_noise_integral():
    cm, _ = _spring()
    err = np.abs(noise_integral(cm.F, cm.Q, 0.1) - oracles.simpson_noise_integral(cm.F, cm.Q, 0.1)).max()
    return err <= 1e-10, f"max |vanloan - simpson| = {err:.2e}"


def check_coarsening():
    _, fine = _spring()
    rng = np.random.default_rng(7)
    worst = 0.0
    for m in (2, 3, 5, 10):
        cmod = coarsen(fine, m)
        x0 = rng.standard_normal(2)
        P0 = np.eye(2) * 0.3
        u = rng.integers(0, 2, m)
        un = oracles.LinearGaussianUnroll(fine.A, fine.B, fine.C, x0, P0, [[a] for a in u])
        mu, S = un.moments(range(m))
        prev_mean = np.zeros(2 * m)
        prev_mean[-2:] = x0
        prev_cov = np.zeros((2 * m, 2 * m))
        prev_cov[-2:, -2:] = P0
        mc = cmod.Ac @ prev_mean + cmod.Bc @ u
        Sc = cmod.Ac @ prev_cov @ cmod.Ac.T + cmod.Cc
        worst = max(worst, np.abs(mc - mu).max(), np.abs(Sc - S).max())
    return worst <= 1e-9, f"max stacked-moment error over m in (2,3,5,10) = {worst:.2e}"


def check_filter():
    _, fine = _spring()
    prior = GaussianBelief.standard(2)
    h, r = fine.H[0], float(fine.R[0, 0])
    worst = 0.0
    for seed, pattern in enumerate(([1, 1, 1, 1, 1], [1, 0, 1, 0, 1], [0, 0, 1, 1, 0])):
        traj = simulate_trajectory(fine, PolicyParams(beta0=0.0, p_missing=0.0), 5, seed=seed)
        u, y = traj.actions, traj.measurements
        inputs = [StepInput([u[t]], y[t], (h, r)) if pattern[t] else StepInput([u[t]]) for t in range(5)]
        got = filter_loglik(prior, [(fine.A, fine.B, fine.C)] * 5, inputs).loglik
        ref = oracles.joint_measurement_loglik(
            [fine.A] * 5, [fine.C] * 5, [fine.B @ [a] for a in u], [h] * 5, [r] * 5,
            y, pattern, prior.mean, prior.cov)
        worst = max(worst, abs(got - ref))
    return worst <= 1e-9, f"max |filter - joint gaussian| = {worst:.2e}"


def check_window_pipeline():
    _, fine = _spring()
    traj = simulate_trajectory(fine, PolicyParams(beta1=-1.0, p_missing=0.5), 8, seed=3)
    ds = coarsen_dataset(traj, 4)
    cmod = coarsen(fine, 4)
    cov0 = np.zeros((8, 8))
    cov0[-2:, -2:] = np.eye(2)
    prior = GaussianBelief(np.zeros(8), cov0)
    inputs = []
    for val, idx, acts in ds.windows:
        if idx:
            wm = window_measurement(fine, 4, idx)
            inputs.append(StepInput(acts, val, (wm.Hrow, wm.Rvar)))
        else:
            inputs.append(StepInput(acts))
    got = filter_loglik(prior, [(cmod.Ac, cmod.Bc, cmod.Cc)] * len(inputs), inputs).loglik
    ref = oracles.fine_window_average_loglik(fine.A, fine.B, fine.C, fine.H, fine.R, np.zeros(2), np.eye(2),
                                             traj.actions, traj.observed, ds.y, 4)
    err = abs(got - ref)
    return err <= 1e-8, f"|coarse filter - fine-grid oracle| = {err:.2e}"


def check_continuous_identity():
    cm, fine = _spring()
    trajs = [simulate_trajectory(fine, PolicyParams(beta1=-2.0), 200, seed=s) for s in range(20)]
    a = fit_effect([coarsen_dataset(t, 1) for t in trajs], Coarsened(1), fine)
    b = fit_effect([trajectory_timeline(t) for t in trajs], Continuous(), cm)
    err = np.abs(a.theta_hat - fine.A @ b.theta_hat).max()
    tl = trajectory_timeline(trajs[0])
    l1 = continuous_filter_loglik(cm, fine.B, tl.step_inputs(fine.H[0], float(fine.R[0, 0])), 0.1).loglik
    ds = coarsen_dataset(trajs[0], 1)
    inputs = [StepInput(a_, v, (fine.H[0], float(fine.R[0, 0]))) if idx else StepInput(a_)
              for v, idx, a_ in ds.windows]
    l2 = filter_loglik(GaussianBelief.standard(2), [(fine.A, fine.B, fine.C)] * len(inputs), inputs).loglik
    ok = err <= 1e-6 and abs(l1 - l2) <= 1e-9
    return ok, f"|B_cont - B_m1| = {err:.2e}, |loglik diff| = {abs(l1 - l2):.2e}"


def check_concavity():
    _, fine = _spring()
    trajs = [simulate_trajectory(fine, PolicyParams(beta1=-1.0), 200, seed=s) for s in range(5)]
    data = [coarsen_dataset(t, 10) for t in trajs]
    probes = verify_concavity(data, Coarsened(10), fine, [np.array([1.0, 0.0]), np.array([0.3, -1.0])])
    ok = all(p.concave and p.scale_consistent(1e-8) for p in probes)
    worst = max(v for p in probes for v in p.second_differences.values())
    return ok, f"max second difference {worst:.3e}; scale-consistent: {ok}"


CHECKS: list[tuple[str, Callable]] = [
    ("matrix exponential vs 30-term Taylor", check_matrix_exp),
    ("noise integral vs Simpson quadrature", check_noise_integral),
    ("coarsened model vs fine unrolling", check_coarsening),
    ("filter loglik vs joint Gaussian", check_filter),
    ("window averages vs fine-grid oracle", check_window_pipeline),
    ("continuous filter == m=1 filter", check_continuous_identity),
    ("loglik concave quadratic in effect", check_concavity),
]


def run_checks() -> list[Check]:
    results = []
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(Check(name, bool(ok), detail, time.perf_counter() - t0))
    return results
