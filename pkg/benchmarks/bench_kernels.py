"""Compare the compiled and pure-Python kernels on one sweep point's workload.

    python3 benchmarks/bench_kernels.py [--n-traj 50] [--repeat 3]
"""

import argparse
import time

import numpy as np

from biaslab import _backend
from biaslab.core import discretize, spring_model
from biaslab.harness import trajectory_seed
from biaslab.mle import Coarsened, Continuous, fit_effect
from biaslab.policy import PolicyParams, coarsen_dataset, simulate_trajectory, trajectory_timeline


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-traj", type=int, default=50)
    ap.add_argument("--n-k", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cm = spring_model()
    fine = discretize(cm, 0.1)
    params = PolicyParams(beta1=-2.0)
    seeds = [trajectory_seed(0, i) for i in range(args.n_traj)]
    results = {}
    for name in _backend.available():
        sim_t, trajs = best_of(lambda: [simulate_trajectory(fine, params, args.n_k, seed=s, backend=name)
                                        for s in seeds], args.repeat)
        row = {"simulate": sim_t}
        for m in (1, 10, 25):
            data = [coarsen_dataset(t, m) for t in trajs]
            row[f"fit m={m}"], fit = best_of(lambda: fit_effect(data, Coarsened(m), fine, backend=name), args.repeat)
            results.setdefault(f"fit m={m}", []).append(fit.theta_hat)
        tls = [trajectory_timeline(t) for t in trajs]
        row["fit continuous"], fit = best_of(lambda: fit_effect(tls, Continuous(), cm, backend=name), args.repeat)
        results[name] = row

    names = _backend.available()
    print(f"{args.n_traj} trajectories x {args.n_k} steps, best of {args.repeat}")
    print(f"{'task':<16}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for task in results[names[0]]:
        cells = [results[n][task] for n in names]
        line = f"{task:<16}" + "".join(f"{c:>11.3f}s" for c in cells)
        if len(names) > 1:
            line += f"{cells[1] / cells[0]:>11.1f}x"
        print(line)
    for key in (k for k in results if k.startswith("fit m=")):
        est = results[key]
        if len(est) > 1:
            print(f"{key}: max |cython - python| estimate difference {np.abs(est[0] - est[1]).max():.1e}")


if __name__ == "__main__":
    main()
