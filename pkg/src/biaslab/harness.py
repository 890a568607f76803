"""Experiment sweep: simulate confounded trajectories, fit every family, write CSV.

Per-trajectory seeds are the outputs of a SplitMix64 stream started at the
master seed: trajectory i (0-based) uses ``splitmix64(master + (i + 1) * GOLDEN)``
as the seed of a numpy PCG64 generator. The same seeds are reused at every
β₁ grid point, so sweep points differ only in the policy.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ContinuousModel, discretize, spring_model
from .kalman import GaussianBelief
from .mle import Coarsened, Continuous, fit_effect
from .policy import PolicyParams, coarsen_dataset, simulate_trajectory, trajectory_timeline

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
CSV_HEADER = ["beta1", "model", "param", "estimate", "stderr", "seed"]
# stronger confounding than the default grid; appended by ``biaslab run --extend-beta1``
BETA1_EXTENSION = [-16.0, -32.0, -64.0, -128.0]


class ConfigError(ValueError):
    pass


def splitmix64(x: int) -> int:
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trajectory_seed(master: int, index: int) -> int:
    return splitmix64((master + (index + 1) * GOLDEN) & MASK64)


@dataclass
class ExperimentConfig:
    nu: float = 1.0
    gamma: float = 0.5
    g: float = 0.5
    q11: float = 1e-8
    q22: float = 1e-2
    r: float = 1e-4
    delta: float = 0.1
    n_k: int = 500
    n_traj: int = 500
    factors: list[int] = field(default_factory=lambda: [1, 10, 20, 25])
    beta1_grid: list[float] = field(default_factory=lambda: [0.0, -0.5, -1.0, -2.0, -4.0, -8.0])
    beta0: float = -2.0
    alpha: float = 0.9
    p_missing: float = 0.8
    master_seed: int = 0

    def validate(self) -> "ExperimentConfig":
        problems = []
        if not self.delta > 0:
            problems.append("delta: must be positive")
        if self.n_k < 1:
            problems.append("n_k: must be >= 1")
        if self.n_traj < 1:
            problems.append("nTraj: must be >= 1")
        if not self.factors or any(int(m) != m or m < 1 for m in self.factors):
            problems.append("factors: must be a non-empty list of integers >= 1")
        elif 1 not in self.factors:
            problems.append("factors: must include 1")
        elif any(self.n_k % m for m in self.factors):
            bad = [m for m in self.factors if self.n_k % m]
            problems.append(f"n_k: {self.n_k} is not divisible by factors {bad}")
        if not self.beta1_grid:
            problems.append("beta1Grid: must be non-empty")
        elif 0.0 not in [float(b) for b in self.beta1_grid]:
            problems.append("beta1Grid: must include 0")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append("policy.alpha: must lie in [0, 1]")
        if not 0.0 <= self.p_missing <= 1.0:
            problems.append("policy.p_missing: must lie in [0, 1]")
        if self.q11 < 0 or self.q22 < 0:
            problems.append("noise: q11 and q22 must be >= 0")
        if not self.r > 0:
            problems.append("noise.r: must be positive")
        if not 0 <= self.master_seed <= MASK64:
            problems.append("masterSeed: must be an unsigned 64-bit integer")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    # nested groups as in the README config example
    def to_json(self) -> dict:
        return {
            "spring": {"nu": self.nu, "gamma": self.gamma, "g": self.g},
            "noise": {"q11": self.q11, "q22": self.q22, "r": self.r},
            "delta": self.delta,
            "n_k": self.n_k,
            "nTraj": self.n_traj,
            "factors": list(self.factors),
            "beta1Grid": list(self.beta1_grid),
            "policy": {"beta0": self.beta0, "alpha": self.alpha, "p_missing": self.p_missing},
            "masterSeed": self.master_seed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        known = {"spring", "noise", "delta", "n_k", "nTraj", "factors", "beta1Grid", "policy", "masterSeed"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        cfg = cls()
        groups = {"spring": ("nu", "gamma", "g"), "noise": ("q11", "q22", "r"),
                  "policy": ("beta0", "alpha", "p_missing")}
        for group, names in groups.items():
            sub = doc.get(group, {})
            extra = set(sub) - set(names)
            if extra:
                raise ConfigError(f"unknown {group} fields: {sorted(extra)}")
            for name in names:
                if name in sub:
                    setattr(cfg, name, float(sub[name]))
        try:
            if "delta" in doc:
                cfg.delta = float(doc["delta"])
            if "n_k" in doc:
                cfg.n_k = int(doc["n_k"])
            if "nTraj" in doc:
                cfg.n_traj = int(doc["nTraj"])
            if "factors" in doc:
                cfg.factors = [int(m) for m in doc["factors"]]
            if "beta1Grid" in doc:
                cfg.beta1_grid = [float(b) for b in doc["beta1Grid"]]
            if "masterSeed" in doc:
                cfg.master_seed = int(doc["masterSeed"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from exc
        return cfg.validate()

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def continuous_model(self) -> ContinuousModel:
        return spring_model(self.nu, self.gamma, self.q11, self.q22, self.r, self.g)

    def policy(self, beta1: float) -> PolicyParams:
        return PolicyParams(self.beta0, float(beta1), self.alpha, self.p_missing)


@dataclass(frozen=True)
class ResultRow:
    beta1: float
    model: str
    param: str
    estimate: float
    stderr: float
    seed: int

    def sort_key(self):
        return (self.beta1, self.model, self.param)


def _rows_for(beta1, label, est, cov, seed) -> list[ResultRow]:
    se = np.sqrt(np.diag(cov))
    return [ResultRow(float(beta1), label, f"B{j + 1}", float(est[j]), float(se[j]), seed)
            for j in range(len(est))]


def run_point(config: ExperimentConfig, beta1: float, backend: str | None = None) -> list[ResultRow]:
    """Simulate and fit every family at one β₁."""
    cm = config.continuous_model()
    fine = discretize(cm, config.delta)
    prior = GaussianBelief.standard(cm.d)
    params = config.policy(beta1)
    trajs = [simulate_trajectory(fine, params, config.n_k, prior,
                                 trajectory_seed(config.master_seed, i), backend)
             for i in range(config.n_traj)]
    rows: list[ResultRow] = []
    for m in sorted(set(config.factors)):
        fam = Coarsened(m)
        fit = fit_effect([coarsen_dataset(t, m) for t in trajs], fam, fine, prior, backend)
        rows += _rows_for(beta1, fam.label, fit.theta_hat, fit.covariance, config.master_seed)
    # the continuous family estimates the impulse gain G; report B = Φ(δ) G
    fit = fit_effect([trajectory_timeline(t) for t in trajs], Continuous(), cm, prior, backend)
    Phi = np.asarray(fine.A)
    rows += _rows_for(beta1, Continuous().label, Phi @ fit.theta_hat,
                      Phi @ fit.covariance @ Phi.T, config.master_seed)
    log.info("beta1=%g done (%d trajectories)", beta1, config.n_traj)
    return rows


def run_experiment(config: ExperimentConfig, backend: str | None = None,
                   workers: int = 1) -> list[ResultRow]:
    config.validate()
    grid = list(dict.fromkeys(float(b) for b in config.beta1_grid))
    if workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_point, [config] * len(grid), grid, [backend] * len(grid)))
    else:
        parts = [run_point(config, b, backend) for b in grid]
    rows = [row for part in parts for row in part]
    return sorted(rows, key=ResultRow.sort_key)


def true_effect(config: ExperimentConfig) -> np.ndarray:
    return np.asarray(discretize(config.continuous_model(), config.delta).B)[:, 0]


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def format_results(rows: Iterable[ResultRow]) -> str:
    lines = [",".join(CSV_HEADER)]
    for r in sorted(rows, key=ResultRow.sort_key):
        lines.append(",".join([_fmt(r.beta1), r.model, r.param, _fmt(r.estimate), _fmt(r.stderr), str(r.seed)]))
    return "\n".join(lines) + "\n"


def write_results(rows: Iterable[ResultRow], path: str | os.PathLike) -> Path:
    path = Path(path)
    text = format_results(rows)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results(path: str | os.PathLike) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [ResultRow(float(r["beta1"]), r["model"], r["param"], float(r["estimate"]),
                          float(r["stderr"]), int(r["seed"])) for r in reader]


def summarize(rows: Sequence[ResultRow], truth: np.ndarray) -> str:
    """Plain-text table of estimates against the true effect."""
    out = [f"true B = [{truth[0]:.6g}, {truth[1]:.6g}]",
           f"{'beta1':>8} {'model':<14} {'B1':>12} {'se':>10} {'B2':>12} {'se':>10}"]
    by_key: dict = {}
    for r in rows:
        by_key.setdefault((r.beta1, r.model), {})[r.param] = r
    for (b, model), d in sorted(by_key.items()):
        b1, b2 = d.get("B1"), d.get("B2")
        out.append(f"{b:>8g} {model:<14} {b1.estimate:>12.6g} {b1.stderr:>10.3g} "
                   f"{b2.estimate:>12.6g} {b2.stderr:>10.3g}")
    return "\n".join(out)
