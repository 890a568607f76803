"""History-dependent action policy, trajectory simulation, and binning.

Actions are drawn from a logistic policy on a recency-weighted average of
the measurements observed so far, so past outcomes confound the actions.
Binning the resulting series into windows hides which values drove which
actions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _backend
from .core import DiscreteModel
from .errors import DomainError
from .kalman import GaussianBelief, StepInput


@dataclass(frozen=True)
class PolicyParams:
    beta0: float = -2.0
    beta1: float = 0.0
    alpha: float = 0.9
    p_missing: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 <= self.p_missing <= 1.0:
            raise DomainError(f"p_missing must lie in [0, 1], got {self.p_missing}")


def sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def weighted_history(history: Sequence[tuple[float, int]], alpha: float) -> float:
    """Recency-weighted mean of the observed values; 0 when nothing is observed or alpha is 0."""
    k = len(history)
    if alpha == 0.0:
        return 0.0
    num = 0.0
    den = 0.0
    for i, (y, o) in enumerate(history):
        if o:
            w = alpha ** (k - 1 - i)
            num += w * y
            den += w
    return num / den if den > 0.0 else 0.0


def policy_prob(history: Sequence[tuple[float, int]], params: PolicyParams) -> float:
    """Probability of acting after seeing ``history`` = [(Y_1, O_1), ..., (Y_k, O_k)]."""
    return sigmoid(params.beta0 + params.beta1 * weighted_history(history, params.alpha))


@dataclass(frozen=True)
class Trajectory:
    """One simulated episode on the fine grid.

    Row k (0-based) of ``states``, ``measurements`` and ``observed`` is fine
    step k+1.  ``actions[k]`` is U_k, applied on the transition into step
    k+1; U_k is drawn after Y_k is seen (U_0 from an empty history).
    Unobserved measurements keep their simulated value but are never used.
    """

    states: np.ndarray
    measurements: np.ndarray
    observed: np.ndarray
    actions: np.ndarray
    step: float
    initial_state: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.measurements)

    def to_jsonl(self) -> str:
        lines = []
        for k in range(len(self)):
            lines.append(json.dumps({
                "k": k + 1,
                "X": self.states[k].tolist(),
                "Y": float(self.measurements[k]),
                "O": int(self.observed[k]),
                "U": int(self.actions[k]),
            }))
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str, step: float) -> "Trajectory":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        rows.sort(key=lambda r: r["k"])
        return cls(
            states=np.array([r["X"] for r in rows], dtype=float),
            measurements=np.array([r["Y"] for r in rows], dtype=float),
            observed=np.array([r["O"] for r in rows], dtype=bool),
            actions=np.array([r["U"] for r in rows], dtype=np.int64),
            step=step,
        )


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """A factor L with L Lᵀ = M; Cholesky when possible, else symmetric eigen-root."""
    M = np.asarray(M, dtype=float)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


def simulate_trajectory(fine: DiscreteModel, params: PolicyParams, n_k: int,
                        prior: GaussianBelief | None = None, seed: int = 0,
                        backend: str | None = None) -> Trajectory:
    """Draw ``n_k`` fine steps; the trajectory is a deterministic function of ``seed``."""
    if fine.q != 1 or fine.H.shape[0] != 1:
        raise DomainError("simulation supports a single binary action and scalar measurements")
    d = fine.d
    prior = prior if prior is not None else GaussianBelief.standard(d)
    rng = np.random.default_rng(seed)
    x0 = prior.mean + psd_sqrt(prior.cov) @ rng.standard_normal(d)
    z_state = rng.standard_normal((n_k, d))
    z_meas = rng.standard_normal(n_k)
    u_obs = rng.random(n_k)
    u_act = rng.random(n_k)
    if n_k == 0:
        return Trajectory(np.zeros((0, d)), np.zeros(0), np.zeros(0, dtype=bool),
                          np.zeros(0, dtype=np.int64), fine.step, x0)
    states, ys, obs, acts = _backend.get(backend).simulate(
        np.asarray(fine.A), fine.B[:, 0].copy(), psd_sqrt(fine.C), fine.H[0].copy(),
        math.sqrt(max(float(fine.R[0, 0]), 0.0)), x0, z_state, z_meas, u_obs, u_act,
        1.0 - params.p_missing, params.beta0, params.beta1, params.alpha)
    return Trajectory(states, ys, obs.astype(bool), acts.astype(np.int64), fine.step, x0)


@dataclass(frozen=True)
class CoarseDataset:
    """A trajectory binned into windows of ``factor`` fine steps.

    ``y[w]`` is the mean of the observed values in window w (NaN when none),
    ``observed[w]`` the in-window observation mask and ``actions[w]`` the
    control vector (U_{m w}, ..., U_{m w + m - 1}) driving that window.
    """

    factor: int
    y: np.ndarray
    observed: np.ndarray
    actions: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    @property
    def windows(self) -> list[tuple[float | None, tuple[int, ...], tuple[int, ...]]]:
        out = []
        for w in range(len(self)):
            idx = tuple(int(i) + 1 for i in np.flatnonzero(self.observed[w]))
            val = None if not idx else float(self.y[w])
            out.append((val, idx, tuple(int(a) for a in self.actions[w])))
        return out


def coarsen_dataset(t: Trajectory, m: int) -> CoarseDataset:
    if int(m) != m or m < 1:
        raise DomainError(f"coarsening factor must be an integer >= 1, got {m}")
    m = int(m)
    W = len(t) // m
    n = W * m
    obs = np.asarray(t.observed[:n], dtype=bool).reshape(W, m)
    vals = np.where(obs, np.asarray(t.measurements[:n]).reshape(W, m), 0.0)
    counts = obs.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.where(counts > 0, vals.sum(axis=1) / np.maximum(counts, 1), np.nan)
    acts = np.asarray(t.actions[:n], dtype=np.int64).reshape(W, m)
    return CoarseDataset(m, y, obs, acts)


@dataclass(frozen=True)
class Timeline:
    """Event-time view of a trajectory for the continuous-time filter.

    Event i sits ``gaps[i]`` after event i-1 (the first after time 0, where
    the prior lives). ``controls[i]`` is the impulse applied at event i-1,
    and event i carries measurement ``y[i]`` when ``has_y[i]``.
    """

    times: np.ndarray
    gaps: np.ndarray
    controls: np.ndarray
    y: np.ndarray
    has_y: np.ndarray

    def __len__(self) -> int:
        return len(self.gaps)

    def step_inputs(self, Hrow, Rvar: float) -> list[StepInput]:
        out = []
        for i in range(len(self)):
            if self.has_y[i]:
                out.append(StepInput([self.controls[i]], float(self.y[i]), (Hrow, Rvar), float(self.gaps[i])))
            else:
                out.append(StepInput([self.controls[i]], gap=float(self.gaps[i])))
        return out


def trajectory_timeline(t: Trajectory) -> Timeline:
    """Keep only the grid times where something happened: an observation or an action."""
    n = len(t)
    obs = np.asarray(t.observed, dtype=bool)
    acts = np.asarray(t.actions, dtype=np.int64)
    # grid index g: measurement of step g (1..n), action U_g (0..n-1)
    events = np.zeros(n + 1, dtype=bool)
    events[1:] = obs
    events[:n] |= acts != 0
    events[0] = False
    grid = np.flatnonzero(events)
    prev = np.concatenate([[0], grid[:-1]])
    controls = np.where(prev < n, np.concatenate([acts, [0]])[np.minimum(prev, n)], 0)
    has_y = np.zeros(len(grid), dtype=bool)
    inner = grid >= 1
    has_y[inner] = obs[grid[inner] - 1]
    y = np.where(has_y, np.asarray(t.measurements)[np.maximum(grid - 1, 0)], np.nan)
    return Timeline(grid * t.step, (grid - prev) * t.step, controls.astype(float), y, has_y)


def iter_histories(t: Trajectory) -> Iterable[list[tuple[float, int]]]:
    """Histories seen before each action U_0, ..., U_{n-1}."""
    hist: list[tuple[float, int]] = []
    yield list(hist)
    for k in range(len(t) - 1):
        hist.append((float(t.measurements[k]), int(t.observed[k])))
        yield list(hist)
