"""Kalman filtering with known controls, missing measurements, and exact likelihood.

The filter's one-step predictive density of each observed measurement,
given past measurements and actions, is the outcome model being fitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .core import ContinuousModel, discretize, matrix_exp
from .errors import DimensionError, InnovationVarianceError

LOG_2PI = math.log(2.0 * math.pi)
VAR_FLOOR = 1e-300


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float).reshape(mean.size, mean.size)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def standard(cls, d: int) -> "GaussianBelief":
        return cls(np.zeros(d), np.eye(d))

    @property
    def d(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class StepInput:
    """One filter step: control applied on entry, then an optional scalar measurement.

    ``measurement_model`` is a ``(Hrow, Rvar)`` pair and must be given exactly
    when ``measurement`` is.  ``gap`` is only read by the continuous filter.
    """

    control: np.ndarray
    measurement: float | None = None
    measurement_model: tuple | None = None
    gap: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "control", np.atleast_1d(np.asarray(self.control, dtype=float)))
        if (self.measurement is None) != (self.measurement_model is None):
            raise ValueError("measurement and measurement_model must be given together")
        if not self.gap > 0.0:
            raise ValueError(f"gap must be positive, got {self.gap}")


@dataclass
class FilterResult:
    loglik: float
    innovations: list[tuple[float, float]] = field(default_factory=list)
    final_belief: GaussianBelief | None = None


def kf_predict(belief: GaussianBelief, A, B, C, control) -> GaussianBelief:
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    u = np.atleast_1d(np.asarray(control, dtype=float))
    d = belief.d
    if A.shape != (d, d) or np.shape(C) != (d, d) or B.shape != (d, u.size):
        raise DimensionError(
            f"predict shapes: belief d={d}, A {A.shape}, B {B.shape}, C {np.shape(C)}, control {u.shape}")
    cov = A @ belief.cov @ A.T + C
    return GaussianBelief(A @ belief.mean + B @ u, 0.5 * (cov + cov.T))


def kf_update(belief: GaussianBelief, Hrow, Rvar: float, y: float) -> tuple[GaussianBelief, float]:
    h = np.asarray(Hrow, dtype=float).reshape(-1)
    if h.size != belief.d:
        raise DimensionError(f"Hrow has {h.size} entries, belief has {belief.d}")
    ph = belief.cov @ h
    s = float(h @ ph) + float(Rvar)
    if not s > VAR_FLOOR:
        raise InnovationVarianceError(f"innovation variance {s!r}")
    r = float(y) - float(h @ belief.mean)
    gain = ph / s
    cov = belief.cov - np.outer(gain, ph)
    post = GaussianBelief(belief.mean + gain * r, 0.5 * (cov + cov.T))
    return post, -0.5 * (LOG_2PI + math.log(s) + r * r / s)


def gaussian_loglik(resid: np.ndarray, var: np.ndarray) -> float:
    """Sum of scalar normal log densities, skipping NaN (unmeasured) entries."""
    ok = ~np.isnan(var)
    r = resid[ok]
    s = var[ok]
    return float(-0.5 * np.sum(LOG_2PI + np.log(s) + r * r / s))


def run_arrays(A_tab, C_tab, tab_idx, drive, H, R, y, has_y, prior: GaussianBelief,
               backend: str | None = None, prior_mean=None):
    """Array-level filter pass; see ``_pykernels.run_filter`` for the layout.

    ``prior_mean`` (D x K) overrides ``prior.mean`` when the mean columns
    start from different points.
    """
    drive = np.asarray(drive, dtype=float)
    K = drive.shape[2]
    if prior_mean is None:
        prior_mean = np.repeat(prior.mean[:, None], K, axis=1)
    return _backend.get(backend).run_filter(
        np.asarray(A_tab, dtype=float), np.asarray(C_tab, dtype=float),
        np.asarray(tab_idx, dtype=np.intp), drive,
        np.asarray(H, dtype=float), np.asarray(R, dtype=float),
        np.asarray(y, dtype=float), np.asarray(has_y, dtype=np.uint8),
        np.ascontiguousarray(prior_mean, dtype=float), prior.cov)


def _pack_inputs(d: int, inputs: Sequence[StepInput]):
    T = len(inputs)
    H = np.zeros((T, d))
    R = np.ones(T)
    y = np.zeros(T)
    has_y = np.zeros(T, dtype=np.uint8)
    for t, inp in enumerate(inputs):
        if inp.measurement is not None:
            h, rv = inp.measurement_model
            H[t] = np.asarray(h, dtype=float).reshape(-1)
            R[t] = float(rv)
            y[t] = float(inp.measurement)
            has_y[t] = 1
    return H, R, y, has_y


def _result(resid, var, mean, cov) -> FilterResult:
    ok = ~np.isnan(var)
    innov = [(float(r), float(s)) for r, s in zip(resid[ok, 0], var[ok])]
    return FilterResult(gaussian_loglik(resid[:, 0], var), innov,
                        GaussianBelief(mean[:, 0], cov))


def filter_loglik(prior: GaussianBelief, model_steps: Sequence[tuple], inputs: Sequence[StepInput],
                  backend: str | None = None) -> FilterResult:
    """Filter a sequence with per-step (A, B, C); measured steps add their predictive log density."""
    if len(model_steps) != len(inputs):
        raise DimensionError(f"{len(model_steps)} model steps for {len(inputs)} inputs")
    d = prior.d
    T = len(inputs)
    tables: dict[tuple[int, int], int] = {}
    A_list, C_list = [], []
    idx = np.zeros(T, dtype=np.intp)
    drive = np.zeros((T, d, 1))
    for t, ((A, B, C), inp) in enumerate(zip(model_steps, inputs)):
        key = (id(A), id(C))
        if key not in tables:
            A = np.asarray(A, dtype=float)
            C = np.asarray(C, dtype=float)
            if A.shape != (d, d) or C.shape != (d, d):
                raise DimensionError(f"step {t}: A {A.shape}, C {C.shape}, belief d={d}")
            tables[key] = len(A_list)
            A_list.append(A)
            C_list.append(C)
        idx[t] = tables[key]
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape != (d, inp.control.size):
            raise DimensionError(f"step {t}: B {B.shape}, control {inp.control.shape}")
        drive[t, :, 0] = B @ inp.control
    if T == 0:
        return FilterResult(0.0, [], prior)
    H, R, y, has_y = _pack_inputs(d, inputs)
    return _result(*run_arrays(np.array(A_list), np.array(C_list), idx, drive,
                               H, R, y, has_y, prior, backend))


class GapCache:
    """Memoised (Φ(g), C(g)) for the gaps of one continuous model."""

    def __init__(self, cm: ContinuousModel):
        self.cm = cm
        self._cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}

    def __call__(self, gap: float) -> tuple[np.ndarray, np.ndarray]:
        gap = float(gap)
        hit = self._cache.get(gap)
        if hit is None:
            dm = discretize(self.cm, gap)
            hit = (np.array(dm.A), np.array(dm.C))
            self._cache[gap] = hit
        return hit

    def tables(self, gaps: np.ndarray):
        """Stacked tables plus per-step indices for a gap sequence."""
        uniq, inv = np.unique(np.asarray(gaps, dtype=float), return_inverse=True)
        pairs = [self(g) for g in uniq]
        A_tab = np.array([a for a, _ in pairs]).reshape(len(uniq), self.cm.d, self.cm.d)
        C_tab = np.array([c for _, c in pairs]).reshape(len(uniq), self.cm.d, self.cm.d)
        return A_tab, C_tab, inv.astype(np.intp)


def continuous_filter_loglik(cm: ContinuousModel, B_effect, timeline: Sequence[StepInput],
                             step: float, prior: GaussianBelief | None = None,
                             backend: str | None = None) -> FilterResult:
    """Filter events at irregular gaps under the continuous model.

    ``B_effect`` is the input effect over one grid step ``step``; the
    implied impulse gain is G = Φ(step)⁻¹ B_effect, so a control applied at
    the start of a gap g moves the state by Φ(g) G.
    """
    B_effect = np.atleast_2d(np.asarray(B_effect, dtype=float))
    if B_effect.shape[0] != cm.d:
        B_effect = B_effect.reshape(cm.d, -1)
    G = np.linalg.solve(matrix_exp(cm.F * step), B_effect)
    prior = prior if prior is not None else GaussianBelief.standard(cm.d)
    if not timeline:
        return FilterResult(0.0, [], prior)
    cache = GapCache(cm)
    gaps = np.array([inp.gap for inp in timeline])
    A_tab, C_tab, idx = cache.tables(gaps)
    drive = np.zeros((len(timeline), cm.d, 1))
    for t, inp in enumerate(timeline):
        drive[t, :, 0] = A_tab[idx[t]] @ (G @ inp.control)
    H, R, y, has_y = _pack_inputs(cm.d, timeline)
    return _result(*run_arrays(A_tab, C_tab, idx, drive, H, R, y, has_y, prior, backend))
