"""Maximum-likelihood estimation of the action-effect vector.

With every parameter except the effect known, the Kalman gains and
innovation variances do not depend on the effect while the innovations are
affine in it, so the log-likelihood is an exact concave quadratic. It is
recovered from d+1 filter passes (effect 0 and each unit vector) and
maximised by solving the weighted normal equations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import ContinuousModel, DiscreteModel, coarsen, matrix_powers, stacked_effect
from .errors import DimensionError, RankDeficiencyError
from .kalman import LOG_2PI, GapCache, GaussianBelief, run_arrays
from .policy import CoarseDataset, Timeline

RANK_RTOL = 1e-12


@dataclass(frozen=True)
class Coarsened:
    """Discrete family fitted on windows of ``m`` fine steps; parameter is B."""

    m: int

    @property
    def label(self) -> str:
        return f"coarsened-{self.m:02d}"


@dataclass(frozen=True)
class Continuous:
    """Continuous-time family fitted on event timelines; parameter is G."""

    @property
    def label(self) -> str:
        return "continuous"


Family = Coarsened | Continuous


def embed_theta(theta, family: Family, base, gaps: Iterable[float] = ()):
    """Input-effect matrices implied by ``theta`` for one family.

    Coarsened(m) with a :class:`DiscreteModel` base returns the stacked
    matrix with A^{i-j} theta in block (i, j).  Continuous with a
    :class:`ContinuousModel` base returns {gap: Φ(gap) theta}.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1, 1)
    if isinstance(family, Coarsened):
        if not isinstance(base, DiscreteModel):
            raise TypeError("coarsened families embed into a DiscreteModel")
        if theta.shape[0] != base.d:
            raise DimensionError(f"theta has {theta.shape[0]} entries, model d={base.d}")
        return stacked_effect(base.A, theta, family.m)
    if not isinstance(base, ContinuousModel):
        raise TypeError("the continuous family embeds into a ContinuousModel")
    if theta.shape[0] != base.d:
        raise DimensionError(f"theta has {theta.shape[0]} entries, model d={base.d}")
    cache = GapCache(base)
    return {float(g): cache(g)[0] @ theta for g in gaps}


@dataclass
class Design:
    """Theta-free filter inputs for one dataset, plus per-unit-effect drives."""

    A_tab: np.ndarray
    C_tab: np.ndarray
    tab_idx: np.ndarray
    unit_drive: np.ndarray  # (T, D, d): drive for theta = e_j
    H: np.ndarray
    R: np.ndarray
    y: np.ndarray
    has_y: np.ndarray
    prior: GaussianBelief

    def run(self, thetas: np.ndarray, backend: str | None = None):
        """Filter once per column of ``thetas`` (d x K), sharing the covariance pass."""
        drive = self.unit_drive @ thetas
        return run_arrays(self.A_tab, self.C_tab, self.tab_idx, drive, self.H, self.R,
                          self.y, self.has_y, self.prior, backend)


class DesignBuilder:
    """Builds :class:`Design` objects for one family against fixed true parameters.

    ``truth`` is the fine :class:`DiscreteModel` for coarsened families and
    the :class:`ContinuousModel` for the continuous family; its effect
    matrix is ignored.
    """

    def __init__(self, family: Family, truth, prior: GaussianBelief | None = None):
        self.family = family
        self.truth = truth
        d = truth.d
        self.d = d
        self.prior = prior if prior is not None else GaussianBelief.standard(d)
        if isinstance(family, Coarsened):
            if not isinstance(truth, DiscreteModel):
                raise TypeError("coarsened families need the fine DiscreteModel")
            m = family.m
            cmod = coarsen(truth, m)
            D = m * d
            self.A_tab = np.array(cmod.Ac)[None]
            self.C_tab = np.array(cmod.Cc)[None]
            P = matrix_powers(truth.A, m)
            # unit_B[j] is the stacked input matrix (D x m) for theta = e_j
            self.unit_B = np.stack([stacked_effect(truth.A, np.eye(d)[:, [j]], m, P) for j in range(d)])
            mean = np.zeros(D)
            cov = np.zeros((D, D))
            mean[-d:] = self.prior.mean
            cov[-d:, -d:] = self.prior.cov
            self.stacked_prior = GaussianBelief(mean, cov)
            self.h = truth.H[0]
            self.r = float(truth.R[0, 0])
        else:
            if not isinstance(truth, ContinuousModel):
                raise TypeError("the continuous family needs the ContinuousModel")
            self.cache = GapCache(truth)
            self.h = truth.H[0]
            self.r = float(truth.R[0, 0])

    def build(self, data) -> Design:
        if isinstance(self.family, Coarsened):
            return self._coarse(data)
        return self._continuous(data)

    def _coarse(self, ds: CoarseDataset) -> Design:
        m, d = self.family.m, self.d
        if ds.factor != m:
            raise DimensionError(f"dataset factor {ds.factor} != family factor {m}")
        W = len(ds)
        D = m * d
        counts = ds.observed.sum(axis=1)
        H = np.zeros((W, D))
        R = np.ones(W)
        # rows built in bulk; matches window_measurement entry for entry
        blocks = ds.observed[:, :, None] * self.h[None, None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            H[:] = (blocks / np.maximum(counts, 1)[:, None, None]).reshape(W, D)
            R[counts > 0] = self.r / counts[counts > 0]
        has_y = counts > 0
        y = np.where(has_y, ds.y, 0.0)
        # (d, D, m) @ (W, m) -> (W, D, d)
        unit_drive = np.einsum("jam,wm->waj", self.unit_B, ds.actions.astype(float))
        return Design(self.A_tab, self.C_tab, np.zeros(W, dtype=np.intp),
                      np.ascontiguousarray(unit_drive), H, R, y, has_y.astype(np.uint8),
                      self.stacked_prior)

    def _continuous(self, tl: Timeline) -> Design:
        d = self.d
        T = len(tl)
        if T == 0:
            A_tab = np.eye(d)[None]
            C_tab = np.zeros((1, d, d))
            idx = np.zeros(0, dtype=np.intp)
        else:
            A_tab, C_tab, idx = self.cache.tables(tl.gaps)
        # Φ(g) e_j u for each step
        unit_drive = A_tab[idx] * np.asarray(tl.controls, dtype=float)[:, None, None]
        H = np.tile(self.h, (T, 1))
        R = np.full(T, self.r)
        y = np.where(tl.has_y, tl.y, 0.0)
        return Design(A_tab, C_tab, idx, np.ascontiguousarray(unit_drive), H, R, y,
                      np.asarray(tl.has_y, dtype=np.uint8), self.prior)


@dataclass
class Quadratic:
    """loglik(theta) = -0.5 * (const + 2 linᵀ theta + thetaᵀ info theta)."""

    const: float
    lin: np.ndarray
    info: np.ndarray
    n_measured: int = 0

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(-0.5 * (self.const + 2.0 * self.lin @ theta + theta @ self.info @ theta))

    def __add__(self, other: "Quadratic") -> "Quadratic":
        return Quadratic(self.const + other.const, self.lin + other.lin, self.info + other.info,
                         self.n_measured + other.n_measured)

    @classmethod
    def zero(cls, d: int) -> "Quadratic":
        return cls(0.0, np.zeros(d), np.zeros((d, d)), 0)


def innovation_columns(design: Design, backend: str | None = None):
    """Residuals at theta = 0, e_1, ..., e_d and the shared innovation variances."""
    d = design.unit_drive.shape[2]
    thetas = np.hstack([np.zeros((d, 1)), np.eye(d)])
    resid, var, _, _ = design.run(thetas, backend)
    return resid, var


def design_quadratic(design: Design, backend: str | None = None) -> Quadratic:
    d = design.unit_drive.shape[2]
    resid, var = innovation_columns(design, backend)
    ok = ~np.isnan(var)
    if not ok.any():
        return Quadratic.zero(d)
    r0 = resid[ok, 0]
    s = var[ok]
    J = resid[ok, 1:] - r0[:, None]
    Jw = J / s[:, None]
    return Quadratic(
        const=float(np.sum(LOG_2PI + np.log(s) + r0 * r0 / s)),
        lin=Jw.T @ r0,
        info=Jw.T @ J,
        n_measured=int(ok.sum()),
    )


def loglik_quadratic(datasets: Sequence, family: Family, truth, prior: GaussianBelief | None = None,
                     backend: str | None = None) -> Quadratic:
    builder = DesignBuilder(family, truth, prior)
    total = Quadratic.zero(truth.d)
    for ds in datasets:
        total = total + design_quadratic(builder.build(ds), backend)
    return total


def loglik(theta, datasets: Sequence, family: Family, truth, prior: GaussianBelief | None = None,
           backend: str | None = None) -> float:
    """Direct filter evaluation at one theta, summed over datasets."""
    theta = np.asarray(theta, dtype=float).reshape(-1, 1)
    builder = DesignBuilder(family, truth, prior)
    total = 0.0
    for ds in datasets:
        resid, var, _, _ = builder.build(ds).run(theta, backend)
        ok = ~np.isnan(var)
        r = resid[ok, 0]
        s = var[ok]
        total += float(-0.5 * np.sum(LOG_2PI + np.log(s) + r * r / s))
    return total


@dataclass
class FitResult:
    theta_hat: np.ndarray
    loglik_at_hat: float
    curvature: np.ndarray
    n_trajectories: int
    family: Family
    quadratic: Quadratic

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(-self.curvature)

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))


def solve_quadratic(quad: Quadratic) -> np.ndarray:
    info = 0.5 * (quad.info + quad.info.T)
    w, V = np.linalg.eigh(info)
    scale = max(float(np.abs(w).max()), 0.0) if w.size else 0.0
    if w.size and (scale == 0.0 or w[0] <= RANK_RTOL * scale):
        raise RankDeficiencyError(
            f"effect not identified (information eigenvalues {w.tolist()}); "
            f"null direction {V[:, 0].tolist()}",
            null_direction=V[:, 0].copy(),
        )
    return -np.linalg.solve(info, quad.lin)


def fit_effect(datasets: Sequence, family: Family, truth, prior: GaussianBelief | None = None,
               backend: str | None = None) -> FitResult:
    """Exact maximiser of the pooled log-likelihood in the effect vector.

    ``datasets`` holds :class:`CoarseDataset` objects for a coarsened family
    or :class:`Timeline` objects for the continuous one.
    """
    datasets = list(datasets)
    if not datasets:
        raise ValueError("fit_effect needs at least one dataset")
    quad = loglik_quadratic(datasets, family, truth, prior, backend)
    theta = solve_quadratic(quad)
    return FitResult(theta, quad(theta), -0.5 * (quad.info + quad.info.T),
                     len(datasets), family, quad)


@dataclass
class ConcavityProbe:
    direction: np.ndarray
    second_differences: dict[float, float]

    @property
    def concave(self) -> bool:
        return all(v <= 1e-10 for v in self.second_differences.values())

    def scale_consistent(self, tol: float = 1e-8) -> bool:
        """Second differences grow with the square of the probe scale."""
        base = self.second_differences.get(1.0)
        if base is None:
            return True
        ref = max(1.0, abs(base))
        return all(abs(v / (s * s) - base) <= tol * ref for s, v in self.second_differences.items())


def verify_concavity(datasets: Sequence, family: Family, truth, directions: Iterable,
                     scales: Sequence[float] = (1.0, 2.0), prior: GaussianBelief | None = None,
                     backend: str | None = None) -> list[ConcavityProbe]:
    """Three-point second differences of the directly evaluated log-likelihood."""
    datasets = list(datasets)
    report = []
    zero = np.zeros(truth.d)
    l0 = loglik(zero, datasets, family, truth, prior, backend)
    for v in directions:
        v = np.asarray(v, dtype=float)
        diffs = {}
        for s in scales:
            lp = loglik(s * v, datasets, family, truth, prior, backend)
            lm = loglik(-s * v, datasets, family, truth, prior, backend)
            diffs[float(s)] = lp + lm - 2.0 * l0
        report.append(ConcavityProbe(v, diffs))
    return report


__all__ = [
    "Coarsened", "Continuous", "Design", "DesignBuilder", "FitResult", "Quadratic",
    "embed_theta", "fit_effect", "loglik", "loglik_quadratic", "solve_quadratic",
    "verify_concavity",
]
