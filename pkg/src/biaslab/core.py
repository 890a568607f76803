"""Linear-Gaussian model types, exact discretization, and coarsening.

A continuous-time system dX = F X dt + G U(t) + L dβ with Y ~ N(H X, R) is
mapped onto a step-δ Gaussian HMM (A, B, C, H, R); a step model can then be
stacked ``m`` steps at a time into a coarsened model whose state is the
concatenation of ``m`` consecutive fine states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.linalg import expm

from .errors import DimensionError, DomainError

SYM_TOL = 1e-12
EIG_TOL = 1e-12


def _as_matrix(name: str, value, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        # a bare vector is read as a column
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionError(f"{name} has {arr.shape[0]} rows, expected {rows}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionError(f"{name} has {arr.shape[1]} cols, expected {cols}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


def _check_symmetric_psd(name: str, M: np.ndarray, strict: bool = False) -> None:
    if M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} must be square, got {M.shape}")
    if not np.allclose(M, M.T, rtol=0.0, atol=SYM_TOL * max(1.0, np.abs(M).max())):
        raise DomainError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(M)
    if strict and eig.min() <= 0.0:
        raise DomainError(f"{name} is not positive definite (min eigenvalue {eig.min():.3g})")
    if eig.min() < -EIG_TOL:
        raise DomainError(f"{name} is not positive semidefinite (min eigenvalue {eig.min():.3g})")


def _row(arr: np.ndarray) -> list:
    return arr.tolist()


@dataclass(frozen=True)
class ContinuousModel:
    """Stationary linear SDE with a Gaussian measurement model."""

    F: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        F = _as_matrix("F", self.F)
        d = F.shape[0]
        if F.shape[1] != d:
            raise DimensionError(f"F must be square, got {F.shape}")
        G = _as_matrix("G", self.G, rows=d)
        Q = _as_matrix("Q", self.Q, rows=d, cols=d)
        H = _as_matrix("H", np.atleast_2d(self.H), cols=d)
        R = _as_matrix("R", self.R, rows=H.shape[0], cols=H.shape[0])
        _check_symmetric_psd("Q", Q)
        _check_symmetric_psd("R", R, strict=True)
        for k, v in dict(F=F, G=G, Q=Q, H=H, R=R).items():
            object.__setattr__(self, k, v)

    @property
    def d(self) -> int:
        return self.F.shape[0]

    @property
    def q(self) -> int:
        return self.G.shape[1]

    @property
    def p(self) -> int:
        return self.H.shape[0]

    @property
    def L(self) -> np.ndarray:
        """Cholesky factor of the diffusion density Q."""
        return np.linalg.cholesky(self.Q)

    def to_dict(self) -> dict:
        return {
            "kind": "continuous",
            "d": self.d, "q": self.q, "p": self.p,
            "F": _row(self.F), "G": _row(self.G), "Q": _row(self.Q),
            "H": _row(self.H), "R": _row(self.R),
        }


@dataclass(frozen=True)
class DiscreteModel:
    """Step-δ Gaussian HMM: X_k ~ N(A X_{k-1} + B U_{k-1}, C), Y_k ~ N(H X_k, R)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    H: np.ndarray
    R: np.ndarray
    step: float = 1.0

    def __post_init__(self):
        A = _as_matrix("A", self.A)
        d = A.shape[0]
        if A.shape[1] != d:
            raise DimensionError(f"A must be square, got {A.shape}")
        B = _as_matrix("B", self.B, rows=d)
        C = _as_matrix("C", self.C, rows=d, cols=d)
        H = _as_matrix("H", np.atleast_2d(self.H), cols=d)
        R = _as_matrix("R", self.R, rows=H.shape[0], cols=H.shape[0])
        _check_symmetric_psd("C", C)
        # R = 0 is admitted so noiseless recursions can be simulated;
        # filtering rejects a non-positive measurement variance.
        _check_symmetric_psd("R", R)
        step = float(self.step)
        if not step > 0.0:
            raise DomainError(f"step must be positive, got {step}")
        for k, v in dict(A=A, B=B, C=C, H=H, R=R, step=step).items():
            object.__setattr__(self, k, v)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    def with_effect(self, B) -> "DiscreteModel":
        return DiscreteModel(self.A, B, self.C, self.H, self.R, self.step)

    def to_dict(self) -> dict:
        return {
            "kind": "discrete",
            "d": self.d, "q": self.q, "p": self.H.shape[0],
            "A": _row(self.A), "B": _row(self.B), "C": _row(self.C),
            "H": _row(self.H), "R": _row(self.R), "step": self.step,
        }


@dataclass(frozen=True)
class CoarsenedModel:
    """Factor-``m`` stacked model over windows of width ``m * base.step``.

    The stacked state of window k is [X_{m(k-1)+1}; ...; X_{mk}] and its
    control vector is (U_{m(k-1)}, ..., U_{mk-1}).
    """

    factor: int
    base: DiscreteModel
    Ac: np.ndarray
    Bc: np.ndarray
    Cc: np.ndarray

    @property
    def window(self) -> float:
        return self.factor * self.base.step

    @property
    def dim(self) -> int:
        return self.Ac.shape[0]

    def to_dict(self) -> dict:
        out = self.base.to_dict()
        out.update(kind="coarsened", factor=self.factor, window=self.window,
                   Ac=_row(self.Ac), Bc=_row(self.Bc), Cc=_row(self.Cc))
        return out


@dataclass(frozen=True)
class WindowMeasurement:
    """Effective measurement of a window's averaged observation."""

    Hrow: np.ndarray
    Rvar: float
    observed_idx: tuple[int, ...] = field(default=())

    @property
    def measured(self) -> bool:
        return len(self.observed_idx) > 0


def matrix_exp(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"matrix_exp needs a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DomainError("matrix_exp input has non-finite entries")
    return expm(M)


def noise_integral(F, Q, step: float) -> np.ndarray:
    """Integrated process-noise covariance ∫_0^δ e^{Fu} Q e^{Fᵀu} du (Van Loan)."""
    F = np.asarray(F, dtype=float)
    Q = np.asarray(Q, dtype=float)
    d = F.shape[0]
    if F.shape != (d, d) or Q.shape != (d, d):
        raise DimensionError(f"F {F.shape} and Q {Q.shape} must be square and equal")
    if not step > 0.0:
        raise DomainError(f"step must be positive, got {step}")
    # exp([[-F, Q], [0, Fᵀ]] δ) = [[., Φ⁻¹ C], [0, Φᵀ]]
    M = np.zeros((2 * d, 2 * d))
    M[:d, :d] = -F
    M[:d, d:] = Q
    M[d:, d:] = F.T
    E = matrix_exp(M * step)
    Phi = E[d:, d:].T
    C = Phi @ E[:d, d:]
    return 0.5 * (C + C.T)


def discretize(cm: ContinuousModel, step: float) -> DiscreteModel:
    """Exact step-δ model, with actions as Dirac impulses on the grid."""
    if not step > 0.0:
        raise DomainError(f"step must be positive, got {step}")
    A = matrix_exp(cm.F * step)
    return DiscreteModel(A=A, B=A @ cm.G, C=noise_integral(cm.F, cm.Q, step),
                         H=cm.H, R=cm.R, step=step)


def matrix_powers(A: np.ndarray, n: int) -> list[np.ndarray]:
    """[I, A, A², ..., A^n] by repeated multiplication."""
    out = [np.eye(A.shape[0])]
    for _ in range(n):
        out.append(A @ out[-1])
    return out


def stacked_effect(A: np.ndarray, B: np.ndarray, m: int, powers: list[np.ndarray] | None = None) -> np.ndarray:
    """Block lower-triangular input matrix with A^{i-j} B in block (i, j)."""
    d, q = B.shape
    P = powers if powers is not None else matrix_powers(A, m)
    Bc = np.zeros((m * d, m * q))
    cols = [P[k] @ B for k in range(m)]
    for i in range(m):
        for j in range(i + 1):
            Bc[i * d:(i + 1) * d, j * q:(j + 1) * q] = cols[i - j]
    return Bc


def coarsen(dm: DiscreteModel, m: int) -> CoarsenedModel:
    if int(m) != m or m < 1:
        raise DomainError(f"coarsening factor must be an integer >= 1, got {m}")
    m = int(m)
    if m == 1:
        return CoarsenedModel(1, dm, dm.A, dm.B, dm.C)
    A, C, d = dm.A, dm.C, dm.d
    P = matrix_powers(A, m)
    Ac = np.zeros((m * d, m * d))
    for i in range(m):
        Ac[i * d:(i + 1) * d, (m - 1) * d:] = P[i + 1]
    diag = [C]
    for _ in range(1, m):
        diag.append(A @ diag[-1] @ A.T + C)
    Cc = np.zeros((m * d, m * d))
    for i in range(m):
        Cc[i * d:(i + 1) * d, i * d:(i + 1) * d] = diag[i]
        for j in range(i + 1, m):
            blk = diag[i] @ P[j - i].T
            Cc[i * d:(i + 1) * d, j * d:(j + 1) * d] = blk
            Cc[j * d:(j + 1) * d, i * d:(i + 1) * d] = blk.T
    Cc = 0.5 * (Cc + Cc.T)
    Bc = stacked_effect(A, dm.B, m, P)
    for M in (Ac, Bc, Cc):
        M.setflags(write=False)
    return CoarsenedModel(m, dm, Ac, Bc, Cc)


def window_measurement(dm: DiscreteModel, m: int, observed_idx: Iterable[int]) -> WindowMeasurement:
    """Measurement row and variance for the mean of the observed fine values.

    ``observed_idx`` holds 1-based in-window positions.
    """
    if dm.H.shape[0] != 1:
        raise DimensionError("window averaging supports scalar measurements only")
    if m < 1:
        raise DomainError(f"coarsening factor must be >= 1, got {m}")
    idx = tuple(sorted(set(int(i) for i in observed_idx)))
    for i in idx:
        if not 1 <= i <= m:
            raise DomainError(f"in-window index {i} outside 1..{m}")
    d = dm.d
    Hrow = np.zeros(m * d)
    n = len(idx)
    if n == 0:
        return WindowMeasurement(Hrow, 0.0, ())
    h = dm.H[0] / n
    for i in idx:
        Hrow[(i - 1) * d:i * d] = h
    return WindowMeasurement(Hrow, float(dm.R[0, 0]) / n, idx)


def spring_model(nu: float = 1.0, gamma: float = 0.5, q11: float = 1e-8,
                 q22: float = 1e-2, r: float = 1e-4, g: float = 0.5) -> ContinuousModel:
    """Damped stochastic spring: position/velocity state, position measured."""
    return ContinuousModel(
        F=[[0.0, 1.0], [-nu ** 2, -gamma]],
        G=[[0.0], [g]],
        Q=[[q11, 0.0], [0.0, q22]],
        H=[[1.0, 0.0]],
        R=[[r]],
    )


def model_to_json(model) -> str:
    return json.dumps(model.to_dict())


def model_from_json(text: str | dict):
    """Rebuild a model from :func:`model_to_json` output."""
    doc = json.loads(text) if isinstance(text, str) else text
    kind = doc.get("kind")
    if kind == "continuous":
        return ContinuousModel(doc["F"], doc["G"], doc["Q"], doc["H"], doc["R"])
    dm = DiscreteModel(doc["A"], doc["B"], doc["C"], doc["H"], doc["R"], doc["step"])
    if kind == "discrete":
        return dm
    if kind == "coarsened":
        return coarsen(dm, int(doc["factor"]))
    raise ValueError(f"unknown model kind {kind!r}")
