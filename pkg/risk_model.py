"""
Risk Model Module

Builds the portfolio and Ising objects behind margin-aware portfolio selection:
covariance and precision, the Laplacian of the precision matrix, the critical
margin, couplings and field, the position-space and spin-space risk functions,
and the convex surrogate.

Position-space risk for positions p and spins s = sign(p):

    R(p) = 1/2 p'Cp - p'r - gamma p's

Minimising over p for fixed s gives p = C^-1 r + gamma C^-1 s. Substituting back
leaves, up to a factor gamma and the constant -1/2 r'C^-1 r, the random-field
Ising energy

    R(s) = -1/2 s'Js - h's,    J = gamma C^-1,  h = C^-1 r.

The surrogate R_c(s) = (s - h)'(s - h) + gamma s'Delta s has Hessian I + gamma
Delta, which is positive definite whenever gamma < gamma_c.
"""

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy import linalg

from margin_config import get_condition_limit
from market_data import ReturnMatrix
from reporting import console

ArrayLike = Union[np.ndarray, Sequence[float]]


class SingularCovarianceError(ArithmeticError):
    """Covariance is singular or too ill-conditioned to invert without shrinkage."""


class NotConvexError(ArithmeticError):
    """The convex surrogate has no minimiser at this margin (I + gamma Delta not PD)."""


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class CovarianceEstimate:
    """Sample covariance plus the diagnostics that decide whether it can be inverted."""

    C: np.ndarray
    n_obs: int
    min_eigenvalue: float
    condition_number: float
    singular: bool


@dataclass(frozen=True)
class PortfolioProblem:
    """Covariance, precision, expected returns and margin of one portfolio."""

    C: np.ndarray
    Cinv: np.ndarray
    r: np.ndarray
    gamma: float

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"margin requirement gamma must be >= 0, got {self.gamma}")
        object.__setattr__(self, "C", _frozen(self.C))
        object.__setattr__(self, "Cinv", _frozen(self.Cinv))
        object.__setattr__(self, "r", _frozen(self.r))

    @property
    def n(self) -> int:
        return self.r.shape[0]

    def expected_return(self, p: ArrayLike) -> float:
        """r_p = sum_i r_i p_i for positions p."""
        if isinstance(p, PositionVector):
            p = p.p
        return float(self.r @ np.asarray(p, dtype=float))

    def to_ising(self) -> "IsingInstance":
        return build_ising(self.Cinv, self.r, self.gamma)

    def positions(self, s: ArrayLike) -> "PositionVector":
        return optimal_positions(self.Cinv, self.r, self.gamma, s)

    def risk(self, p: ArrayLike, s: ArrayLike) -> float:
        return portfolio_risk(self.C, self.r, self.gamma, p, s)

    @property
    def risk_offset(self) -> float:
        return position_risk_offset(self.Cinv, self.r)


@dataclass(frozen=True)
class IsingInstance:
    """
    Random-field Ising instance: couplings J, field h, Laplacian Delta, critical
    margin gamma_c (may be +inf when Delta = 0). Arrays are read-only.
    """

    J: np.ndarray
    h: np.ndarray
    Delta: np.ndarray
    gamma: float
    gamma_c: float

    def __post_init__(self):
        object.__setattr__(self, "J", _frozen(self.J))
        object.__setattr__(self, "h", _frozen(self.h))
        object.__setattr__(self, "Delta", _frozen(self.Delta))

    @property
    def n(self) -> int:
        return self.h.shape[0]

    @property
    def gamma_ratio(self) -> float:
        """gamma / gamma_c; 0 when gamma_c is infinite."""
        if math.isinf(self.gamma_c):
            return 0.0
        return self.gamma / self.gamma_c

    @property
    def is_convex(self) -> bool:
        return self.gamma < self.gamma_c


@dataclass(frozen=True)
class SpinConfig:
    """Spin vector s in {-1, +1}^n with its spin-form risk."""

    s: np.ndarray
    risk: float

    def __post_init__(self):
        s = np.asarray(self.s)
        if s.ndim != 1 or not np.all((s == 1) | (s == -1)):
            raise ValueError("spin entries must be exactly -1 or +1")
        object.__setattr__(self, "s", _frozen(s))

    @classmethod
    def evaluate(cls, inst: IsingInstance, s: ArrayLike) -> "SpinConfig":
        spins = np.asarray(s, dtype=float)
        return cls(spins, spin_risk(inst, spins))

    def as_ints(self) -> list:
        return [int(v) for v in self.s]


@dataclass(frozen=True)
class PositionVector:
    """Signed capital amounts p (sign consistency with a spin vector is checked, not assumed)."""

    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", _frozen(self.p))

    def sign_consistency(self, s: ArrayLike) -> np.ndarray:
        """Per asset: does sign(p_i) equal s_i (p_i = 0 counts as +1)."""
        signs = np.where(self.p >= 0, 1.0, -1.0)
        return signs == np.asarray(s, dtype=float)


def _check_square(name: str, matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {matrix.shape}")
    return matrix


def _check_symmetric(name: str, matrix: np.ndarray) -> np.ndarray:
    matrix = _check_square(name, matrix)
    scale = max(1.0, float(np.max(np.abs(matrix))) if matrix.size else 1.0)
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-10 * scale):
        raise ValueError(f"{name} must be symmetric")
    return matrix


def estimate_covariance(ret: ReturnMatrix) -> CovarianceEstimate:
    """
    Unbiased sample covariance of the return rows (1/(T-2) over T-1 return rows).

    A singular estimate (constant column, duplicated columns, fewer rows than
    assets) is flagged in the result, never silently repaired.
    """
    data = np.asarray(ret.returns, dtype=float)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError(f"need at least 2 return observations, got shape {data.shape}")

    C = np.atleast_2d(np.cov(data, rowvar=False, ddof=1))
    C = 0.5 * (C + C.T)
    eigenvalues = linalg.eigvalsh(C)
    largest = float(np.max(np.abs(eigenvalues)))
    smallest = float(eigenvalues[0])
    condition = largest / smallest if smallest > 0 else math.inf
    singular = smallest <= 1e-14 * max(largest, 1e-300) or condition > get_condition_limit()
    if singular:
        console.print(f"⚠️  Covariance is singular or ill-conditioned (min eigenvalue {smallest:.3g})")
    return CovarianceEstimate(_frozen(C), data.shape[0], smallest, condition, bool(singular))


def invert_covariance(C: ArrayLike, shrinkage: float = 0.0) -> np.ndarray:
    """
    Invert (1 - lambda) C + lambda * mean(diag C) * I.

    Shrinkage is opt-in; with lambda = 0 the covariance must be positive definite
    with condition number below the configured limit (default 1e12).

    Raises:
        ValueError: C not symmetric or lambda outside [0, 1)
        SingularCovarianceError: C not invertible at this shrinkage
    """
    C = _check_symmetric("covariance", C)
    if not 0.0 <= shrinkage < 1.0:
        raise ValueError(f"shrinkage must lie in [0, 1), got {shrinkage}")

    n = C.shape[0]
    target = float(np.mean(np.diag(C)))
    shrunk = (1.0 - shrinkage) * C + shrinkage * target * np.eye(n)
    shrunk = 0.5 * (shrunk + shrunk.T)

    # eigenvalues ascending; the condition limit only applies to an unshrunk C
    eigenvalues = linalg.eigvalsh(shrunk)
    smallest, largest = float(eigenvalues[0]), float(eigenvalues[-1])
    if smallest <= 0:
        raise SingularCovarianceError(
            f"covariance is not positive definite (min eigenvalue {smallest:.3g}); "
            "pass a shrinkage in (0, 1), e.g. --shrinkage 0.1"
        )
    condition = largest / smallest
    if shrinkage == 0.0 and condition > get_condition_limit():
        raise SingularCovarianceError(
            f"covariance condition number {condition:.3g} exceeds {get_condition_limit():.3g}; "
            "pass a shrinkage in (0, 1), e.g. --shrinkage 0.1"
        )

    # Cholesky solve against I, then re-symmetrize the rounding
    factor = linalg.cho_factor(shrunk, lower=True)
    Cinv = linalg.cho_solve(factor, np.eye(n))
    return 0.5 * (Cinv + Cinv.T)


def laplacian(Cinv: ArrayLike) -> np.ndarray:
    """
    Laplacian of the precision matrix: Delta = diag(column sums of C^-1) - C^-1.

    Every row sums to zero (C^-1 symmetric), so the all-ones vector is in the
    kernel. Diagonal entries may be negative when C^-1 carries mixed signs.
    """
    Cinv = _check_symmetric("precision", Cinv)
    return np.diag(Cinv.sum(axis=0)) - Cinv


def critical_margin(Delta: ArrayLike) -> float:
    """gamma_c = 1 / max_i sum_k |Delta_ik|, or +inf when Delta = 0."""
    Delta = _check_square("Laplacian", Delta)
    # Gershgorin: every eigenvalue of Delta lies within the largest absolute row sum
    largest_row = float(np.max(np.sum(np.abs(Delta), axis=1)))
    if largest_row == 0.0:
        return math.inf
    return 1.0 / largest_row


def hessian_min_eigenvalue(Delta: ArrayLike, gamma: float) -> float:
    """Smallest eigenvalue of I + gamma Delta."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    Delta = _check_square("Laplacian", Delta)
    hessian = np.eye(Delta.shape[0]) + gamma * 0.5 * (Delta + Delta.T)
    return float(linalg.eigvalsh(hessian)[0])


def hessian_critical_margin(Delta: ArrayLike) -> float:
    """
    Exact margin at which I + gamma Delta stops being positive definite.

    Equals 1 / |lambda_min(Delta)| when Delta has a negative eigenvalue and +inf
    otherwise. Never below critical_margin(Delta).
    """
    Delta = _check_square("Laplacian", Delta)
    smallest = float(linalg.eigvalsh(0.5 * (Delta + Delta.T))[0])
    if smallest >= 0.0:
        return math.inf
    return -1.0 / smallest


def _assemble(Cinv: np.ndarray, h: np.ndarray, gamma: float) -> IsingInstance:
    if gamma < 0:
        raise ValueError(f"margin requirement gamma must be >= 0, got {gamma}")
    if h.shape != (Cinv.shape[0],):
        raise ValueError(f"field has shape {h.shape}, expected ({Cinv.shape[0]},)")
    Delta = laplacian(Cinv)
    return IsingInstance(
        J=gamma * Cinv,
        h=h,
        Delta=Delta,
        gamma=float(gamma),
        gamma_c=critical_margin(Delta),
    )


def build_ising(Cinv: ArrayLike, r: ArrayLike, gamma: float) -> IsingInstance:
    """
    Map a portfolio onto its Ising instance: J = gamma C^-1, h = C^-1 r, with the
    Laplacian and critical margin attached.
    """
    Cinv = _check_symmetric("precision", Cinv)
    r = np.asarray(r, dtype=float)
    if r.shape != (Cinv.shape[0],):
        raise ValueError(f"expected returns have shape {r.shape}, expected ({Cinv.shape[0]},)")
    return _assemble(Cinv, Cinv @ r, gamma)


def ising_from_field(Cinv: ArrayLike, h: ArrayLike, gamma: float) -> IsingInstance:
    """Ising instance with a directly supplied field h (J = gamma C^-1)."""
    Cinv = _check_symmetric("precision", Cinv)
    return _assemble(Cinv, np.asarray(h, dtype=float), gamma)


def implied_returns(C: ArrayLike, h: ArrayLike) -> np.ndarray:
    """Expected returns r = C h that produce the field h."""
    return np.asarray(C, dtype=float) @ np.asarray(h, dtype=float)


def _spins(inst: IsingInstance, s: ArrayLike) -> np.ndarray:
    if isinstance(s, SpinConfig):
        s = s.s
    s = np.asarray(s, dtype=float)
    if s.shape != (inst.n,):
        raise ValueError(f"configuration has shape {s.shape}, expected ({inst.n},)")
    return s


def spin_risk(inst: IsingInstance, s: ArrayLike) -> float:
    """R(s) = -1/2 sum_ik J_ik s_i s_k - sum_i h_i s_i, diagonal J terms included."""
    s = _spins(inst, s)
    return float(-0.5 * (s @ inst.J @ s) - inst.h @ s)


def convex_risk(inst: IsingInstance, x: ArrayLike) -> float:
    """R_c(x) = (x - h)'(x - h) + gamma x'Delta x, for spins or relaxed real vectors."""
    x = _spins(inst, x)
    residual = x - inst.h
    return float(residual @ residual + inst.gamma * (x @ inst.Delta @ x))


def convex_risk_pairwise(inst: IsingInstance, x: ArrayLike) -> float:
    """R_c in pair-sum form: 1/2 sum_ik J_ik (x_i - x_k)^2 + sum_i (h_i - x_i)^2."""
    x = _spins(inst, x)
    gaps = x[:, None] - x[None, :]
    return float(0.5 * np.sum(inst.J * gaps ** 2) + np.sum((inst.h - x) ** 2))


def local_fields(inst: IsingInstance, s: ArrayLike) -> np.ndarray:
    """h_i + sum_{k != i} J_ik s_k for every site."""
    s = _spins(inst, s)
    return inst.h + inst.J @ s - np.diag(inst.J) * s


def flip_deltas(inst: IsingInstance, s: ArrayLike) -> np.ndarray:
    """Risk change R(flip_i(s)) - R(s) for every site i."""
    s = _spins(inst, s)
    return 2.0 * s * local_fields(inst, s)


def flip_delta(inst: IsingInstance, s: ArrayLike, i: int) -> float:
    """
    Risk change of flipping spin i, in O(n): 2 s_i (h_i + sum_{k != i} J_ik s_k).

    J_ii is left out of the sum since a flip cannot change it.
    """
    s = _spins(inst, s)
    if not 0 <= i < inst.n:
        raise IndexError(f"site {i} out of range for n={inst.n}")
    field = inst.h[i] + inst.J[i] @ s - inst.J[i, i] * s[i]
    return float(2.0 * s[i] * field)


def optimal_positions(Cinv: ArrayLike, r: ArrayLike, gamma: float, s: ArrayLike) -> PositionVector:
    """Minimum-risk positions for fixed spins: p = C^-1 r + gamma C^-1 s."""
    Cinv = np.asarray(Cinv, dtype=float)
    if isinstance(s, SpinConfig):
        s = s.s
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    return PositionVector(Cinv @ (r + gamma * s))


def portfolio_risk(C: ArrayLike, r: ArrayLike, gamma: float, p: ArrayLike, s: ArrayLike) -> float:
    """R(p) = 1/2 p'Cp - p'r - gamma p's."""
    C = np.asarray(C, dtype=float)
    if isinstance(p, PositionVector):
        p = p.p
    if isinstance(s, SpinConfig):
        s = s.s
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    return float(0.5 * (p @ C @ p) - p @ r - gamma * (p @ s))


def position_risk_offset(Cinv: ArrayLike, r: ArrayLike) -> float:
    """
    Spin-independent constant of the reduction to spins.

    For every s: portfolio_risk(optimal_positions(s), s) = gamma * spin_risk(s)
    + position_risk_offset, with offset = -1/2 r'C^-1 r.
    """
    r = np.asarray(r, dtype=float)
    return float(-0.5 * (r @ np.asarray(Cinv, dtype=float) @ r))
