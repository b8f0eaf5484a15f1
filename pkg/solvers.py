"""
Solvers Module

Finds spin configurations for an IsingInstance:

- tap_solve: asynchronous TAP fixed-point iteration s_i <- sign(h_i + sum_k J_ik s_k)
- exhaustive_ground_state: the 2^n oracle
- local_field_baseline: s_i = sign(h_i), couplings ignored
- relaxed_solve: sign of the minimiser of the convex surrogate over real vectors

plus the relative-risk metric used to compare them.
"""

from dataclasses import dataclass
from typing import Literal, Optional, Tuple, Union

import numba
import numpy as np
from scipy import linalg

from margin_config import get_oracle_cap
from risk_model import (
    IsingInstance,
    NotConvexError,
    SpinConfig,
    flip_deltas,
    hessian_min_eigenvalue,
    spin_risk,
)

SeedLike = Union[int, np.random.SeedSequence]

LOCAL_MIN_TOLERANCE = 1e-10
TIE_TOLERANCE = 1e-12
ENUMERATION_CHUNK = 1 << 15


class OracleCapError(ValueError):
    """Portfolio too large for exhaustive enumeration."""


class UndefinedMetricError(ValueError):
    """Relative risk is only defined when both risks are negative."""

    def __init__(self, r_min: float, r_est: float):
        self.r_min = r_min
        self.r_est = r_est
        super().__init__(
            f"relative risk undefined for r_min={r_min!r}, r_est={r_est!r} "
            "(both must be negative)"
        )


@dataclass(frozen=True)
class TapSettings:
    """
    TAP iteration settings.

    max_sweeps defaults to 10 n + 100. Sites are visited in index order
    ("sequential") or in a fresh random permutation each sweep ("random").
    A zero local field keeps the current spin.
    """

    max_sweeps: Optional[int] = None
    update_order: Literal["sequential", "random"] = "random"
    seed: SeedLike = 0
    debug: bool = False

    def __post_init__(self):
        if self.max_sweeps is not None and self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if self.update_order not in ("sequential", "random"):
            raise ValueError(f"unknown update order {self.update_order!r}")

    def sweeps_for(self, n: int) -> int:
        return self.max_sweeps if self.max_sweeps is not None else 10 * n + 100


@dataclass(frozen=True)
class SolveReport:
    config: SpinConfig
    converged: bool
    sweeps_used: int
    flips: int
    is_local_min: bool


@numba.njit
def _tap_sweep(J_off, h, s, order, deltas):
    # In-place asynchronous sweep; J_off has a zero diagonal.
    flips = 0
    n = s.shape[0]
    for idx in range(order.shape[0]):
        i = order[idx]
        field = h[i]
        for k in range(n):
            field += J_off[i, k] * s[k]
        delta = 2.0 * s[i] * field
        if delta < 0.0:
            s[i] = -s[i]
            deltas[flips] = delta
            flips += 1
    return flips


def random_spins(n: int, seed: SeedLike) -> np.ndarray:
    """Uniformly random spin vector."""
    rng = np.random.default_rng(seed)
    return rng.choice(np.array([-1.0, 1.0]), size=n)


def is_local_minimum(inst: IsingInstance, s: np.ndarray, tolerance: float = LOCAL_MIN_TOLERANCE) -> bool:
    """True when no single flip lowers the risk by more than `tolerance`."""
    return bool(np.all(flip_deltas(inst, s) >= -tolerance))


def tap_solve(inst: IsingInstance, s0, settings: TapSettings = TapSettings()) -> SolveReport:
    """
    Iterate the TAP equation to a fixed point.

    Each accepted update flips spin i exactly when its flip lowers the risk, so
    the risk decreases strictly along the run. Stops after a sweep that changes
    nothing (converged) or after max_sweeps; non-convergence is reported.
    """
    if isinstance(s0, SpinConfig):
        s0 = s0.s
    s = np.array(s0, dtype=float)
    if s.shape != (inst.n,) or not np.all(np.abs(s) == 1.0):
        raise ValueError("initial configuration must be a length-n vector of -1/+1")

    # J_ii s_i s_i is constant on spins, so the local field leaves the diagonal out
    J_off = np.array(inst.J, dtype=float)
    np.fill_diagonal(J_off, 0.0)
    h = np.ascontiguousarray(inst.h, dtype=float)
    rng = np.random.default_rng(settings.seed)
    deltas = np.empty(inst.n, dtype=float)

    # Pattern: asynchronous updates. A site sees every flip made earlier in the same sweep.
    converged = False
    sweeps = 0
    total_flips = 0
    for _ in range(settings.sweeps_for(inst.n)):
        if settings.update_order == "random":
            order = rng.permutation(inst.n)
        else:
            order = np.arange(inst.n)
        before = spin_risk(inst, s) if settings.debug else 0.0
        flips = _tap_sweep(J_off, h, s, order.astype(np.int64), deltas)
        sweeps += 1
        total_flips += flips
        if settings.debug:
            assert np.all(deltas[:flips] < 0.0), "TAP accepted a non-improving flip"
            after = spin_risk(inst, s)
            assert after <= before + 1e-9 * max(1.0, abs(before)), "TAP sweep raised the risk"
        if flips == 0:
            converged = True
            break

    config = SpinConfig.evaluate(inst, s)
    return SolveReport(
        config=config,
        converged=converged,
        sweeps_used=sweeps,
        flips=total_flips,
        is_local_min=is_local_minimum(inst, s),
    )


def _check_cap(inst: IsingInstance, cap: Optional[int]) -> None:
    cap = get_oracle_cap() if cap is None else cap
    if inst.n > cap:
        raise OracleCapError(f"exhaustive search over 2^{inst.n} states exceeds the cap n <= {cap}")


def _spin_blocks(n: int):
    """Yield (first index, spin block) over all 2^n states in lexicographic order (-1 < +1)."""
    weights = np.left_shift(np.int64(1), np.arange(n - 1, -1, -1, dtype=np.int64))
    total = 1 << n
    for start in range(0, total, ENUMERATION_CHUNK):
        index = np.arange(start, min(start + ENUMERATION_CHUNK, total), dtype=np.int64)
        yield start, np.where((index[:, None] & weights) != 0, 1.0, -1.0)


def exhaustive_ground_state(inst: IsingInstance, cap: Optional[int] = None) -> SpinConfig:
    """
    Global minimum of spin_risk over all 2^n states.

    Ties (within rounding) go to the lexicographically smallest configuration,
    treating -1 < +1.

    Raises:
        OracleCapError: n above the cap (MARGIN_ORACLE_CAP, default 24)
    """
    _check_cap(inst, cap)
    J = np.asarray(inst.J, dtype=float)
    h = np.asarray(inst.h, dtype=float)

    # Blocks arrive in lexicographic order: within a block the first state inside the
    # tie band wins, and a later block must beat the incumbent by more than the band.
    best_risk = np.inf
    best_spins = None
    for _, block in _spin_blocks(inst.n):
        risks = -0.5 * np.einsum("ij,ij->i", block @ J, block) - block @ h
        low = float(risks.min())
        tolerance = TIE_TOLERANCE * max(1.0, abs(low))
        first = int(np.flatnonzero(risks <= low + tolerance)[0])
        if best_spins is None or risks[first] < best_risk - TIE_TOLERANCE * max(1.0, abs(best_risk)):
            best_risk = float(risks[first])
            best_spins = block[first].copy()
    return SpinConfig.evaluate(inst, best_spins)


def count_local_minima(inst: IsingInstance, cap: Optional[int] = None) -> Tuple[int, int]:
    """
    Count single-flip-stable configurations by enumeration.

    Returns:
        (number of local minima, number of distinct risk levels among them,
        risks equal within 1e-9 relative counted once)
    """
    _check_cap(inst, cap)
    J = np.asarray(inst.J, dtype=float)
    J_off = J.copy()
    np.fill_diagonal(J_off, 0.0)
    h = np.asarray(inst.h, dtype=float)

    count = 0
    levels = []
    for _, block in _spin_blocks(inst.n):
        fields = block @ J_off + h
        # stable: no single flip lowers the risk, i.e. s_i * field_i >= 0 at every site
        stable = np.all(block * fields >= -LOCAL_MIN_TOLERANCE, axis=1)
        if stable.any():
            chosen = block[stable]
            count += chosen.shape[0]
            risks = -0.5 * np.einsum("ij,ij->i", chosen @ J, chosen) - chosen @ h
            levels.extend(risks.tolist())

    distinct = 0
    previous = None
    for risk in sorted(levels):
        if previous is None or risk - previous > 1e-9 * max(1.0, abs(previous)):
            distinct += 1
            previous = risk
    return count, distinct


def local_field_baseline(inst: IsingInstance) -> SpinConfig:
    """s_i = sign(h_i) with sign(0) = +1."""
    return SpinConfig.evaluate(inst, np.where(inst.h >= 0.0, 1.0, -1.0))


def relaxed_solve(inst: IsingInstance) -> SpinConfig:
    """
    Round the real minimiser of the convex surrogate, x* = (I + gamma Delta)^-1 h,
    to spins (ties to +1).

    Raises:
        NotConvexError: I + gamma Delta is not positive definite at this margin
    """
    smallest = hessian_min_eigenvalue(inst.Delta, inst.gamma)
    if smallest <= 0.0:
        raise NotConvexError(
            f"I + gamma*Delta has eigenvalue {smallest:.3g} at gamma/gamma_c={inst.gamma_ratio:.3g}; "
            "the surrogate has no minimiser"
        )
    # symmetrized for assume_a="pos"
    hessian = np.eye(inst.n) + inst.gamma * 0.5 * (inst.Delta + inst.Delta.T)
    relaxed = linalg.solve(hessian, inst.h, assume_a="pos")
    return SpinConfig.evaluate(inst, np.where(relaxed >= 0.0, 1.0, -1.0))


def relative_risk(r_min: float, r_est: float) -> float:
    """
    Ground-state risk divided by estimated risk: 1 at the optimum, > 1 when the
    estimate is worse (less negative).

    Raises:
        UndefinedMetricError: r_est = 0 or either risk non-negative
    """
    if not (r_min < 0.0 and r_est < 0.0):
        raise UndefinedMetricError(r_min, r_est)
    return r_min / r_est
