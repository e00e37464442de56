"""The four hidden-variable theories behind one interface.

Each theory maps a state and a unitary to an N x N joint matrix P whose
column i sums to the initial Born probability of basis state i and whose
row j sums to the final Born probability of j.  The stochastic transition
matrix follows by normalizing columns, with a small-epsilon mixing limit
standing in for columns of zero probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import flow as _flow
from . import scaling as _scaling
from .core import (
    BLOCK_TOL_RAW,
    DimMismatch,
    NonUnitary,
    SCALE_TOL,
    UNITARY_TOL,
    born,
    density,
    detect_blocks,
)

# Columns with less initial probability than this are resolved by the
# epsilon-mixing limit instead of direct division.
EPS_FLOOR = 1e-12
DEFAULT_EPS_SCHEDULE = (1e-4, 1e-5, 1e-6)
_EPS_STABLE_TOL = 1e-3


class Theory(str, Enum):
    PRODUCT = "pt"
    DIEKS = "dt"
    FLOW = "ft"
    SCHRODINGER = "st"


def _coerce_theory(theory) -> Theory:
    if isinstance(theory, Theory):
        return theory
    return Theory(str(theory).lower())


def marginals(rho, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Initial and final Born probability vectors of (rho, U)."""
    U = np.asarray(U, dtype=complex)
    p = born(rho)
    if U.shape != (p.size, p.size):
        raise DimMismatch("state and unitary dimensions differ")
    rho_m = density(rho).matrix
    q = np.clip(np.real(np.diag(U @ rho_m @ U.conj().T)), 0.0, None)
    return p, q


def _check_unitary(U: np.ndarray) -> None:
    err = np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0])))
    if err > UNITARY_TOL:
        raise NonUnitary(f"input matrix fails the unitarity check by {err:g}")


def product_joint(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Transitions ignore the initial value: P is the outer product of the
    final and initial marginals."""
    return np.outer(q, p)


def dieks_joint(p: np.ndarray, q: np.ndarray, U: np.ndarray, block_tol: float = BLOCK_TOL_RAW) -> np.ndarray:
    """Product theory applied separately inside each minimal block of U.

    Within block B the column for i gets the final marginals renormalized
    over B; a block with no final mass stays all-zero.
    """
    n = p.size
    P = np.zeros((n, n))
    for block in detect_blocks(U, block_tol).blocks:
        idx = np.asarray(block)
        q_b = q[idx]
        denom = q_b.sum()
        if denom <= 0.0:
            continue
        P[np.ix_(idx, idx)] = np.outer(q_b / denom, p[idx])
    return P


def flow_joint(p: np.ndarray, q: np.ndarray, U: np.ndarray) -> np.ndarray:
    net = _flow.FlowNetwork(cap_s=p, cap_mid=np.abs(U), cap_t=q)
    return _flow.lex_max_flow(net)


def scaling_joint(p: np.ndarray, q: np.ndarray, U: np.ndarray, tol: float = SCALE_TOL) -> np.ndarray:
    problem = _scaling.ScalingProblem(weights=np.abs(U), col_targets=p, row_targets=q)
    return _scaling.sinkhorn(problem, tol=tol).matrix


def joint(theory, rho, U: np.ndarray) -> np.ndarray:
    """Joint probabilities matrix P[final, initial] under the named theory."""
    theory = _coerce_theory(theory)
    U = np.asarray(U, dtype=complex)
    _check_unitary(U)
    p, q = marginals(rho, U)
    if theory is Theory.PRODUCT:
        return product_joint(p, q)
    if theory is Theory.DIEKS:
        return dieks_joint(p, q, U)
    if theory is Theory.FLOW:
        return flow_joint(p, q, U)
    return scaling_joint(p, q, U)


@dataclass(frozen=True, eq=False)
class StochasticResult:
    """Column-stochastic transition matrix with epsilon-limit bookkeeping.

    `eps_columns` lists columns that needed the mixing limit; an unstable
    column is one whose last two schedule iterates differ by more than 1e-3
    entrywise, reported together with the previous iterate rather than
    raised as an error.
    """

    matrix: np.ndarray
    eps_columns: tuple = ()
    unstable_columns: tuple = ()
    previous: np.ndarray | None = None

    @property
    def stable(self) -> bool:
        return not self.unstable_columns


def _mixed(rho, eps: float):
    rho_m = density(rho).matrix
    n = rho_m.shape[0]
    from .core import DensityOperator

    return DensityOperator((1 - eps) * rho_m + eps * np.eye(n) / n)


def stochastic(theory, rho, U: np.ndarray, eps_schedule=DEFAULT_EPS_SCHEDULE) -> StochasticResult:
    """Column-normalized transition matrix S[final, initial].

    Columns with initial probability above EPS_FLOOR are P divided by that
    probability.  The rest are evaluated at rho mixed with eps times the
    maximally mixed state, for each eps in the schedule, and the last
    iterate is returned; instability between the last two is flagged.
    """
    theory = _coerce_theory(theory)
    U = np.asarray(U, dtype=complex)
    P = joint(theory, rho, U)
    p, _ = marginals(rho, U)
    n = p.size
    S = np.zeros((n, n))
    supported = p > EPS_FLOOR
    S[:, supported] = P[:, supported] / p[supported]
    eps_cols = tuple(int(i) for i in np.flatnonzero(~supported))
    if not eps_cols:
        return StochasticResult(matrix=S)

    prev_cols = None
    last_cols = None
    for eps in eps_schedule:
        rho_eps = _mixed(rho, eps)
        P_eps = joint(theory, rho_eps, U)
        p_eps = born(rho_eps)
        cols = P_eps[:, list(eps_cols)] / p_eps[list(eps_cols)]
        prev_cols, last_cols = last_cols, cols
    S[:, list(eps_cols)] = last_cols
    unstable = ()
    previous = None
    if prev_cols is not None:
        drift = np.max(np.abs(last_cols - prev_cols), axis=0)
        bad = np.flatnonzero(drift > _EPS_STABLE_TOL)
        if bad.size:
            unstable = tuple(int(eps_cols[k]) for k in bad)
            previous = S.copy()
            previous[:, list(eps_cols)] = prev_cols
    return StochasticResult(
        matrix=S, eps_columns=eps_cols, unstable_columns=unstable, previous=previous
    )


def marginal_residual(P: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    """Largest deviation of P's column/row sums from the marginals."""
    return max(
        float(np.max(np.abs(P.sum(axis=0) - p))),
        float(np.max(np.abs(P.sum(axis=1) - q))),
    )
