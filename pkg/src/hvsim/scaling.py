"""Alternating column/row rescaling of a nonnegative matrix to prescribed
marginals, and the product-form progress measure that certifies convergence.

The iteration alternates between normalizing every column i to sum to its
column target and every row j to its row target.  Zeros of the starting
matrix are invariant (entries only ever get multiplied), and for matrices
derived from a unitary with matching marginals the iteration converges to
the unique multiplier form alpha_i * beta_j * M0_ij, up to the global
rescaling freedom alpha -> c*alpha, beta -> beta/c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimMismatch, SCALE_TOL


class NotConverged(RuntimeError):
    """Marginal residual still above tolerance after max_iter sweeps."""


class ZeroLine(ValueError):
    """A column or row with positive target has no support to scale."""


class UnsupportedFlow(ValueError):
    """Progress-measure flow puts mass where the matrix is zero."""


@dataclass(frozen=True, eq=False)
class ScalingProblem:
    """weights[j, i] >= 0 with column targets indexed by i, row targets by j."""

    weights: np.ndarray
    col_targets: np.ndarray
    row_targets: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        c = np.asarray(self.col_targets, dtype=float)
        r = np.asarray(self.row_targets, dtype=float)
        n = c.size
        if w.shape != (n, n) or r.size != n:
            raise DimMismatch("weights and targets have inconsistent sizes")
        if w.min(initial=0.0) < 0 or c.min(initial=0.0) < 0 or r.min(initial=0.0) < 0:
            raise ValueError("weights and targets must be nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "col_targets", c)
        object.__setattr__(self, "row_targets", r)


@dataclass(frozen=True, eq=False)
class ScalingResult:
    matrix: np.ndarray           # [row j, col i], scaled to the targets
    col_multipliers: np.ndarray  # alpha_i, normalized so max alpha = 1
    row_multipliers: np.ndarray  # beta_j
    iterations: int              # full column+row sweeps
    residual: float
    trace: tuple | None = None   # matrices after each half pass, if kept


def sinkhorn(
    problem: ScalingProblem,
    tol: float = SCALE_TOL,
    max_iter: int = 100_000,
    keep_trace: bool = False,
) -> ScalingResult:
    """Scale `weights` until every column/row sum matches its target within
    tol.  Columns and rows with a zero target are zeroed and skipped.

    Multiplier products are accumulated in log space so that tiny marginals
    cannot underflow them; the reported multipliers are normalized to
    max(alpha) = 1 using the global rescaling freedom.
    """
    p = problem.col_targets
    q = problem.row_targets
    m = problem.weights.copy()
    active_c = p > 0
    active_r = q > 0
    m[:, ~active_c] = 0.0
    m[~active_r, :] = 0.0
    if np.any(active_c & (m.sum(axis=0) <= 0)):
        raise ZeroLine("a column with positive target has no usable support")
    if np.any(active_r & (m.sum(axis=1) <= 0)):
        raise ZeroLine("a row with positive target has no usable support")

    log_alpha = np.zeros(p.size)
    log_beta = np.zeros(q.size)
    trace = [] if keep_trace else None
    residual = np.inf
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        col_sums = m.sum(axis=0)
        ratio_c = np.ones_like(p)
        ratio_c[active_c] = p[active_c] / col_sums[active_c]
        m *= ratio_c[None, :]
        log_alpha[active_c] += np.log(ratio_c[active_c])
        if keep_trace:
            trace.append(m.copy())

        row_sums = m.sum(axis=1)
        ratio_r = np.ones_like(q)
        ratio_r[active_r] = q[active_r] / row_sums[active_r]
        m *= ratio_r[:, None]
        log_beta[active_r] += np.log(ratio_r[active_r])
        if keep_trace:
            trace.append(m.copy())

        residual = max(
            float(np.max(np.abs(m.sum(axis=0) - p))),
            float(np.max(np.abs(m.sum(axis=1) - q))),
        )
        if residual <= tol:
            break
    else:
        raise NotConverged(f"residual {residual:g} after {max_iter} sweeps")
    if residual > tol:
        raise NotConverged(f"residual {residual:g} after {sweeps} sweeps")

    shift = log_alpha[active_c].max() if active_c.any() else 0.0
    alpha = np.where(active_c, np.exp(log_alpha - shift), 0.0)
    beta = np.where(active_r, np.exp(log_beta + shift), 0.0)
    return ScalingResult(
        matrix=m,
        col_multipliers=alpha,
        row_multipliers=beta,
        iterations=sweeps,
        residual=residual,
        trace=tuple(trace) if keep_trace else None,
    )


def progress_measure(matrix: np.ndarray, flow: np.ndarray, tol: float = 1e-15) -> float:
    """Z = prod_ij matrix_ij ** flow_ij with the convention 0**0 = 1.

    `flow` must vanish wherever `matrix` does; both arrays share the
    [row, col] orientation.  Nondecreasing along a scaling run for any flow
    with the run's marginals.
    """
    m = np.asarray(matrix, dtype=float)
    f = np.asarray(flow, dtype=float)
    if m.shape != f.shape:
        raise DimMismatch("matrix and flow shapes differ")
    used = f > tol
    if np.any(used & (m <= 0.0)):
        raise UnsupportedFlow("flow is positive on a zero entry")
    if not used.any():
        return 1.0
    return float(np.exp(np.sum(f[used] * np.log(m[used]))))
