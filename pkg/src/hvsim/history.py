"""Markov chains of hidden-variable transitions along a circuit, and seeded
trajectory sampling.

A chain pairs each circuit step with a transition rule: the stochastic
matrix of the chosen theory evaluated at the pre-step state, stored in a
support-restricted form.  Steps whose gates touch only a qubit subset are
evaluated per block (one block per assignment of the untouched qubits, with
unnormalized block marginals), which is exact for the indifferent theories
and keeps ten-qubit circuits tractable.  Transitions that marginalization
alone forces (a point-mass source or target) skip theory evaluation
entirely, and purely classical steps move the variable along their basis
permutation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flow as _flow
from . import scaling as _scaling
from .core import (
    BLOCK_TOL_RAW,
    CircuitSequence,
    UnitaryStep,
    apply_step,
    compiled_on_support,
    detect_blocks,
    gather_bits,
)
from .theories import Theory, _coerce_theory, dieks_joint

# Probability mass below this is treated as unreachable; transition entries
# are pruned at the same scale so sampled values always stay on support.
SUPPORT_TOL = 1e-14
_ENTRY_REL = 1e-12
_MAX_BLOCK_QUBITS = 11


@dataclass(frozen=True)
class History:
    """One sampled trajectory v_0 .. v_T of basis-state indices."""

    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))


class _Point:
    __slots__ = ("target",)

    def __init__(self, target: int):
        self.target = int(target)

    def draw(self, value: int, u: float) -> int:
        return self.target

    def column(self, value: int):
        return (self.target,), (1.0,)


class _Dist:
    """One distribution shared by every source value."""

    __slots__ = ("targets", "cum")

    def __init__(self, targets: np.ndarray, probs: np.ndarray):
        self.targets = targets
        cum = np.cumsum(probs)
        cum /= cum[-1]
        cum[-1] = 1.0
        self.cum = cum

    def draw(self, value: int, u: float) -> int:
        return int(self.targets[np.searchsorted(self.cum, u, side="right")])

    def column(self, value: int):
        probs = np.diff(self.cum, prepend=0.0)
        return tuple(int(t) for t in self.targets), tuple(probs)


class _Perm:
    __slots__ = ("mapping",)

    def __init__(self, mapping: dict):
        self.mapping = mapping

    def draw(self, value: int, u: float) -> int:
        return self.mapping[value]

    def column(self, value: int):
        return (self.mapping[value],), (1.0,)


class _Table:
    """Per-source distributions, one entry per supported value."""

    __slots__ = ("columns",)

    def __init__(self):
        self.columns: dict = {}

    def add(self, source: int, targets: np.ndarray, probs: np.ndarray):
        cum = np.cumsum(probs)
        cum /= cum[-1]
        cum[-1] = 1.0
        self.columns[int(source)] = (targets, cum)

    def draw(self, value: int, u: float) -> int:
        try:
            targets, cum = self.columns[value]
        except KeyError:
            raise RuntimeError(f"hidden variable reached unmodeled value {value}") from None
        return int(targets[np.searchsorted(cum, u, side="right")])

    def column(self, value: int):
        targets, cum = self.columns[value]
        probs = np.diff(cum, prepend=0.0)
        return tuple(int(t) for t in targets), tuple(probs)


@dataclass(frozen=True, eq=False)
class HistoryDistribution:
    """Per-step transition rules plus the Born marginals they reproduce.

    Immutable and safe to share; sampling is read-only.
    """

    qubits: int
    theory: Theory
    marginals: tuple   # born(psi_t) for t = 0..T
    rules: tuple

    @property
    def steps(self) -> int:
        return len(self.rules)

    def step_column(self, t: int, value: int):
        """Transition distribution out of `value` at step t, as
        (targets, probabilities).  Only supported values are modeled."""
        return self.rules[t].column(value)


def _clean_column(targets: np.ndarray, weights: np.ndarray):
    mass = float(weights.sum())
    keep = weights > max(SUPPORT_TOL, mass * _ENTRY_REL)
    if not keep.any():
        keep = weights == weights.max()
    return targets[keep], weights[keep]


def _block_groups(indices: np.ndarray, comp_qubits: tuple, ell: int) -> dict:
    if not comp_qubits:
        return {0: indices}
    keys = gather_bits(indices, comp_qubits, ell)
    groups: dict = {}
    for key, idx in zip(keys.tolist(), indices.tolist()):
        groups.setdefault(key, []).append(idx)
    return {k: np.asarray(v, dtype=np.int64) for k, v in groups.items()}


def _eval_block(theory: Theory, sub_u: np.ndarray, pb: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Joint matrix on one block with unnormalized marginals."""
    if theory is Theory.FLOW:
        return _flow._lex_max_flow_io(pb, qb, np.abs(sub_u).T, _flow.FLOW_TOL).T
    if theory is Theory.SCHRODINGER:
        mass = float(pb.sum())
        problem = _scaling.ScalingProblem(np.abs(sub_u), pb, qb)
        return _scaling.sinkhorn(problem, tol=max(1e-15, mass * 1e-10)).matrix
    if theory is Theory.DIEKS:
        return dieks_joint(pb, qb, sub_u, BLOCK_TOL_RAW)
    raise ValueError(f"no block evaluator for {theory}")


def _build_rule(step: UnitaryStep, p: np.ndarray, q: np.ndarray, theory: Theory):
    src = np.flatnonzero(p > SUPPORT_TOL)
    dst = np.flatnonzero(q > SUPPORT_TOL)
    if theory is Theory.PRODUCT:
        targets, weights = _clean_column(dst, q[dst])
        return _Dist(targets, weights)
    if dst.size == 1:
        return _Point(dst[0])
    if src.size == 1:
        targets, weights = _clean_column(dst, q[dst])
        return _Dist(targets, weights)
    sigma = step.permutation()
    if sigma is not None:
        return _Perm({int(v): int(sigma[v]) for v in src})

    table = _Table()
    union = np.union1d(src, dst)
    if step.matrix is not None:
        labels = detect_blocks(step.matrix, BLOCK_TOL_RAW).labels(step.dim)
        groups: dict = {}
        for v in union.tolist():
            groups.setdefault(int(labels[v]), []).append(v)
        groups = {k: np.asarray(vs, dtype=np.int64) for k, vs in groups.items()}
        sub_matrix = lambda idx: step.matrix[np.ix_(idx, idx)]
    else:
        ell = step.num_qubits
        touched = step.touched_qubits()
        if len(touched) > _MAX_BLOCK_QUBITS:
            raise ValueError(
                f"step touches {len(touched)} qubits with non-forced transitions; "
                "too large for dense theory evaluation"
            )
        comp = tuple(qb for qb in range(ell) if qb not in touched)
        compiled = compiled_on_support(step.gates, touched)
        groups = _block_groups(union, comp, ell)

        def sub_matrix(idx, _m=compiled, _t=touched, _l=ell):
            pos = gather_bits(idx, _t, _l)
            return _m[np.ix_(pos, pos)]

    for idx in groups.values():
        pb = p[idx]
        qb = q[idx]
        sources = np.flatnonzero(pb > SUPPORT_TOL)
        if sources.size == 0:
            continue
        if sources.size == 1:
            targets, weights = _clean_column(idx, qb)
            table.add(idx[sources[0]], targets, weights)
            continue
        P_block = _eval_block(theory, sub_matrix(idx), pb, qb)
        for c in sources:
            targets, weights = _clean_column(idx, P_block[:, c])
            table.add(idx[c], targets, weights)
    return table


def chain(circuit: CircuitSequence, theory) -> HistoryDistribution:
    """Transition rules of the theory along a circuit started in |0...0>.

    Every step's rule is the theory's stochastic matrix at the current pure
    state, block-factored over the qubits the step leaves untouched.
    """
    theory = _coerce_theory(theory)
    psi = np.zeros(circuit.dim, dtype=complex)
    psi[0] = 1.0
    probs = [np.abs(psi) ** 2]
    rules = []
    for step in circuit.steps:
        psi_next = apply_step(step, psi)
        p = probs[-1]
        q = np.abs(psi_next) ** 2
        rules.append(_build_rule(step, p, q, theory))
        probs.append(q)
        psi = psi_next
    return HistoryDistribution(
        qubits=circuit.qubits,
        theory=theory,
        marginals=tuple(probs),
        rules=tuple(rules),
    )


def sample(dist: HistoryDistribution, count: int, seed: int) -> list:
    """`count` independent trajectories; sample k uses generator seed+k, so
    any subset reproduces regardless of batching."""
    out = []
    steps = dist.steps
    for k in range(count):
        rng = np.random.default_rng(seed + k)
        us = rng.random(steps)
        value = 0
        values = [0]
        for t in range(steps):
            value = dist.rules[t].draw(value, us[t])
            values.append(value)
        out.append(History(tuple(values)))
    return out
