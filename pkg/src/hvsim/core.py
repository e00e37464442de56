"""States, gates, circuit steps, and block structure over a fixed computational basis.

Conventions used throughout the package:

* Basis indices are big-endian over qubits: qubit 0 is the most significant
  bit of the basis index, so ``|q0 q1 ... q_{l-1}>`` has index
  ``sum(q_k * 2**(l-1-k))``.
* Unitaries are plain numpy matrices with ``U[out, in]`` entries, so states
  evolve as ``U @ psi``.
* Every N x N "transition-shaped" array (joint matrices, stochastic
  matrices, capacities, flows) is stored as ``A[final, initial]``: columns
  are indexed by the initial basis state, rows by the final one.  Column
  sums then give initial-state marginals and row sums final-state ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

NORM_TOL = 1e-9
UNITARY_TOL = 1e-9
HERM_TOL = 1e-9
# Gate-compiled steps have exact zeros off-block; raw input matrices carry
# rounding noise, so block detection on them needs a small guard band.
BLOCK_TOL_RAW = 1e-12
FLOW_TOL = 1e-10
SCALE_TOL = 1e-10
THEORY_TOL = 1e-8


class DimMismatch(ValueError):
    """Operands act on different dimensions."""


class NonUnitary(ValueError):
    """A matrix that was required to be unitary is not, within UNITARY_TOL."""


class BadGate(ValueError):
    """A gate references qubits outside the register or is malformed."""


def num_qubits(dim: int) -> int:
    ell = dim.bit_length() - 1
    if dim <= 0 or (1 << ell) != dim:
        raise DimMismatch(f"dimension {dim} is not a power of two")
    return ell


def qubit_bit(index, qubit: int, ell: int):
    """Bit value of `qubit` in a (possibly vectorized) basis index."""
    return (index >> (ell - 1 - qubit)) & 1


def gather_bits(index, qubits: Sequence[int], ell: int):
    """Pack the listed qubits of a basis index into an integer, first qubit
    listed becoming the most significant bit of the result."""
    value = np.zeros_like(index) if isinstance(index, np.ndarray) else 0
    for q in qubits:
        value = (value << 1) | qubit_bit(index, q, ell)
    return value


def scatter_bits(value, qubits: Sequence[int], ell: int):
    """Inverse of gather_bits: spread an integer over the listed qubit
    positions of a basis index."""
    width = len(qubits)
    index = np.zeros_like(value) if isinstance(value, np.ndarray) else 0
    for pos, q in enumerate(qubits):
        bit = (value >> (width - 1 - pos)) & 1
        index = index | (bit << (ell - 1 - q))
    return index


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True, eq=False)
class PureState:
    """Unit-norm complex amplitude vector over the computational basis."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        object.__setattr__(self, "amplitudes", amps)
        num_qubits(amps.size)
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state norm**2 = {norm} deviates from 1 beyond {NORM_TOL}")

    @property
    def dim(self) -> int:
        return self.amplitudes.size


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, PSD, trace-one matrix over the computational basis."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimMismatch("density operator must be square")
        object.__setattr__(self, "matrix", m)
        num_qubits(m.shape[0])
        if np.max(np.abs(m - m.conj().T)) > HERM_TOL:
            raise ValueError("density operator is not Hermitian within tolerance")
        tr = complex(np.trace(m)).real
        if abs(tr - 1.0) > HERM_TOL * m.shape[0]:
            raise ValueError(f"trace {tr} deviates from 1")
        if np.min(np.linalg.eigvalsh(m)) < -HERM_TOL:
            raise ValueError("density operator has a negative eigenvalue beyond tolerance")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


State = Union[PureState, DensityOperator]


def pure(amplitudes) -> PureState:
    return PureState(np.asarray(amplitudes, dtype=complex))


def basis_state(index: int, dim: int) -> PureState:
    amps = np.zeros(dim, dtype=complex)
    amps[index] = 1.0
    return PureState(amps)


def density(state: State) -> DensityOperator:
    if isinstance(state, DensityOperator):
        return state
    v = state.amplitudes
    return DensityOperator(np.outer(v, v.conj()))


def born(state) -> np.ndarray:
    """Measurement probabilities in the computational basis."""
    if isinstance(state, PureState):
        p = np.abs(state.amplitudes) ** 2
    elif isinstance(state, DensityOperator):
        p = np.real(np.diag(state.matrix))
    else:
        arr = np.asarray(state)
        p = np.real(np.diag(arr)) if arr.ndim == 2 else np.abs(arr) ** 2
    return np.clip(p, 0.0, None)


# ---------------------------------------------------------------------------
# gates

# The vocabulary is fixed: Hadamard, real rotation, controlled-NOT, Toffoli,
# phase flip on a predicate, and classical truth-table oracles.  Universality
# of the choice is not this module's concern; raw-matrix steps cover the rest.


@dataclass(frozen=True)
class Hadamard:
    qubit: int


@dataclass(frozen=True)
class Rotation:
    """2x2 real rotation by theta: |0> -> cos|0> + sin|1>."""

    theta: float
    qubit: int


@dataclass(frozen=True)
class CNot:
    control: int
    target: int


@dataclass(frozen=True)
class Toffoli:
    control1: int
    control2: int
    target: int


@dataclass(frozen=True)
class PhaseFlip:
    """Flip the sign of basis states whose `qubits` value has table entry 1.

    `counts_query` marks flips whose predicate consults the search database,
    so that query accounting can separate them from plumbing.
    """

    qubits: tuple
    table: tuple
    counts_query: bool = False

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))
        object.__setattr__(self, "table", tuple(int(v) for v in self.table))
        if len(self.table) != 1 << len(self.qubits):
            raise BadGate("phase table length must be 2**len(qubits)")


@dataclass(frozen=True)
class OracleGate:
    """Reversible table lookup |y, z> -> |y, z xor table[y]>."""

    inputs: tuple
    outputs: tuple
    table: tuple
    counts_query: bool = False

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "table", tuple(int(v) for v in self.table))
        if len(self.table) != 1 << len(self.inputs):
            raise BadGate("oracle table length must be 2**len(inputs)")
        if set(self.inputs) & set(self.outputs):
            raise BadGate("oracle input and output qubits overlap")
        if self.table and max(self.table) >= 1 << len(self.outputs):
            raise BadGate("oracle table value does not fit the output register")


Gate = Union[Hadamard, Rotation, CNot, Toffoli, PhaseFlip, OracleGate]

# Index maps of these gates are XOR-based involutions, which keeps the
# permutation fast path below simple.
_CLASSICAL = (CNot, Toffoli, OracleGate)


def gate_qubits(gate: Gate) -> tuple:
    if isinstance(gate, (Hadamard, Rotation)):
        return (gate.qubit,)
    if isinstance(gate, CNot):
        return (gate.control, gate.target)
    if isinstance(gate, Toffoli):
        return (gate.control1, gate.control2, gate.target)
    if isinstance(gate, PhaseFlip):
        return gate.qubits
    return gate.inputs + gate.outputs


def _check_gate(gate: Gate, ell: int) -> None:
    qs = gate_qubits(gate)
    if len(set(qs)) != len(qs):
        raise BadGate(f"duplicate qubit in {gate}")
    for q in qs:
        if not 0 <= q < ell:
            raise BadGate(f"qubit {q} out of range for {ell}-qubit register")


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


_HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def _apply_gate(gate: Gate, arr: np.ndarray, ell: int) -> np.ndarray:
    """Apply one gate to an (N, batch) array of column vectors."""
    n = arr.shape[0]
    idx = np.arange(n)
    if isinstance(gate, (Hadamard, Rotation)):
        m = _HADAMARD if isinstance(gate, Hadamard) else rotation_matrix(gate.theta)
        stride = 1 << (ell - 1 - gate.qubit)
        i0 = idx[(idx & stride) == 0]
        i1 = i0 + stride
        a0, a1 = arr[i0], arr[i1]
        out = arr.copy()
        out[i0] = m[0, 0] * a0 + m[0, 1] * a1
        out[i1] = m[1, 0] * a0 + m[1, 1] * a1
        return out
    if isinstance(gate, PhaseFlip):
        flagged = np.asarray(gate.table)[gather_bits(idx, gate.qubits, ell)]
        sign = 1.0 - 2.0 * flagged
        return arr * sign[:, None]
    sigma = _gate_permutation(gate, idx, ell)
    out = np.empty_like(arr)
    out[sigma] = arr
    return out


def _gate_permutation(gate: Gate, idx: np.ndarray, ell: int) -> np.ndarray:
    if isinstance(gate, CNot):
        ctrl = qubit_bit(idx, gate.control, ell)
        return idx ^ (ctrl << (ell - 1 - gate.target))
    if isinstance(gate, Toffoli):
        both = qubit_bit(idx, gate.control1, ell) & qubit_bit(idx, gate.control2, ell)
        return idx ^ (both << (ell - 1 - gate.target))
    if isinstance(gate, OracleGate):
        y = gather_bits(idx, gate.inputs, ell)
        delta = np.asarray(gate.table, dtype=np.int64)[y]
        return idx ^ scatter_bits(delta, gate.outputs, ell)
    raise TypeError(f"not a classical gate: {gate}")


# ---------------------------------------------------------------------------
# steps and circuits


@dataclass(frozen=True, eq=False)
class UnitaryStep:
    """One time slice of a circuit: a gate list or a raw unitary matrix."""

    dim: int
    gates: tuple | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        ell = num_qubits(self.dim)
        if (self.gates is None) == (self.matrix is None):
            raise ValueError("a step is either a gate list or a raw matrix")
        if self.gates is not None:
            object.__setattr__(self, "gates", tuple(self.gates))
            for g in self.gates:
                _check_gate(g, ell)
        else:
            m = np.asarray(self.matrix, dtype=complex)
            if m.shape != (self.dim, self.dim):
                raise DimMismatch(f"matrix shape {m.shape} does not match dim {self.dim}")
            err = np.max(np.abs(m.conj().T @ m - np.eye(self.dim)))
            if err > UNITARY_TOL:
                raise NonUnitary(f"raw step fails the unitarity check by {err:g}")
            object.__setattr__(self, "matrix", m)

    @property
    def num_qubits(self) -> int:
        return num_qubits(self.dim)

    @property
    def query_count(self) -> int:
        if self.gates is None:
            return 0
        return sum(1 for g in self.gates if getattr(g, "counts_query", False))

    def touched_qubits(self) -> tuple:
        """Qubits mentioned by any gate (targets and controls alike); the
        step acts as the identity on the rest."""
        if self.gates is None:
            return tuple(range(self.num_qubits))
        qs: set = set()
        for g in self.gates:
            qs.update(gate_qubits(g))
        return tuple(sorted(qs))

    def permutation(self) -> np.ndarray | None:
        """Basis permutation implemented by the step, ignoring phases, when
        every gate is classical or a phase flip.  None otherwise."""
        if self.gates is None:
            return None
        idx = np.arange(self.dim)
        sigma = idx
        for g in self.gates:
            if isinstance(g, PhaseFlip):
                continue
            if not isinstance(g, _CLASSICAL):
                return None
            sigma = _gate_permutation(g, sigma, self.num_qubits)
        return sigma


def gate_step(ell: int, gates: Sequence[Gate]) -> UnitaryStep:
    return UnitaryStep(dim=1 << ell, gates=tuple(gates))


def matrix_step(matrix) -> UnitaryStep:
    m = np.asarray(matrix, dtype=complex)
    return UnitaryStep(dim=m.shape[0], matrix=m)


@dataclass(frozen=True, eq=False)
class CircuitSequence:
    """Ordered unitary slices sharing one register.  The slicing is part of
    the input: histories depend on it and no canonicalization is applied."""

    qubits: int
    steps: tuple

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        dim = 1 << self.qubits
        for step in self.steps:
            if step.dim != dim:
                raise DimMismatch("all steps must share the register dimension")

    @property
    def dim(self) -> int:
        return 1 << self.qubits

    def query_count(self) -> int:
        return sum(s.query_count for s in self.steps)


def apply_step(step: UnitaryStep, psi: np.ndarray) -> np.ndarray:
    """Evolve a bare amplitude vector through one step."""
    psi = np.asarray(psi, dtype=complex)
    if psi.size != step.dim:
        raise DimMismatch("state and step dimensions differ")
    if step.matrix is not None:
        return step.matrix @ psi
    arr = psi.reshape(-1, 1)
    ell = step.num_qubits
    for g in step.gates:
        arr = _apply_gate(g, arr, ell)
    return arr.reshape(-1)


def compile_step(step: UnitaryStep) -> np.ndarray:
    """Dense unitary matrix of a step.

    Gate-list steps are built by pushing the identity's columns through the
    gate maps, so their off-block zeros are exact.
    """
    if step.matrix is not None:
        return step.matrix.copy()
    arr = np.eye(step.dim, dtype=complex)
    ell = step.num_qubits
    for g in step.gates:
        arr = _apply_gate(g, arr, ell)
    return arr


@lru_cache(maxsize=512)
def compiled_on_support(gates: tuple, sub_qubits: tuple) -> np.ndarray:
    """Compile a gate list onto the sub-register of the qubits it touches.

    `sub_qubits` are the original qubit labels in ascending order; gates are
    re-indexed to positions within that list.  Valid because a step acts as
    the identity elsewhere, so it factors as (this matrix) x I.
    """
    pos = {q: k for k, q in enumerate(sub_qubits)}
    remapped = []
    for g in gates:
        if isinstance(g, Hadamard):
            remapped.append(Hadamard(pos[g.qubit]))
        elif isinstance(g, Rotation):
            remapped.append(Rotation(g.theta, pos[g.qubit]))
        elif isinstance(g, CNot):
            remapped.append(CNot(pos[g.control], pos[g.target]))
        elif isinstance(g, Toffoli):
            remapped.append(Toffoli(pos[g.control1], pos[g.control2], pos[g.target]))
        elif isinstance(g, PhaseFlip):
            remapped.append(PhaseFlip(tuple(pos[q] for q in g.qubits), g.table, g.counts_query))
        else:
            remapped.append(
                OracleGate(
                    tuple(pos[q] for q in g.inputs),
                    tuple(pos[q] for q in g.outputs),
                    g.table,
                    g.counts_query,
                )
            )
    return compile_step(gate_step(len(sub_qubits), remapped))


def apply(U: np.ndarray, psi: PureState) -> PureState:
    """Uphi for a dense unitary; the result must stay normalized."""
    U = np.asarray(U, dtype=complex)
    if U.shape != (psi.dim, psi.dim):
        raise DimMismatch(f"matrix {U.shape} cannot act on dim-{psi.dim} state")
    out = U @ psi.amplitudes
    drift = abs(float(np.sum(np.abs(out) ** 2)) - 1.0)
    if drift > NORM_TOL:
        raise NonUnitary(f"application drifted the norm by {drift:g}")
    return PureState(out)


# ---------------------------------------------------------------------------
# block structure


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint index subsets covering the basis, between which the
    generating unitary never sends amplitude."""

    blocks: tuple

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))

    def block_of(self, index: int) -> tuple:
        for b in self.blocks:
            if index in b:
                return b
        raise KeyError(index)

    def labels(self, dim: int) -> np.ndarray:
        lab = np.full(dim, -1, dtype=np.int64)
        for k, b in enumerate(self.blocks):
            lab[list(b)] = k
        return lab


def detect_blocks(U: np.ndarray, tol: float = 0.0) -> BlockPartition:
    """Minimal blocks of a square matrix: connected components of the graph
    with an edge (i, j) whenever |U_ij| or |U_ji| exceeds tol."""
    U = np.asarray(U)
    n = U.shape[0]
    adj = np.abs(U) > tol
    adj = adj | adj.T
    np.fill_diagonal(adj, True)
    unvisited = np.ones(n, dtype=bool)
    blocks = []
    while True:
        seeds = np.flatnonzero(unvisited)
        if seeds.size == 0:
            break
        frontier = np.zeros(n, dtype=bool)
        frontier[seeds[0]] = True
        component = np.zeros(n, dtype=bool)
        while frontier.any():
            component |= frontier
            frontier = adj[frontier].any(axis=0) & ~component
        unvisited &= ~component
        blocks.append(tuple(np.flatnonzero(component)))
    blocks.sort(key=lambda b: b[0])
    return BlockPartition(tuple(blocks))
