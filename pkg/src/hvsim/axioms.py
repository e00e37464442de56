"""Executable checkers for the hidden-variable axioms, plus the fixed
two-qubit instance on which indifference and commutativity collide.

Each checker returns a replayable report: the witness carries the exact
inputs and offending entries, so re-evaluating it reproduces the recorded
violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import pi, sin

import numpy as np

from .core import (
    BLOCK_TOL_RAW,
    DensityOperator,
    PureState,
    born,
    density,
    detect_blocks,
    num_qubits,
    rotation_matrix,
)
from .theories import Theory, _coerce_theory, joint, marginals, stochastic


class NotSpacelike(ValueError):
    """The two unitaries touch a common qubit."""


class BadDecomposition(ValueError):
    """The proposed pure-state mixture does not reproduce the state."""


class IndifferenceRequired(ValueError):
    """The requested check is only meaningful for indifferent theories."""


@dataclass(frozen=True, eq=False)
class AxiomReport:
    axiom: str
    theory: Theory
    passed: bool
    worst_violation: float
    threshold: float
    witness: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# fixed instances


def phi_state(theta: float) -> PureState:
    """cos(theta)|0> + sin(theta)|1>."""
    return PureState(np.array([np.cos(theta), np.sin(theta)], dtype=complex))


def bell_state() -> PureState:
    amps = np.zeros(4, dtype=complex)
    amps[0] = amps[3] = 1 / np.sqrt(2)
    return PureState(amps)


def embedded_rotation(theta: float, qubit: int, ell: int) -> np.ndarray:
    """Rotation by theta on one qubit of an ell-qubit register."""
    U = np.eye(1, dtype=complex)
    for q in range(ell):
        U = np.kron(U, rotation_matrix(theta) if q == qubit else np.eye(2))
    return U


NOGO_TIGHT_BOUND = 0.5 * sin(pi / 8) ** 2          # ~ 0.073223
NOGO_LOOSE_BOUND = 0.25 - 0.5 * sin(pi / 8) ** 2   # ~ 0.176777


# ---------------------------------------------------------------------------
# helpers


def acting_qubit_support(U: np.ndarray, ell: int, tol: float = 1e-12) -> tuple:
    """Qubits on which a unitary acts nontrivially.

    A qubit is untouched when U factors as I_2 (x) V across it: no amplitude
    crosses the qubit's value and both value sectors carry the same matrix.
    """
    U = np.asarray(U)
    n = U.shape[0]
    touched = []
    tensor = U.reshape([2] * (2 * ell))
    for q in range(ell):
        block = np.moveaxis(tensor, (q, ell + q), (0, 1)).reshape(2, 2, -1)
        off = max(np.max(np.abs(block[0, 1])), np.max(np.abs(block[1, 0])))
        diag = np.max(np.abs(block[0, 0] - block[1, 1]))
        if off > tol or diag > tol:
            touched.append(q)
    return tuple(touched)


def perturbed_density(rho: DensityOperator, delta: float, rng) -> DensityOperator:
    """Entrywise perturbation of size <= delta, projected back to a state:
    re-Hermitized, eigenvalue-clipped, and trace-renormalized."""
    n = rho.dim
    noise = rng.uniform(-delta, delta, (n, n)) + 1j * rng.uniform(-delta, delta, (n, n))
    m = rho.matrix + noise
    m = (m + m.conj().T) / 2
    vals, vecs = np.linalg.eigh(m)
    vals = np.clip(vals, 0.0, None)
    m = (vecs * vals) @ vecs.conj().T
    return DensityOperator(m / np.trace(m).real)


def nearest_unitary(M: np.ndarray) -> np.ndarray:
    """Polar projection: the unitary factor of M."""
    u, _, vh = np.linalg.svd(M)
    return u @ vh


def perturbed_unitary(U: np.ndarray, delta: float, rng) -> np.ndarray:
    n = U.shape[0]
    noise = rng.uniform(-delta, delta, (n, n)) + 1j * rng.uniform(-delta, delta, (n, n))
    return nearest_unitary(U + noise)


# ---------------------------------------------------------------------------
# checkers


def check_indifference(theory, U: np.ndarray, rho, tol: float = 1e-10) -> AxiomReport:
    """Largest joint-matrix entry that crosses a block of U.

    Vacuously passes when U is a single block.
    """
    theory = _coerce_theory(theory)
    U = np.asarray(U, dtype=complex)
    P = joint(theory, rho, U)
    labels = detect_blocks(U, BLOCK_TOL_RAW).labels(U.shape[0])
    cross = labels[:, None] != labels[None, :]
    worst = float(np.max(np.abs(P[cross]))) if cross.any() else 0.0
    offenders = []
    if cross.any():
        j, i = np.unravel_index(np.argmax(np.abs(P) * cross), P.shape)
        offenders.append((int(i), int(j), float(P[j, i])))
    return AxiomReport(
        axiom="indifference",
        theory=theory,
        passed=worst <= tol,
        worst_violation=worst,
        threshold=tol,
        witness={"rho": density(rho).matrix, "unitary": U, "offenders": offenders},
    )


def _ordered_product(theory, rho, U_first: np.ndarray, U_second: np.ndarray) -> np.ndarray:
    """S(U1 rho U1^-1, U2) @ S(rho, U1): the two-step transition matrix."""
    rho_m = density(rho).matrix
    S1 = stochastic(theory, rho, U_first).matrix
    rho_mid = DensityOperator(U_first @ rho_m @ U_first.conj().T)
    S2 = stochastic(theory, rho_mid, U_second).matrix
    return S2 @ S1


def check_commutativity(theory, rho, U_A: np.ndarray, U_B: np.ndarray, tol: float = 1e-9) -> AxiomReport:
    """Compare the chained transition matrices for the two application
    orders of unitaries acting on disjoint qubit sets."""
    theory = _coerce_theory(theory)
    U_A = np.asarray(U_A, dtype=complex)
    U_B = np.asarray(U_B, dtype=complex)
    ell = num_qubits(U_A.shape[0])
    sup_a = acting_qubit_support(U_A, ell)
    sup_b = acting_qubit_support(U_B, ell)
    if set(sup_a) & set(sup_b):
        raise NotSpacelike(f"unitaries share qubits {sorted(set(sup_a) & set(sup_b))}")
    ab = _ordered_product(theory, rho, U_A, U_B)
    ba = _ordered_product(theory, rho, U_B, U_A)
    worst = float(np.max(np.abs(ab - ba)))
    return AxiomReport(
        axiom="commutativity",
        theory=theory,
        passed=worst <= tol,
        worst_violation=worst,
        threshold=tol,
        witness={"rho": density(rho).matrix, "U_A": U_A, "U_B": U_B},
    )


def nogo_witness(theory, tol: float = 1e-9) -> tuple[float, float]:
    """Probability of starting at |00> and ending at |10> on the entangled
    two-qubit instance, under both orders of the +-pi/8 rotations.

    For any indifferent theory one order is pinched below ~0.0732 while the
    other is forced above ~0.1768, so the two cannot agree.
    """
    theory = _coerce_theory(theory)
    if theory is Theory.PRODUCT:
        raise IndifferenceRequired("the witness relies on block confinement")
    psi = bell_state()
    U_A = embedded_rotation(pi / 8, 0, 2)
    U_B = embedded_rotation(-pi / 8, 1, 2)
    start = 0  # |00>
    end = 2    # |10>
    p0 = born(psi)[start]
    p_ab = float(p0 * _ordered_product(theory, psi, U_A, U_B)[end, start])
    p_ba = float(p0 * _ordered_product(theory, psi, U_B, U_A)[end, start])
    return p_ab, p_ba


def nogo_report(theory, tol: float = 1e-9) -> AxiomReport:
    p_ab, p_ba = nogo_witness(theory, tol)
    ok = min(p_ab, p_ba) <= NOGO_TIGHT_BOUND + tol and max(p_ab, p_ba) >= NOGO_LOOSE_BOUND - tol
    gap = max(p_ab, p_ba) - min(p_ab, p_ba)
    return AxiomReport(
        axiom="nogo",
        theory=_coerce_theory(theory),
        passed=ok,
        worst_violation=float(gap),
        threshold=float(NOGO_LOOSE_BOUND - NOGO_TIGHT_BOUND),
        witness={"p_ab": p_ab, "p_ba": p_ba,
                 "tight_bound": NOGO_TIGHT_BOUND, "loose_bound": NOGO_LOOSE_BOUND},
    )


def check_decomposition_invariance(theory, rho, decomposition, U: np.ndarray, tol: float = 1e-9) -> AxiomReport:
    """Compare S(rho, U) against the mixture of S over a pure-state
    decomposition of rho."""
    theory = _coerce_theory(theory)
    U = np.asarray(U, dtype=complex)
    rho_m = density(rho).matrix
    mix = np.zeros_like(rho_m)
    for weight, psi in decomposition:
        v = psi.amplitudes if isinstance(psi, PureState) else np.asarray(psi, dtype=complex)
        mix = mix + weight * np.outer(v, v.conj())
    if np.max(np.abs(mix - rho_m)) > 1e-9 * rho_m.shape[0]:
        raise BadDecomposition("mixture does not reproduce the state")
    S = stochastic(theory, rho, U).matrix
    S_mix = np.zeros_like(S)
    for weight, psi in decomposition:
        psi = psi if isinstance(psi, PureState) else PureState(np.asarray(psi, dtype=complex))
        S_mix = S_mix + weight * stochastic(theory, psi, U).matrix
    worst = float(np.max(np.abs(S - S_mix)))
    return AxiomReport(
        axiom="decomposition_invariance",
        theory=theory,
        passed=worst <= tol,
        worst_violation=worst,
        threshold=tol,
        witness={"rho": rho_m, "unitary": U,
                 "weights": [float(w) for w, _ in decomposition],
                 "states": [np.asarray(s.amplitudes if isinstance(s, PureState) else s)
                            for _, s in decomposition]},
    )


def check_robustness(
    theory,
    rho,
    U: np.ndarray,
    delta: float = 1e-6,
    trials: int = 10,
    seed: int = 0,
    threshold: float = 1e-3,
) -> AxiomReport:
    """Largest entrywise change of P under `trials` random entrywise
    perturbations of size <= delta.  States are projected back to valid
    densities, matrices to the nearest unitary.  Trial seeds derive from
    `seed` so reports are replayable."""
    theory = _coerce_theory(theory)
    U = np.asarray(U, dtype=complex)
    rho_d = density(rho)
    base = joint(theory, rho_d, U)
    worst = 0.0
    worst_trial = -1
    for trial in range(trials):
        rng = np.random.default_rng(seed + trial)
        rho_p = perturbed_density(rho_d, delta, rng)
        U_p = perturbed_unitary(U, delta, rng)
        change = float(np.max(np.abs(joint(theory, rho_p, U_p) - base)))
        if change > worst:
            worst = change
            worst_trial = trial
    return AxiomReport(
        axiom="robustness",
        theory=theory,
        passed=worst <= threshold,
        worst_violation=worst,
        threshold=threshold,
        witness={"rho": rho_d.matrix, "unitary": U, "delta": delta,
                 "seed": seed, "trials": trials, "worst_trial": worst_trial},
    )
