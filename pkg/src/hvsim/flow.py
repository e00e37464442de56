"""Max-flow machinery on source / inputs / outputs / sink networks.

A network couples initial-state masses to final-state masses through middle
edges whose capacities are the moduli of unitary matrix entries.  For any
valid (state, unitary) pair one full unit of mass can be routed, and the
lexicographically maximal routing is the joint-probabilities matrix of the
flow theory.

Capacities are real and generally irrational, so the augmenting searches use
fattest-path selection and a residual-improvement cutoff instead of exact
integral termination.  When no augmenting path above the cutoff exists, the
remaining gap is below (number of edges) * cutoff.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .core import DimMismatch, FLOW_TOL, born, density

# Paths and cycles below this bottleneck are not worth pushing; keeps the
# aggregate value error under E * cutoff, well inside FLOW_TOL for N <= 256.
_CUTOFF = 1e-14


class Infeasible(RuntimeError):
    """Max flow fell short of the full mass: non-unitary input or numerical
    failure."""


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    """cap_s[i]: source->input i, cap_mid[j, i]: input i -> output j,
    cap_t[j]: output j -> sink."""

    cap_s: np.ndarray
    cap_mid: np.ndarray
    cap_t: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.cap_s, dtype=float)
        m = np.asarray(self.cap_mid, dtype=float)
        t = np.asarray(self.cap_t, dtype=float)
        n = s.size
        if m.shape != (n, n) or t.size != n:
            raise DimMismatch("capacity arrays have inconsistent sizes")
        if min(s.min(initial=0.0), m.min(initial=0.0), t.min(initial=0.0)) < 0:
            raise ValueError("capacities must be nonnegative")
        object.__setattr__(self, "cap_s", s)
        object.__setattr__(self, "cap_mid", m)
        object.__setattr__(self, "cap_t", t)

    @property
    def size(self) -> int:
        return self.cap_s.size


@dataclass(frozen=True, eq=False)
class MaxFlowResult:
    value: float
    flow: np.ndarray  # [final, initial]
    cut: frozenset    # source-side vertex labels: "s", ("in", i), ("out", j)
    cut_value: float


def build_network(rho, U: np.ndarray) -> FlowNetwork:
    """Network of a (state, unitary) pair: source edges carry the initial
    Born probabilities, middle edges |U[j, i]|, sink edges the final ones."""
    U = np.asarray(U, dtype=complex)
    p = born(rho)
    if U.shape != (p.size, p.size):
        raise DimMismatch("state and unitary dimensions differ")
    rho_m = density(rho).matrix
    q = np.clip(np.real(np.diag(U @ rho_m @ U.conj().T)), 0.0, None)
    return FlowNetwork(cap_s=p, cap_mid=np.abs(U), cap_t=q)


def cut_value(net: FlowNetwork, cut: frozenset) -> float:
    """Total capacity crossing from the source side to the rest."""
    n = net.size
    in_side = np.array([("in", i) in cut for i in range(n)])
    out_side = np.array([("out", j) in cut for j in range(n)])
    total = float(net.cap_s[~in_side].sum())
    total += float(net.cap_t[out_side].sum())
    total += float(net.cap_mid.T[np.ix_(in_side, ~out_side)].sum())
    return total


def debug_dump(net: FlowNetwork, flow: np.ndarray | None = None) -> dict:
    out = {
        "cap_s": net.cap_s.tolist(),
        "cap_mid": net.cap_mid.tolist(),
        "cap_t": net.cap_t.tolist(),
    }
    if flow is not None:
        out["flow"] = np.asarray(flow).tolist()
    return out


# ---------------------------------------------------------------------------
# internals: all arrays here are [input, output] ("io") oriented


def _greedy_fill(p, q, cap_io):
    """Feasible partial flow by sweeping entries in lexicographic order.
    Usually lands close to the lexicographically maximal flow, which keeps
    the later per-entry maximization cheap."""
    n = p.size
    f = np.zeros((n, n))
    fs = np.zeros(n)
    ft = np.zeros(n)
    for i in range(n):
        avail = p[i]
        if avail <= 0:
            continue
        room = np.minimum(cap_io[i], q - ft)
        np.clip(room, 0.0, None, out=room)
        prefix = np.cumsum(room)
        take = room - np.clip(prefix - avail, 0.0, None)
        np.clip(take, 0.0, None, out=take)
        f[i] = take
        ft += take
        fs[i] = take.sum()
    return f, fs, ft


def _fattest_path(p, q, cap_io, f, fs, ft):
    """Widest augmenting path from source to sink in the residual network.
    Returns (bottleneck, path) where path lists vertices s=-1, inputs i,
    outputs n+j, t=-2."""
    n = p.size
    best_in = np.minimum(p - fs, np.inf)  # via s->i only at start
    np.clip(best_in, 0.0, None, out=best_in)
    best_out = np.zeros(n)
    parent_in = np.full(n, -1, dtype=np.int64)  # -1 means from s
    parent_out = np.full(n, -1, dtype=np.int64)
    done_in = np.zeros(n, dtype=bool)
    done_out = np.zeros(n, dtype=bool)
    heap = [(-best_in[i], int(i)) for i in np.flatnonzero(best_in > 0)]
    heapq.heapify(heap)
    best_t = 0.0
    t_parent = -1
    while heap:
        negb, v = heapq.heappop(heap)
        b = -negb
        if v < n:  # input vertex
            if done_in[v] or b < best_in[v]:
                continue
            done_in[v] = True
            if best_t >= b:
                continue
            cand = np.minimum(b, cap_io[v] - f[v])
            improve = np.flatnonzero((cand > best_out) & ~done_out)
            for j in improve:
                best_out[j] = cand[j]
                parent_out[j] = v
                heapq.heappush(heap, (-cand[j], int(n + j)))
        else:  # output vertex
            j = v - n
            if done_out[j] or b < best_out[j]:
                continue
            done_out[j] = True
            room_t = min(b, q[j] - ft[j])
            if room_t > best_t:
                best_t = room_t
                t_parent = j
            cand = np.minimum(b, f[:, j])
            improve = np.flatnonzero((cand > best_in) & ~done_in)
            for i in improve:
                best_in[i] = cand[i]
                parent_in[i] = n + j
                heapq.heappush(heap, (-cand[i], int(i)))
    if best_t <= 0 or t_parent < 0:
        return 0.0, None
    path = [-2, n + t_parent]
    v = n + t_parent
    while True:
        if v >= n:
            v = int(parent_out[v - n])
        else:
            v = int(parent_in[v])
            if v == -1:
                path.append(-1)
                break
        path.append(v)
    path.reverse()
    return best_t, path


def _apply_path(path, delta, f, fs, ft):
    n = fs.size
    for a, b in zip(path, path[1:]):
        if a == -1:
            fs[b] += delta
        elif b == -2:
            ft[a - n] += delta
        elif a < n:
            f[a, b - n] += delta
        else:
            f[b, a - n] -= delta


def _max_flow_io(p, q, cap_io):
    f, fs, ft = _greedy_fill(p, q, cap_io)
    target = min(p.sum(), q.sum())
    guard = 200 * p.size + 2000
    for _ in range(guard):
        if fs.sum() >= target - _CUTOFF:
            break
        delta, path = _fattest_path(p, q, cap_io, f, fs, ft)
        if delta <= _CUTOFF or path is None:
            break
        _apply_path(path, delta, f, fs, ft)
    return f, fs, ft


def _residual_cut(p, q, cap_io, f, fs, ft, tol):
    """Source-side vertex set of the residual network."""
    n = p.size
    reach_in = (p - fs) > tol
    reach_out = np.zeros(n, dtype=bool)
    changed = True
    while changed:
        changed = False
        new_out = ((cap_io - f) > tol)[reach_in].any(axis=0) & ~reach_out
        if new_out.any():
            reach_out |= new_out
            changed = True
        new_in = (f > tol)[:, reach_out].any(axis=1) & ~reach_in
        if new_in.any():
            reach_in |= new_in
            changed = True
    labels = {"s"}
    labels.update(("in", int(i)) for i in np.flatnonzero(reach_in))
    labels.update(("out", int(j)) for j in np.flatnonzero(reach_out))
    return frozenset(labels)


def max_flow(net: FlowNetwork, tol: float = FLOW_TOL) -> MaxFlowResult:
    """Maximum flow with a min-cut certificate.

    Raises Infeasible when the value falls more than 10*tol short of the
    routable mass min(sum cap_s, sum cap_t): for networks built from a valid
    (state, unitary) pair the value always reaches that mass.
    """
    p, q, cap_io = net.cap_s, net.cap_t, net.cap_mid.T
    f, fs, ft = _max_flow_io(p, q, cap_io)
    value = float(fs.sum())
    mass = float(min(p.sum(), q.sum()))
    if value < mass - 10 * tol:
        raise Infeasible(f"max flow {value} < routable mass {mass}")
    cut = _residual_cut(p, q, cap_io, f, fs, ft, tol)
    return MaxFlowResult(value=value, flow=f.T.copy(), cut=cut, cut_value=cut_value(net, cut))


def _fattest_cycle(src_out, dst_in, cap_io, f, pinned, head):
    """Widest path from output `src_out` back to input `dst_in` through the
    bipartite residual graph, skipping pinned entries and the direct entry
    (dst_in, src_out) itself.  Bottleneck is capped at `head`."""
    n = f.shape[0]
    best_in = np.zeros(n)
    best_out = np.zeros(n)
    best_out[src_out] = head
    parent_in = np.full(n, -1, dtype=np.int64)
    parent_out = np.full(n, -1, dtype=np.int64)
    done_in = np.zeros(n, dtype=bool)
    done_out = np.zeros(n, dtype=bool)
    heap = [(-head, n + src_out)]
    while heap:
        negb, v = heapq.heappop(heap)
        b = -negb
        if b <= best_in[dst_in]:
            break
        if v >= n:
            j = v - n
            if done_out[j] or b < best_out[j]:
                continue
            done_out[j] = True
            cand = np.where(pinned[:, j], 0.0, np.minimum(b, f[:, j]))
            if j == src_out:
                cand[dst_in] = 0.0
            improve = np.flatnonzero((cand > best_in) & ~done_in)
            for i in improve:
                best_in[i] = cand[i]
                parent_in[i] = v
                heapq.heappush(heap, (-cand[i], int(i)))
        else:
            if done_in[v] or b < best_in[v]:
                continue
            if v == dst_in:
                break
            done_in[v] = True
            cand = np.where(pinned[v], 0.0, np.minimum(b, cap_io[v] - f[v]))
            if v == dst_in:
                cand[src_out] = 0.0
            improve = np.flatnonzero((cand > best_out) & ~done_out)
            for j in improve:
                best_out[j] = cand[j]
                parent_out[j] = v
                heapq.heappush(heap, (-cand[j], int(n + j)))
    delta = best_in[dst_in]
    if delta <= 0:
        return 0.0, None
    path = [dst_in]
    v = dst_in
    while True:
        v = int(parent_in[v]) if v < n else int(parent_out[v - n])
        path.append(v)
        if v == n + src_out:
            break
        if v == -1:
            return 0.0, None
    path.reverse()
    return float(delta), path


def _apply_cycle(path, delta, i, j, f):
    n = f.shape[0]
    f[i, j] += delta
    for a, b in zip(path, path[1:]):
        if a >= n:
            f[b, a - n] -= delta
        else:
            f[a, b - n] += delta


def _lex_max_flow_io(p, q, cap_io, tol):
    """Entrywise-maximal flow in lexicographic (input, output) order.

    Starts from any maximal flow and raises each entry in turn by augmenting
    cycles through the residual bipartite graph, freezing it afterwards.  An
    entry can only grow by draining unpinned flow from its own column and
    row, which gives a cheap upper bound that prunes almost all searches.
    """
    n = p.size
    f, fs, ft = _max_flow_io(p, q, cap_io)
    value = float(fs.sum())
    mass = float(min(p.sum(), q.sum()))
    if value < mass - 10 * max(tol, FLOW_TOL):
        raise Infeasible(f"max flow {value} < routable mass {mass}")
    pinned = np.zeros((n, n), dtype=bool)
    col_open = f.sum(axis=1)
    row_open = f.sum(axis=0)
    for i in range(n):
        if col_open[i] <= tol and not f[i].any():
            pinned[i] = True
            continue
        for j in range(n):
            if pinned[i, j]:
                continue
            fij = f[i, j]
            bound = min(cap_io[i, j] - fij, col_open[i] - fij, row_open[j] - fij)
            while bound > tol:
                head = cap_io[i, j] - f[i, j]
                delta, path = _fattest_cycle(j, i, cap_io, f, pinned, head)
                if delta <= max(_CUTOFF, tol * 1e-2):
                    break
                _apply_cycle(path, delta, i, j, f)
                fij = f[i, j]
                bound = min(cap_io[i, j] - fij, col_open[i] - fij, row_open[j] - fij)
            fij = f[i, j]
            pinned[i, j] = True
            col_open[i] -= fij
            row_open[j] -= fij
            if col_open[i] <= tol:
                rest = ~pinned[i]
                row_open[rest] -= f[i, rest]
                pinned[i] = True
                break
    return f


def lex_max_flow(net: FlowNetwork, tol: float = FLOW_TOL) -> np.ndarray:
    """Lexicographically maximal flow, returned as [final, initial].

    The result is the unique flow whose entries, visited column by column in
    basis order, each take the maximum value consistent with the earlier
    ones; the internal search order cannot move it beyond tol.
    """
    return _lex_max_flow_io(net.cap_s, net.cap_t, net.cap_mid.T, tol).T.copy()


def assert_in_polytope(net: FlowNetwork, flow: np.ndarray, tol: float = FLOW_TOL) -> None:
    """Check membership of a [final, initial] flow in the feasible set."""
    f_io = np.asarray(flow).T
    if np.min(f_io) < -tol:
        raise AssertionError("negative flow entry")
    if np.max(f_io - net.cap_mid.T) > tol:
        raise AssertionError("flow exceeds a middle capacity")
    if np.max(np.abs(f_io.sum(axis=1) - net.cap_s)) > tol:
        raise AssertionError("column sums deviate from source capacities")
    if np.max(np.abs(f_io.sum(axis=0) - net.cap_t)) > tol:
        raise AssertionError("row sums deviate from sink capacities")
