"""Exact synthesis of wire unitaries and SVD-based channel plans.

Everything here works on *local* wires: a 2-wire fiber for single-qubit gates
or the 4-wire fiber (00, 11, 01, 10) of one qubit's density-matrix block.  A
:class:`GateSequence` lists primitive operations in time order; every
primitive is one catalog widget (or a relabeling) and the compiler places them
on the global graph.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .circuit import OMEGA, U2_MATRIX, channel_superop

UNITARY_TOL = 1e-10
SVD_CLUSTER_TOL = 1e-9
SNAP_TOL = 1e-9
BFS_DEPTH = 14


class NotExactlyRepresentable(ValueError):
    """Raised when a unitary has no exact word over the widget gate set."""

    def __init__(self, message: str, matrix=None):
        super().__init__(message)
        self.matrix = None if matrix is None else np.array(matrix)


# ---------------------------------------------------------------------------
# primitive operations


@dataclass(frozen=True)
class PhaseOp:
    """``m`` extra chain sites on one wire, multiplying it by ``e^{i pi m/4}``.

    ``pad`` marks global-phase padding (one PhaseOp per wire of the fiber)
    as opposed to a U1 power.
    """

    wire: int
    m: int
    pad: bool = False

    def __post_init__(self):
        object.__setattr__(self, "m", self.m % 8)


@dataclass(frozen=True)
class U2Op:
    """One U2 widget on wires ``(a, b)``: ``a`` feeds its first input port."""

    wires: tuple

    def __post_init__(self):
        object.__setattr__(self, "wires", tuple(self.wires))


@dataclass(frozen=True)
class CrossOp:
    """Relabeling: the amplitude on wire ``i`` moves to wire ``perm[i]``."""

    perm: tuple

    def __post_init__(self):
        object.__setattr__(self, "perm", tuple(self.perm))


def _op_matrix(op, dim: int) -> np.ndarray:
    m = np.eye(dim, dtype=complex)
    if isinstance(op, PhaseOp):
        m[op.wire, op.wire] = OMEGA**op.m
    elif isinstance(op, U2Op):
        a, b = op.wires
        m[np.ix_([a, b], [a, b])] = U2_MATRIX
    elif isinstance(op, CrossOp):
        m = np.zeros((dim, dim), dtype=complex)
        for i, j in enumerate(op.perm):
            m[j, i] = 1.0
    else:
        raise TypeError(f"unknown primitive {op!r}")
    return m


@dataclass(frozen=True)
class GateSequence:
    dim: int
    ops: tuple = ()
    phase: int = 0  # product of the non-pad ops is omega**phase times the target

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        object.__setattr__(self, "phase", self.phase % 8)

    def product(self, include_pads: bool = True) -> np.ndarray:
        out = np.eye(self.dim, dtype=complex)
        for op in self.ops:
            if isinstance(op, PhaseOp) and op.pad and not include_pads:
                continue
            out = _op_matrix(op, self.dim) @ out
        return out

    def target(self) -> np.ndarray:
        """The matrix this sequence realizes exactly (pads included)."""
        return self.product()

    def pad_nodes(self) -> int:
        return sum(op.m for op in self.ops if isinstance(op, PhaseOp) and op.pad)

    def relabel(self, wires) -> tuple:
        """Ops with local wires mapped through ``wires`` (used to embed a 2x2 block)."""
        wires = list(wires)
        out = []
        for op in self.ops:
            if isinstance(op, PhaseOp):
                out.append(PhaseOp(int(wires[op.wire]), op.m, op.pad))
            elif isinstance(op, U2Op):
                out.append(U2Op(tuple(int(wires[w]) for w in op.wires)))
            else:
                raise ValueError("cannot relabel a crossing into a larger fiber")
        return tuple(out)

    def __len__(self):
        return len(self.ops)


def _pads(dim: int, m: int, wires=None) -> tuple:
    m %= 8
    if m == 0:
        return ()
    wires = range(dim) if wires is None else wires
    return tuple(PhaseOp(w, m, pad=True) for w in wires)


# ---------------------------------------------------------------------------
# 2x2 exact synthesis


def _phase_key(m: np.ndarray) -> tuple:
    """Hashable form of ``m`` modulo a global phase."""
    flat = m.ravel()
    idx = int(np.argmax(np.abs(flat) > 1e-9))
    norm = flat / (flat[idx] / abs(flat[idx]))
    return tuple(np.round(np.concatenate([norm.real, norm.imag]), 8) + 0.0)


_WORDS: dict | None = None


def _word_table() -> dict:
    """Shortest words over {U1, U2}, keyed by product modulo global phase."""
    global _WORDS
    if _WORDS is not None:
        return _WORDS
    gens = (("u1", np.diag([1, OMEGA])), ("u2", U2_MATRIX))
    start = np.eye(2, dtype=complex)
    table = {_phase_key(start): ((), start)}
    # prefer the symmetric Hadamard word U1^2 U2 U1^2 = i H
    h_word = ("u1", "u1", "u2", "u1", "u1")
    h_mat = np.linalg.multi_dot([np.diag([1, OMEGA**2]), U2_MATRIX, np.diag([1, OMEGA**2])])
    table[_phase_key(h_mat)] = (h_word, h_mat)
    queue = deque([((), start)])
    while queue:
        word, mat = queue.popleft()
        if len(word) >= BFS_DEPTH:
            continue
        for name, g in gens:
            nxt = g @ mat
            key = _phase_key(nxt)
            if key not in table:
                entry = (word + (name,), nxt)
                table[key] = entry
                queue.append(entry)
    _WORDS = table
    return table


def _word_ops(word) -> list:
    ops = []
    run_name, run_len = None, 0
    for name in list(word) + [None]:
        if name == run_name:
            run_len += 1
            continue
        if run_name == "u1":
            ops.append(PhaseOp(1, run_len))
        elif run_name == "u2":
            ops.extend(U2Op((0, 1)) for _ in range(run_len))
        run_name, run_len = name, 1
    return ops


def _eighth_root(z: complex, matrix) -> int:
    m = int(round(math.atan2(z.imag, z.real) / (math.pi / 4))) % 8
    if abs(z - OMEGA**m) > 1e-9:
        raise NotExactlyRepresentable(f"global phase {z:.6g} is not an eighth root of unity", matrix)
    return m


def _synthesize_2x2(mat: np.ndarray) -> GateSequence:
    if np.allclose(mat, np.eye(2), atol=1e-12):
        return GateSequence(2)
    hit = _word_table().get(_phase_key(mat))
    if hit is None:
        raise NotExactlyRepresentable("no exact U1/U2 word found for 2x2 unitary", mat)
    word, prod = hit
    # prod = omega**phase * mat
    idx = np.unravel_index(np.argmax(np.abs(mat)), mat.shape)
    phase = _eighth_root(prod[idx] / mat[idx], mat)
    ops = _word_ops(word)
    return GateSequence(2, tuple(ops) + _pads(2, -phase), phase)


# ---------------------------------------------------------------------------
# block-decomposable 4x4 synthesis


def _synthesize_blocks(mat: np.ndarray) -> GateSequence:
    """Write ``mat`` as (2x2 blocks and single-wire phases) after a permutation."""
    dim = mat.shape[0]
    support = [tuple(np.flatnonzero(np.abs(mat[:, c]) > 1e-9)) for c in range(dim)]
    perm = [None] * dim
    blocks, singles = [], []
    groups: dict[tuple, list] = {}
    for c, s in enumerate(support):
        if len(s) == 1:
            perm[c] = int(s[0])
            singles.append((int(s[0]), c))
        elif len(s) == 2:
            groups.setdefault(s, []).append(c)
        else:
            raise NotExactlyRepresentable("column support larger than 2 is not block-decomposable", mat)
    for rows, cols in groups.items():
        if len(cols) != 2:
            raise NotExactlyRepresentable("unpaired 2-support column", mat)
        perm[cols[0]], perm[cols[1]] = (int(r) for r in rows)
        blocks.append((rows, cols))
    if sorted(perm) != list(range(dim)):
        raise NotExactlyRepresentable("columns do not map onto distinct rows", mat)

    ops = []
    if perm != list(range(dim)):
        ops.append(CrossOp(tuple(perm)))
    for row, col in singles:
        m = _eighth_root(mat[row, col], mat)
        if m:
            ops.append(PhaseOp(row, m))
    for rows, cols in blocks:
        sub = mat[np.ix_(rows, cols)]
        ops.extend(_synthesize_2x2(sub).relabel(rows))
    seq = GateSequence(dim, tuple(ops), 0)
    if not np.allclose(seq.product(), mat, atol=1e-9):
        raise NotExactlyRepresentable("block synthesis failed to reproduce the matrix", mat)
    return seq


def synthesize_unitary(mat) -> GateSequence:
    """Exact widget sequence for a 2x2 or block-decomposable 4x4 unitary.

    The realized product (pads included) equals ``mat``; ``phase`` records the
    global phase of the sequence before padding.
    """
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {mat.shape}")
    if np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0]))) > UNITARY_TOL:
        raise ValueError("matrix is not unitary")
    if mat.shape == (2, 2):
        return _synthesize_2x2(mat)
    return _synthesize_blocks(mat)


def conjugate_sequence(seq: GateSequence) -> GateSequence:
    """Sequence whose realized product is the entry-wise conjugate of ``seq``'s."""
    out = []
    i = 0
    ops = list(seq.ops)
    while i < len(ops):
        op = ops[i]
        if isinstance(op, U2Op):
            # conj(U2^m) = -U2^((4-m) mod 4): conjugate a maximal run at once
            j = i
            while j < len(ops) and isinstance(ops[j], U2Op) and ops[j].wires == op.wires:
                j += 1
            m = (j - i) % 4
            if m == 0:
                # U2^4 = -I is real
                out.extend(U2Op(op.wires) for _ in range(j - i))
            else:
                out.extend(U2Op(op.wires) for _ in range((4 - m) % 4 + 4 * ((j - i) // 4)))
                out.extend(PhaseOp(w, 4) for w in op.wires)
            i = j
            continue
        if isinstance(op, PhaseOp):
            out.append(PhaseOp(op.wire, -op.m, op.pad))
        else:
            out.append(op)
        i += 1
    return GateSequence(seq.dim, tuple(out), -seq.phase)


# ---------------------------------------------------------------------------
# Pauli map

PAULI_TRANSFORM = np.array(
    [
        [1, 1, 0, 0],
        [0, 0, 1, 1],
        [0, 0, 1j, -1j],
        [1, -1, 0, 0],
    ],
    dtype=complex,
) / math.sqrt(2)


def pauli_transform(v) -> np.ndarray:
    """Map a wire-ordered single-qubit vector to ``(a0, a1, a2, a3)/sqrt(2)``.

    With ``rho = (a0 I + a1 X + a2 Y + a3 Z)/2`` this is unitary, so
    ``|a1|^2 + |a2|^2 + |a3|^2`` is the (rescaled) Bloch-vector length.
    """
    return PAULI_TRANSFORM @ np.asarray(v, dtype=complex)


# ---------------------------------------------------------------------------
# channel plans


def _nice_candidates(dim: int) -> list[np.ndarray]:
    cands = []
    for a in range(dim):
        e = np.zeros(dim, dtype=complex)
        e[a] = 1
        cands.append(e)
    for a in range(dim):
        for b in range(a + 1, dim):
            for j in range(8):
                v = np.zeros(dim, dtype=complex)
                v[a] = 1 / math.sqrt(2)
                v[b] = OMEGA**j / math.sqrt(2)
                cands.append(v)
    return cands


def _snap(basis: np.ndarray, count: int, exclude: np.ndarray | None = None) -> np.ndarray | None:
    """Pick ``count`` orthonormal candidate vectors inside span(``basis``).

    ``basis`` has orthonormal columns.  Candidates must also be orthogonal to
    the columns of ``exclude``.  Returns None when no such basis exists.
    """
    dim = basis.shape[0]
    proj = basis @ basis.conj().T
    chosen: list[np.ndarray] = []
    for v in _nice_candidates(dim):
        if np.linalg.norm(proj @ v - v) > SNAP_TOL:
            continue
        if exclude is not None and np.linalg.norm(exclude.conj().T @ v) > SNAP_TOL:
            continue
        if any(abs(np.vdot(c, v)) > SNAP_TOL for c in chosen):
            continue
        chosen.append(v)
        if len(chosen) == count:
            break
    if len(chosen) < count:
        return None
    chosen.sort(key=lambda v: int(np.flatnonzero(np.abs(v) > 1e-12)[0]))
    return np.stack(chosen, axis=1)


def _complement(cols: np.ndarray, dim: int) -> np.ndarray:
    if cols.shape[1] == 0:
        return np.eye(dim, dtype=complex)
    q, _ = np.linalg.qr(np.hstack([cols, np.eye(dim, dtype=complex)]))
    return q[:, cols.shape[1] : dim]


@dataclass
class ChannelPlan:
    superop: np.ndarray
    U: np.ndarray
    V: np.ndarray
    lambdas: np.ndarray
    rescale: float
    pre: GateSequence | None = None
    post: GateSequence | None = None
    exact: bool = True
    notes: list = field(default_factory=list)

    @property
    def singular_values(self) -> np.ndarray:
        return self.lambdas * self.rescale

    def reconstruction_error(self) -> float:
        approx = self.U @ np.diag(self.singular_values) @ self.V.conj().T
        return float(np.max(np.abs(approx - self.superop)))

    def damped_wires(self) -> list[int]:
        return [i for i, lam in enumerate(self.lambdas) if lam < 1 - 1e-12]


def _snap_factors(o: np.ndarray):
    """SVD of ``o`` with both unitary factors snapped to synthesizable columns."""
    dim = o.shape[0]
    u_raw, s_raw, vh_raw = np.linalg.svd(o)
    s_raw = np.where(s_raw < SVD_CLUSTER_TOL, 0.0, s_raw)
    clusters: list[list[int]] = []
    for i, s in enumerate(s_raw):
        if clusters and abs(s_raw[clusters[-1][0]] - s) < SVD_CLUSTER_TOL:
            clusters[-1].append(i)
        else:
            clusters.append([i])
    u_cols, v_cols, svals = [], [], []
    zero = None
    for idx in clusters:
        s = float(np.mean(s_raw[idx]))
        if s == 0.0:
            zero = idx
            continue
        uc = _snap(u_raw[:, idx], len(idx))
        if uc is not None:
            vc = o.conj().T @ uc / s
            if not _all_nice(vc):
                uc = None
        if uc is None:
            vc = _snap(vh_raw[idx].conj().T, len(idx))
            if vc is None:
                return None
            uc = o @ vc / s
            if not _all_nice(uc):
                return None
        u_cols.append(uc)
        v_cols.append(vc)
        svals.extend([s] * len(idx))
    u = np.hstack(u_cols) if u_cols else np.zeros((dim, 0), dtype=complex)
    v = np.hstack(v_cols) if v_cols else np.zeros((dim, 0), dtype=complex)
    if zero is not None:
        uz = _snap(_complement(u, dim), len(zero), exclude=u)
        vz = _snap(_complement(v, dim), len(zero), exclude=v)
        if uz is None or vz is None:
            return None
        u = np.hstack([u, uz])
        v = np.hstack([v, vz])
        svals.extend([0.0] * len(zero))
    return u, np.array(svals), v


def _all_nice(cols: np.ndarray) -> bool:
    cands = _nice_candidates(cols.shape[0])
    for c in cols.T:
        if not any(abs(abs(np.vdot(v, c)) - 1) < SNAP_TOL for v in cands):
            return False
    return True


def plan_channel(op, allow_ideal: bool = False) -> ChannelPlan:
    """Factor a single-qubit channel as ``U diag(lambdas * rescale) V^dag``.

    ``pre`` realizes ``V^dag`` and ``post`` realizes ``U`` on the 4-wire
    fiber.  With ``allow_ideal`` the plan falls back to the raw numerical SVD
    when the factors are not exactly synthesizable; ``pre``/``post`` are then
    None and the compiler inserts ideal blocks.
    """
    o = channel_superop(op) if not isinstance(op, np.ndarray) else np.asarray(op, dtype=complex)
    snapped = _snap_factors(o)
    notes = []
    exact = True
    if snapped is None:
        if not allow_ideal:
            raise NotExactlyRepresentable("channel SVD factors have no exact widget realization", o)
        u, s, vh = np.linalg.svd(o)
        v = vh.conj().T
        exact = False
        notes.append("SVD factors realized as ideal blocks")
    else:
        u, s, v = snapped
    smax = float(s[0]) if s.size else 0.0
    rescale = smax if smax > 1 + 1e-10 else 1.0
    lambdas = np.clip(s / rescale, 0.0, 1.0)
    plan = ChannelPlan(o, u, v, lambdas, rescale, exact=exact, notes=notes)
    if exact:
        try:
            plan.pre = synthesize_unitary(v.conj().T)
            plan.post = synthesize_unitary(u)
        except NotExactlyRepresentable:
            if not allow_ideal:
                raise
            plan.pre = plan.post = None
            plan.exact = False
            plan.notes.append("SVD factors realized as ideal blocks")
    return plan
