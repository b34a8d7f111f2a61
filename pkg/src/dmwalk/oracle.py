"""Dense reference simulator for circuits, used as ground truth for graph results."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import (
    CNOT,
    WIRE_ORDER,
    CircuitSpec,
    GeneralSuperop,
    TraceOut,
    is_channel,
)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_FLOOR = -1e-10


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    n: int
    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.shape != (2**self.n, 2**self.n):
            raise ValueError(f"expected {2**self.n}x{2**self.n} matrix, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def basis(cls, n: int, index: int = 0) -> "DensityMatrix":
        m = np.zeros((2**n, 2**n), dtype=complex)
        m[index, index] = 1.0
        return cls(n, m)

    @classmethod
    def from_state(cls, psi) -> "DensityMatrix":
        psi = np.asarray(psi, dtype=complex)
        n = int(round(math.log2(psi.size)))
        return cls(n, np.outer(psi, psi.conj()))

    def check(self) -> list[str]:
        """Violated physicality invariants (empty if valid)."""
        problems = []
        m = self.entries
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
            problems.append("not Hermitian")
        if abs(np.trace(m) - 1) > TRACE_TOL:
            problems.append("trace is not 1")
        if np.min(np.linalg.eigvalsh((m + m.conj().T) / 2)) < PSD_FLOOR:
            problems.append("not positive semidefinite")
        return problems

    def __getitem__(self, idx):
        return self.entries[idx]


def embed_single(u: np.ndarray, q: int, n: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(2**q), u), np.eye(2 ** (n - q - 1)))


def cnot_permutation(control: int, target: int, n: int) -> np.ndarray:
    """Basis index map of CNOT (qubit 0 is the most significant bit)."""
    idx = np.arange(2**n)
    cbit = 1 << (n - 1 - control)
    tbit = 1 << (n - 1 - target)
    return np.where(idx & cbit, idx ^ tbit, idx)


def gate_unitary(op, n: int) -> np.ndarray:
    if isinstance(op, CNOT):
        perm = cnot_permutation(op.control, op.target, n)
        u = np.zeros((2**n, 2**n), dtype=complex)
        u[perm, np.arange(2**n)] = 1.0
        return u
    return embed_single(op.matrix(), op.qubit, n)


def apply_gate(rho: np.ndarray, op, n: int) -> np.ndarray:
    u = gate_unitary(op, n)
    return u @ rho @ u.conj().T


def apply_kraus(rho: np.ndarray, kraus, q: int, n: int) -> np.ndarray:
    out = np.zeros_like(rho)
    for k in kraus:
        full = embed_single(k, q, n)
        out += full @ rho @ full.conj().T
    return out


def apply_superop(rho: np.ndarray, superop: np.ndarray, q: int, n: int) -> np.ndarray:
    """Apply a wire-ordered 4x4 channel matrix to qubit ``q`` of ``rho``."""
    t = rho.reshape((2,) * (2 * n))
    t = np.moveaxis(t, (q, n + q), (-2, -1))
    vec = np.stack([t[..., a, b] for a, b in WIRE_ORDER], axis=-1)
    vec = vec @ superop.T
    out = np.empty_like(t)
    for i, (a, b) in enumerate(WIRE_ORDER):
        out[..., a, b] = vec[..., i]
    out = np.moveaxis(out, (-2, -1), (q, n + q))
    return out.reshape(rho.shape)


def partial_trace(rho: DensityMatrix, q: int) -> DensityMatrix:
    n = rho.n
    if not 0 <= q < n:
        raise ValueError(f"qubit {q} out of range for {n} qubits")
    t = rho.entries.reshape((2,) * (2 * n))
    reduced = np.trace(t, axis1=q, axis2=n + q)
    d = 2 ** (n - 1)
    return DensityMatrix(n - 1, reduced.reshape(d, d))


def purity(rho) -> float:
    """Tr(rho^2) as the entry sum of rho_ij rho_ji."""
    m = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return float(np.real(np.sum(m * m.T)))


def simulate(spec: CircuitSpec, start: int = 0) -> DensityMatrix:
    n = spec.n_qubits
    rho = DensityMatrix.basis(n, start).entries.copy()
    traced = []
    for op in spec.ops:
        if isinstance(op, TraceOut):
            traced.append(op.qubit)
        elif isinstance(op, GeneralSuperop):
            rho = apply_superop(rho, np.asarray(op.matrix), op.qubit, n)
        elif is_channel(op):
            rho = apply_kraus(rho, op.kraus(), op.qubit, n)
        else:
            rho = apply_gate(rho, op, n)
    result = DensityMatrix(n, rho)
    # trace highest index first so remaining qubit numbers stay valid
    for q in sorted(traced, reverse=True):
        result = partial_trace(result, q)
    return result


def simulate_state(spec: CircuitSpec, start: int = 0) -> np.ndarray:
    """State vector of a gate-only circuit."""
    n = spec.n_qubits
    psi = np.zeros(2**n, dtype=complex)
    psi[start] = 1.0
    for op in spec.ops:
        if is_channel(op) or isinstance(op, TraceOut):
            raise ValueError("simulate_state handles gate-only circuits")
        psi = gate_unitary(op, n) @ psi
    return psi


# ---------------------------------------------------------------------------
# graph-result comparison


@dataclass
class Comparison:
    max_abs_err: float
    worst_wire: object
    phase_used: complex
    passed: bool
    tol: float

    def summary(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"{state}: max |amp - rho| = {self.max_abs_err:.3e} at wire {self.worst_wire} (tol {self.tol:g})"


def compare(result, rho: DensityMatrix, tol: float = 1e-8, undo_rescale: bool = True) -> Comparison:
    """Entrywise check of graph wire amplitudes against a reference density matrix.

    ``result`` is a :class:`~dmwalk.scattering.WireAmplitudes`.  Amplitudes are
    taken as already phase-normalized and rescale-corrected; with
    ``undo_rescale=False`` the compile-time rescale factor is divided back out
    to show what an uncorrected readout would give.
    """
    amps = dict(result.amps)
    if not undo_rescale and result.rescale_applied != 1.0:
        amps = {w: a / result.rescale_applied for w, a in amps.items()}
    n_kept = result.n_qubits - len(result.traced)
    if n_kept != rho.n:
        raise ValueError(f"dimension mismatch: graph has {n_kept} qubits, reference has {rho.n}")

    if result.mode == "pure":
        psi = np.array([amps[(i,)] for i in range(2**rho.n)])
        got = np.outer(psi, psi.conj())
        errs = {}
        for i in range(2**rho.n):
            for j in range(2**rho.n):
                errs[(i, j)] = abs(got[i, j] - rho.entries[i, j])
        worst = max(errs, key=errs.get)
        return Comparison(errs[worst], worst, result.global_phase, errs[worst] < tol, tol)

    scale = math.sqrt(2) ** len(result.traced)
    errs = {}
    for wire, value in amps.items():
        if wire in result.discarded:
            continue
        i, j = wire
        a, b = reduce_index(i, result.traced, result.n_qubits), reduce_index(j, result.traced, result.n_qubits)
        errs[wire] = abs(value * scale - rho.entries[a, b])
    expected_count = 4**rho.n
    if len(errs) != expected_count:
        raise ValueError(f"graph exposes {len(errs)} kept wires, expected {expected_count}")
    worst = max(errs, key=errs.get)
    return Comparison(errs[worst], worst, result.global_phase, errs[worst] < tol, tol)


def reduce_index(index: int, traced, n: int) -> int:
    """Drop the traced qubits' bits from a basis index."""
    out = 0
    for q in range(n):
        if q in traced:
            continue
        out = (out << 1) | ((index >> (n - 1 - q)) & 1)
    return out
