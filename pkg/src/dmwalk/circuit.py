"""Circuit intermediate representation, text format, and single-qubit channel algebra.

Circuits are line oriented::

    # Bell pair with a noisy qubit
    qubits 2
    mode dm
    gate h 0
    gate cnot 0 1
    channel depol 1 p=0.3
    trace_out 1

Qubit 0 is the most significant (leftmost) bit of a basis index.  For one
qubit the vectorized density matrix is laid out on wires in the order
``(rho00, rho11, rho01, rho10)``; :data:`WIRE_ORDER` holds that ordering.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

OMEGA = np.exp(1j * math.pi / 4)
KRAUS_TOL = 1e-10
DEFAULT_MAX_QUBITS = 4

#: (ket bit, bra bit) carried by each local wire of a one-qubit fiber.
WIRE_ORDER = ((0, 0), (1, 1), (0, 1), (1, 0))

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

U1_MATRIX = np.array([[1, 0], [0, OMEGA]], dtype=complex)
U2_MATRIX = np.array([[1j, 1], [1, 1j]], dtype=complex) / math.sqrt(2)
H_MATRIX = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


class CircuitError(ValueError):
    """Invalid circuit text or circuit contents."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.message = message


class KrausNormalizationError(CircuitError):
    pass


# ---------------------------------------------------------------------------
# operations


@dataclass(frozen=True)
class CNOT:
    control: int
    target: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.control, self.target)


@dataclass(frozen=True)
class U1:
    qubit: int
    power: int = 1

    def __post_init__(self):
        object.__setattr__(self, "power", self.power % 8)

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)

    def matrix(self) -> np.ndarray:
        return np.diag([1.0, OMEGA**self.power]).astype(complex)


@dataclass(frozen=True)
class U2:
    qubit: int
    power: int = 1

    def __post_init__(self):
        # U2^4 = -I; the sign is a global phase and is dropped.
        object.__setattr__(self, "power", self.power % 4)

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)

    def matrix(self) -> np.ndarray:
        return np.linalg.matrix_power(U2_MATRIX, self.power)


@dataclass(frozen=True)
class H:
    qubit: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)

    def matrix(self) -> np.ndarray:
        return H_MATRIX.copy()


@dataclass(frozen=True)
class Depolarizing:
    qubit: int
    p: float

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)

    def kraus(self) -> list[np.ndarray]:
        return depolarizing_kraus(self.p)


@dataclass(frozen=True)
class Erasure:
    qubit: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)

    def kraus(self) -> list[np.ndarray]:
        return erasure_kraus()


@dataclass(frozen=True, eq=False)
class GeneralKraus:
    qubit: int
    operators: tuple

    def __post_init__(self):
        ops = tuple(np.array(k, dtype=complex).reshape(2, 2) for k in self.operators)
        for k in ops:
            k.setflags(write=False)
        object.__setattr__(self, "operators", ops)

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)

    def kraus(self) -> list[np.ndarray]:
        return [k.copy() for k in self.operators]

    def __eq__(self, other):
        if not isinstance(other, GeneralKraus) or other.qubit != self.qubit:
            return False
        if len(other.operators) != len(self.operators):
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.operators, other.operators))

    def __hash__(self):
        return hash((self.qubit, len(self.operators)))


@dataclass(frozen=True, eq=False)
class GeneralSuperop:
    """A one-qubit channel given directly as its 4x4 wire-ordered matrix."""

    qubit: int
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex).reshape(4, 4)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)

    def __eq__(self, other):
        return (
            isinstance(other, GeneralSuperop)
            and other.qubit == self.qubit
            and np.array_equal(other.matrix, self.matrix)
        )

    def __hash__(self):
        return hash(("superop", self.qubit))


@dataclass(frozen=True)
class TraceOut:
    qubit: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


Gate = Union[CNOT, U1, U2, H]
Channel = Union[Depolarizing, Erasure, GeneralKraus, GeneralSuperop]
CircuitOp = Union[Gate, Channel, TraceOut]

GATE_TYPES = (CNOT, U1, U2, H)
CHANNEL_TYPES = (Depolarizing, Erasure, GeneralKraus, GeneralSuperop)


def is_gate(op) -> bool:
    return isinstance(op, GATE_TYPES)


def is_channel(op) -> bool:
    return isinstance(op, CHANNEL_TYPES)


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    mode: str = "pure"
    ops: tuple = ()
    name: str = ""
    max_qubits: int = field(default=DEFAULT_MAX_QUBITS, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))

    @property
    def gates(self) -> list:
        return [op for op in self.ops if is_gate(op)]

    @property
    def channels(self) -> list:
        return [op for op in self.ops if is_channel(op)]

    @property
    def traced(self) -> list[int]:
        return [op.qubit for op in self.ops if isinstance(op, TraceOut)]


# ---------------------------------------------------------------------------
# channel algebra


def depolarizing_kraus(p: float) -> list[np.ndarray]:
    return [
        math.sqrt(1 - p) * I2,
        math.sqrt(p / 3) * SIGMA_X,
        math.sqrt(p / 3) * SIGMA_Y,
        math.sqrt(p / 3) * SIGMA_Z,
    ]


def erasure_kraus() -> list[np.ndarray]:
    return [
        np.array([[1, 0], [0, 0]], dtype=complex),
        np.array([[0, 1], [0, 0]], dtype=complex),
    ]


def kraus_defect(kraus: Sequence[np.ndarray]) -> float:
    """Max-norm distance of sum K^dag K from the identity."""
    total = sum(np.conj(k).T @ k for k in kraus)
    return float(np.max(np.abs(total - np.eye(total.shape[0]))))


def wire_vector(rho: np.ndarray) -> np.ndarray:
    """One-qubit density matrix to its wire-ordered vector."""
    return np.array([rho[a, b] for a, b in WIRE_ORDER], dtype=complex)


def wire_matrix(vec: np.ndarray) -> np.ndarray:
    rho = np.zeros((2, 2), dtype=complex)
    for value, (a, b) in zip(vec, WIRE_ORDER):
        rho[a, b] = value
    return rho


def kraus_to_superop(kraus: Sequence[np.ndarray], tol: float = KRAUS_TOL) -> np.ndarray:
    """4x4 matrix of ``rho -> sum_i K_i rho K_i^dag`` on wire-ordered vectors.

    Built column by column from the images of the four matrix units.
    """
    kraus = [np.asarray(k, dtype=complex) for k in kraus]
    if not kraus or any(k.shape != (2, 2) for k in kraus):
        raise CircuitError("Kraus operators must be a non-empty list of 2x2 matrices")
    defect = kraus_defect(kraus)
    if defect > tol:
        raise KrausNormalizationError(f"Kraus normalization violated (defect {defect:.3g})")
    out = np.zeros((4, 4), dtype=complex)
    for col, (a, b) in enumerate(WIRE_ORDER):
        unit = np.zeros((2, 2), dtype=complex)
        unit[a, b] = 1.0
        image = sum(k @ unit @ np.conj(k).T for k in kraus)
        out[:, col] = wire_vector(image)
    return out


def channel_superop(op) -> np.ndarray:
    if isinstance(op, GeneralSuperop):
        return np.array(op.matrix)
    return kraus_to_superop(op.kraus())


def superop_trace_defect(superop: np.ndarray) -> float:
    """How far the map is from trace preserving; zero for a valid channel.

    The trace of a wire vector is the sum of its two diagonal wires, so trace
    preservation means the first two rows sum to (1, 1, 0, 0).
    """
    return float(np.max(np.abs(superop[0] + superop[1] - np.array([1, 1, 0, 0]))))


# ---------------------------------------------------------------------------
# validation


def validate(spec: CircuitSpec) -> list[str]:
    diags: list[str] = []
    n = spec.n_qubits
    if not isinstance(n, (int, np.integer)) or n < 1:
        diags.append("qubit count must be a positive integer")
        return diags
    if n > spec.max_qubits:
        diags.append(f"qubit count {n} exceeds maximum {spec.max_qubits}")
    if spec.mode not in ("pure", "dm"):
        diags.append(f"unknown mode {spec.mode!r}")
    seen_trace = False
    traced: set[int] = set()
    for idx, op in enumerate(spec.ops):
        where = f"op {idx}"
        for q in op.qubits:
            if not 0 <= q < n:
                diags.append(f"{where}: qubit index out of range ({q})")
        if isinstance(op, CNOT) and op.control == op.target:
            diags.append(f"{where}: cnot control and target coincide")
        if is_channel(op) and spec.mode != "dm":
            diags.append(f"{where}: channel in pure mode")
        if isinstance(op, TraceOut):
            seen_trace = True
            if spec.mode != "dm":
                diags.append(f"{where}: trace_out requires dm mode")
            if op.qubit in traced:
                diags.append(f"{where}: qubit {op.qubit} traced twice")
            traced.add(op.qubit)
        elif seen_trace:
            diags.append(f"{where}: operations after trace_out")
        if isinstance(op, Depolarizing) and not 0.0 <= op.p <= 1.0:
            diags.append(f"{where}: p out of range ({op.p})")
        if isinstance(op, GeneralKraus):
            if kraus_defect(op.operators) > KRAUS_TOL:
                diags.append(f"{where}: Kraus normalization violated")
        if isinstance(op, GeneralSuperop):
            if superop_trace_defect(op.matrix) > KRAUS_TOL:
                diags.append(f"{where}: superoperator is not trace preserving")
    if traced and len(traced) >= n:
        diags.append("cannot trace out every qubit")
    return diags


# ---------------------------------------------------------------------------
# text format

_KV = re.compile(r"^([a-z_]+)=(.*)$")


def _matrix_from_json(data, shape) -> np.ndarray:
    arr = np.array(data, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError("complex entries must be [re, im] pairs")
    out = arr[..., 0] + 1j * arr[..., 1]
    return out.reshape(shape)


def load_kraus_json(data) -> list[np.ndarray]:
    """Kraus list from JSON: a list of 2x2 matrices whose entries are [re, im]."""
    return [_matrix_from_json(m, (2, 2)) for m in data]


def _complex_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m)]


def parse_circuit(
    text: str,
    base_dir: str | Path | None = None,
    max_qubits: int = DEFAULT_MAX_QUBITS,
) -> CircuitSpec:
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    n_qubits: int | None = None
    mode = "pure"
    name = ""
    ops: list = []
    op_lines: list[int] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        col0 = len(line) - len(line.lstrip()) + 1
        tokens = line.split()
        # column of each token, for error reporting
        cols = [m.start() + 1 for m in re.finditer(r"\S+", line)]
        head = tokens[0]

        def fail(msg, tok=0):
            raise CircuitError(msg, lineno, cols[tok] if tok < len(cols) else col0)

        def integer(tok):
            try:
                return int(tokens[tok])
            except (IndexError, ValueError):
                fail(f"expected integer, got {tokens[tok] if tok < len(tokens) else 'end of line'!r}", tok)

        def qubit(tok):
            q = integer(tok)
            if n_qubits is None:
                fail("'qubits' must be declared before operations", tok)
            if not 0 <= q < n_qubits:
                fail(f"qubit index out of range ({q} not in [0, {n_qubits}))", tok)
            return q

        def options(start):
            opts = {}
            for i in range(start, len(tokens)):
                m = _KV.match(tokens[i])
                if not m:
                    fail(f"unexpected token {tokens[i]!r}", i)
                opts[m.group(1)] = (m.group(2), i)
            return opts

        def load_matrix_option(opts, shape, what):
            if "file" in opts:
                value, tok = opts["file"]
                path = Path(value)
                if not path.is_absolute():
                    path = base / path
                try:
                    data = json.loads(path.read_text())
                except OSError as exc:
                    fail(f"cannot read {what} file {value!r}: {exc.strerror}", tok)
                except json.JSONDecodeError as exc:
                    fail(f"bad JSON in {what} file {value!r}: {exc}", tok)
            elif "data" in opts:
                value, tok = opts["data"]
                try:
                    data = json.loads(value)
                except json.JSONDecodeError as exc:
                    fail(f"bad inline {what} data: {exc}", tok)
            else:
                fail(f"{what} channel needs file=<path> or data=<json>")
            try:
                if shape == (2, 2):
                    return load_kraus_json(data)
                return _matrix_from_json(data, shape)
            except (ValueError, TypeError) as exc:
                fail(f"malformed {what} data: {exc}", tok)

        if head == "qubits":
            if len(tokens) != 2:
                fail("usage: qubits <n>")
            if ops:
                fail("'qubits' must precede operations")
            n_qubits = integer(1)
            if n_qubits < 1:
                fail("qubit count must be positive", 1)
            if n_qubits > max_qubits:
                fail(f"qubit count {n_qubits} exceeds maximum {max_qubits}", 1)
        elif head == "mode":
            if len(tokens) != 2 or tokens[1] not in ("pure", "dm"):
                fail("usage: mode pure|dm", min(1, len(tokens) - 1))
            mode = tokens[1]
        elif head == "name":
            name = line.strip()[len("name"):].strip()
        elif head == "gate":
            if len(tokens) < 2:
                fail("missing gate name")
            kind = tokens[1]
            if kind == "cnot":
                if len(tokens) != 4:
                    fail("usage: gate cnot <control> <target>")
                c, t = qubit(2), qubit(3)
                if c == t:
                    fail("cnot control and target coincide", 3)
                ops.append(CNOT(c, t))
            elif kind in ("u1", "u2"):
                if len(tokens) < 3:
                    fail(f"usage: gate {kind} <q> [pow=<m>]")
                q = qubit(2)
                opts = options(3)
                power = 1
                for key, (value, tok) in opts.items():
                    if key != "pow":
                        fail(f"unknown option {key!r}", tok)
                    try:
                        power = int(value)
                    except ValueError:
                        fail(f"pow must be an integer, got {value!r}", tok)
                ops.append(U1(q, power) if kind == "u1" else U2(q, power))
            elif kind == "h":
                if len(tokens) != 3:
                    fail("usage: gate h <q>")
                ops.append(H(qubit(2)))
            else:
                fail(f"unknown gate {kind!r}", 1)
            op_lines.append(lineno)
        elif head == "channel":
            if len(tokens) < 3:
                fail("usage: channel <kind> <q> [options]")
            kind = tokens[1]
            q = qubit(2)
            opts = options(3)
            if kind == "depol":
                if "p" not in opts:
                    fail("depol channel needs p=<float>")
                value, tok = opts["p"]
                try:
                    p = float(value)
                except ValueError:
                    fail(f"p must be a number, got {value!r}", tok)
                if not 0.0 <= p <= 1.0:
                    fail(f"p out of range ({p})", tok)
                ops.append(Depolarizing(q, p))
            elif kind == "erase":
                ops.append(Erasure(q))
            elif kind == "kraus":
                kraus = load_matrix_option(opts, (2, 2), "kraus")
                if kraus_defect(kraus) > KRAUS_TOL:
                    fail("Kraus normalization violated", 1)
                ops.append(GeneralKraus(q, tuple(kraus)))
            elif kind == "superop":
                ops.append(GeneralSuperop(q, load_matrix_option(opts, (4, 4), "superop")))
            else:
                fail(f"unknown channel {kind!r}", 1)
            if mode != "dm":
                fail("channel in pure mode (declare 'mode dm' first)", 0)
            op_lines.append(lineno)
        elif head == "trace_out":
            if len(tokens) != 2:
                fail("usage: trace_out <q>")
            ops.append(TraceOut(qubit(1)))
            op_lines.append(lineno)
        else:
            fail(f"unknown directive {head!r}")

    if n_qubits is None:
        raise CircuitError("missing 'qubits' declaration")
    spec = CircuitSpec(n_qubits, mode, tuple(ops), name, max_qubits=max_qubits)
    diags = validate(spec)
    if diags:
        line = None
        m = re.match(r"op (\d+)", diags[0])
        if m:
            line = op_lines[int(m.group(1))]
        raise CircuitError("; ".join(diags), line)
    return spec


def _fmt_float(x: float) -> str:
    return repr(float(x))


def format_circuit(spec: CircuitSpec) -> str:
    """Text form of ``spec``; ``parse_circuit(format_circuit(s)) == s``."""
    lines = []
    if spec.name:
        lines.append(f"name {spec.name}")
    lines += [f"qubits {spec.n_qubits}", f"mode {spec.mode}"]
    for op in spec.ops:
        if isinstance(op, CNOT):
            lines.append(f"gate cnot {op.control} {op.target}")
        elif isinstance(op, (U1, U2)):
            kind = "u1" if isinstance(op, U1) else "u2"
            suffix = "" if op.power == 1 else f" pow={op.power}"
            lines.append(f"gate {kind} {op.qubit}{suffix}")
        elif isinstance(op, H):
            lines.append(f"gate h {op.qubit}")
        elif isinstance(op, Depolarizing):
            lines.append(f"channel depol {op.qubit} p={_fmt_float(op.p)}")
        elif isinstance(op, Erasure):
            lines.append(f"channel erase {op.qubit}")
        elif isinstance(op, GeneralKraus):
            data = json.dumps([_complex_json(k) for k in op.operators], separators=(",", ":"))
            lines.append(f"channel kraus {op.qubit} data={data}")
        elif isinstance(op, GeneralSuperop):
            data = json.dumps(_complex_json(op.matrix), separators=(",", ":"))
            lines.append(f"channel superop {op.qubit} data={data}")
        elif isinstance(op, TraceOut):
            lines.append(f"trace_out {op.qubit}")
    return "\n".join(lines) + "\n"


def load_circuit(path: str | Path, max_qubits: int = DEFAULT_MAX_QUBITS) -> CircuitSpec:
    path = Path(path)
    return parse_circuit(path.read_text(), base_dir=path.parent, max_qubits=max_qubits)
