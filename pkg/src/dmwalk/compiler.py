"""Lowering of circuits to one merged scattering graph.

Every wire is a chain that starts at an input lead.  Time advances in
columns: in each column every live wire crosses one *join* bond into fresh
nodes, either a widget's input node or a single idle node.  Because every
catalog widget is reflectionless at k = pi/4, joining widgets bond-to-bond is
the same as letting each widget's output lead continue into the next one, so
the amplitude on a wire after ``L0`` columns is ``e^{i k L0}`` times the exact
matrix element.

Two integer quantities are tracked per wire: its ``length`` (hops actually
laid down) and its ``offset`` (extra sites requested by phase ops and the U2
through-bond).  ``length - L0 == offset`` is checked by the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .circuit import (
    CNOT,
    H_MATRIX,
    WIRE_ORDER,
    CircuitSpec,
    TraceOut,
    is_channel,
    validate,
)
from .oracle import cnot_permutation
from .synthesis import (
    ChannelPlan,
    CrossOp,
    GateSequence,
    PhaseOp,
    conjugate_sequence,
    plan_channel,
    synthesize_unitary,
)
from .widgets import IdealBlock, Port, WidgetGraph, u2_widget

DEFAULT_MAX_NODES = 2_000_000

_U2 = u2_widget()


class CompileError(ValueError):
    pass


@dataclass
class _Wire:
    tail: int
    pending: float = 1.0
    length: int = 0
    offset: int = 0


@dataclass(eq=False)
class ScatterGraph:
    widget: WidgetGraph
    mode: str
    n_qubits: int
    wire_map: dict
    start_port: int
    drain_ports: list
    rescale_log: list
    nominal_length: int
    wire_lengths: dict
    wire_offsets: dict
    wire_l0: dict
    discarded: frozenset = frozenset()
    traced: tuple = ()
    abstract: bool = False
    gate_count: int = 0
    channel_count: int = 0
    name: str = ""

    @property
    def rescale(self) -> float:
        return float(np.prod(self.rescale_log)) if self.rescale_log else 1.0

    @property
    def kept_wires(self) -> list:
        return [w for w in self.wire_map if w not in self.discarded]

    @property
    def n_nodes(self) -> int:
        return self.widget.n_nodes

    def to_dict(self) -> dict:
        d = self.widget.to_dict()
        d.update(
            {
                "mode": self.mode,
                "qubits": self.n_qubits,
                "start_port": self.start_port,
                "wire_map": [[list(label), port] for label, port in self.wire_map.items()],
                "drain_ports": list(self.drain_ports),
                "rescale_log": list(self.rescale_log),
                "nominal_length": self.nominal_length,
                "discarded": sorted(list(w) for w in self.discarded),
                "traced": list(self.traced),
                "abstract": self.abstract,
            }
        )
        return d


class _Builder:
    def __init__(self, max_nodes: int):
        self.n = 0
        self.edges: list[tuple] = []
        self.in_ports: list[Port] = []
        self.out_ports: list[Port] = []
        self.blocks: list[IdealBlock] = []
        self.labels: dict[int, str] = {}
        self.wires: dict[tuple, _Wire] = {}
        self.finished: dict[tuple, int] = {}
        self.final: dict[tuple, tuple] = {}  # label -> (length, offset, L0 at termination)
        self.drains: list[int] = []
        self.L0 = 0
        self.max_nodes = max_nodes

    def node(self, label=None) -> int:
        if self.n >= self.max_nodes:
            raise CompileError(f"graph exceeds the node limit of {self.max_nodes}")
        v = self.n
        self.n += 1
        if label is not None:
            self.labels[v] = label
        return v

    def start_wire(self, label):
        v = self.node(label)
        self.in_ports.append(Port(v, 1.0, ("in",) + tuple(label)))
        self.wires[label] = _Wire(v)

    def _join(self, w: _Wire, v: int):
        """Bond the wire's tail to a fresh node ``v`` (or open a vacuum lead after full damping)."""
        if w.pending == 0.0:
            self.in_ports.append(Port(v, 1.0, ("vacuum",)))
        else:
            self.edges.append((w.tail, v, w.pending))
        w.pending = 1.0
        w.length += 1

    def idle(self, label, extra: int = 0):
        w = self.wires[label]
        v = self.node(label)
        self._join(w, v)
        for _ in range(extra):
            u = self.node(label)
            self.edges.append((v, u, 1.0))
            v = u
        w.tail = v
        w.length += extra
        w.offset += extra

    def u2(self, la, lb):
        wa, wb = self.wires[la], self.wires[lb]
        base = self.n
        for v in range(6):
            self.node(la if v in (0, 2, 3) else lb)
        self._join(wa, base + 0)
        self._join(wb, base + 1)
        for a, b, h in _U2.edges:
            self.edges.append((base + a, base + b, h))
        wa.tail, wb.tail = base + 3, base + 4
        for w in (wa, wb):
            w.length += 1
            w.offset += 1

    def ideal(self, labels, matrix):
        ins, outs = [], []
        for label in labels:
            v = self.node(label)
            self._join(self.wires[label], v)
            ins.append(v)
        for label in labels:
            outs.append(self.node(label))
        self.blocks.append(IdealBlock(tuple(ins), tuple(outs), matrix))
        for label, v in zip(labels, outs):
            self.wires[label].tail = v

    def damp(self, label, lam: float, drain_label):
        w = self.wires[label]
        v = self.node(label)
        self._join(w, v)
        mu = math.sqrt(max(0.0, 1.0 - lam * lam))
        self.drains.append(len(self.out_ports))
        self.out_ports.append(Port(v, mu, drain_label))
        w.tail = v
        w.pending = lam

    def end_column(self, touched: set):
        for label in self.wires:
            if label not in touched:
                self.idle(label)
        self.L0 += 1

    def relabel(self, mapping: dict):
        """Move wire states: the state on ``old`` continues as ``mapping[old]``."""
        moved = {mapping.get(label, label): w for label, w in self.wires.items()}
        self.wires = moved

    def terminate(self, label):
        w = self.wires.pop(label)
        self.finished[label] = len(self.out_ports)
        self.final[label] = (w.length, w.offset, self.L0)
        self.out_ports.append(Port(w.tail, w.pending, ("out",) + tuple(label)))
        return w

    # -- sequences ------------------------------------------------------

    def run_sequences(self, jobs):
        """Apply ``(labels, GateSequence)`` jobs in parallel columns."""
        ptr = [0] * len(jobs)
        while True:
            for f, (labels, seq) in enumerate(jobs):
                while ptr[f] < len(seq.ops) and isinstance(seq.ops[ptr[f]], CrossOp):
                    perm = seq.ops[ptr[f]].perm
                    self.relabel({labels[i]: labels[j] for i, j in enumerate(perm)})
                    ptr[f] += 1
            if all(ptr[f] >= len(seq.ops) for f, (_, seq) in enumerate(jobs)):
                return
            touched: set = set()
            for f, (labels, seq) in enumerate(jobs):
                local: set = set()
                while ptr[f] < len(seq.ops):
                    op = seq.ops[ptr[f]]
                    if isinstance(op, CrossOp):
                        break
                    wires = (op.wire,) if isinstance(op, PhaseOp) else op.wires
                    if local.intersection(wires):
                        break
                    local.update(wires)
                    if isinstance(op, PhaseOp):
                        self.idle(labels[op.wire], extra=op.m)
                    else:
                        self.u2(labels[op.wires[0]], labels[op.wires[1]])
                    ptr[f] += 1
                touched.update(labels[i] for i in local)
            self.end_column(touched)

    def finish(self, name: str) -> WidgetGraph:
        for label in list(self.wires):
            self.terminate(label)
        return WidgetGraph(
            self.n, tuple(self.edges), tuple(self.in_ports), tuple(self.out_ports),
            tuple(self.blocks), name, self.L0, dict(self.labels),
        )


def _with_bit(index: int, q: int, n: int, value: int) -> int:
    mask = 1 << (n - 1 - q)
    return (index | mask) if value else (index & ~mask)


def _pairs(q: int, n: int) -> list[tuple[int, int]]:
    """Basis-index pairs (bit q = 0, bit q = 1), in ascending order."""
    return [(i, i | (1 << (n - 1 - q))) for i in range(2**n) if not (i >> (n - 1 - q)) & 1]


def compile_circuit(
    spec: CircuitSpec,
    start: int = 0,
    ideal_blocks: bool = False,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> ScatterGraph:
    problems = validate(spec)
    if problems:
        raise CompileError("; ".join(problems))
    n = spec.n_qubits
    dm = spec.mode == "dm"
    b = _Builder(max_nodes)
    if dm:
        labels = [(i, j) for i in range(2**n) for j in range(2**n)]
        start_label = (start, start)
    else:
        labels = [(i,) for i in range(2**n)]
        start_label = (start,)
    for label in labels:
        b.start_wire(label)
    start_port = labels.index(start_label)

    rescale_log: list[float] = []
    discarded: set = set()
    traced: list[int] = []
    abstract = False
    cache: dict = {}

    def seq_for(op) -> GateSequence:
        key = (type(op).__name__, getattr(op, "power", None))
        if key not in cache:
            cache[key] = synthesize_unitary(op.matrix())
        return cache[key]

    for ch_index, op in enumerate(spec.ops):
        if isinstance(op, CNOT):
            perm = cnot_permutation(op.control, op.target, n)
            if dm:
                b.relabel({(i, j): (int(perm[i]), int(perm[j])) for i, j in b.wires})
            else:
                b.relabel({(i,): (int(perm[i]),) for (i,) in b.wires})
        elif isinstance(op, TraceOut):
            _trace_out(b, op.qubit, n, traced, discarded)
            traced.append(op.qubit)
        elif is_channel(op):
            plan = plan_channel(op, allow_ideal=ideal_blocks)
            abstract |= not plan.exact
            _channel(b, plan, op.qubit, n, ch_index)
            rescale_log.append(plan.rescale)
        else:
            seq = seq_for(op)
            if dm:
                conj = conjugate_sequence(seq)
                pairs = _pairs(op.qubit, n)
                # ket and bra fibers share wires, so they run one after the other
                b.run_sequences([(((i0, j), (i1, j)), seq) for i0, i1 in pairs for j in range(2**n)])
                b.run_sequences([(((i, j0), (i, j1)), conj) for j0, j1 in pairs for i in range(2**n)])
            else:
                b.run_sequences([(((i0,), (i1,)), seq) for i0, i1 in _pairs(op.qubit, n)])

    widget = b.finish(spec.name)
    out_base = len(widget.in_ports)
    wire_map = {label: out_base + idx for label, idx in sorted(b.finished.items())}
    return ScatterGraph(
        widget=widget,
        mode=spec.mode,
        n_qubits=n,
        wire_map=wire_map,
        start_port=start_port,
        drain_ports=[out_base + d for d in b.drains],
        rescale_log=rescale_log,
        nominal_length=b.L0,
        wire_lengths={label: f[0] for label, f in sorted(b.final.items())},
        wire_offsets={label: f[1] for label, f in sorted(b.final.items())},
        wire_l0={label: f[2] for label, f in sorted(b.final.items())},
        discarded=frozenset(discarded),
        traced=tuple(traced),
        abstract=abstract,
        gate_count=len(spec.gates),
        channel_count=len(spec.channels),
        name=spec.name,
    )


def _channel_fibers(q: int, n: int) -> list[list[tuple]]:
    """4-wire fibers of qubit ``q`` in (00, 11, 01, 10) order, one per rest-index pair."""
    fibers = []
    rest = [i for i in range(2**n) if not (i >> (n - 1 - q)) & 1]
    for i, j in product(rest, rest):
        fibers.append([(_with_bit(i, q, n, a), _with_bit(j, q, n, c)) for a, c in WIRE_ORDER])
    return fibers


def _channel(b: _Builder, plan: ChannelPlan, q: int, n: int, ch_index: int):
    fibers = _channel_fibers(q, n)
    if plan.exact:
        b.run_sequences([(tuple(f), plan.pre) for f in fibers])
    else:
        for f in fibers:
            b.ideal(f, plan.V.conj().T)
        b.end_column({label for f in fibers for label in f})
    touched = set()
    for f in fibers:
        for c, lam in enumerate(plan.lambdas):
            if lam < 1 - 1e-12:
                b.damp(f[c], float(lam), ("drain", ch_index) + tuple(f[c]))
                touched.add(f[c])
    if touched:
        b.end_column(touched)
    if plan.exact:
        b.run_sequences([(tuple(f), plan.post) for f in fibers])
    else:
        for f in fibers:
            b.ideal(f, plan.U)
        b.end_column({label for f in fibers for label in f})


def _trace_out(b: _Builder, q: int, n: int, traced: list, discarded: set):
    h_seq = synthesize_unitary(H_MATRIX)
    mask = 1 << (n - 1 - q)
    jobs = []
    for (i, j) in list(b.wires):
        if (i & mask) != (j & mask):
            _retire(b, (i, j), discarded)
        elif not i & mask:
            jobs.append((((i, j), (i | mask, j | mask)), h_seq))
    b.run_sequences(jobs)
    for (_, second), _ in jobs:
        _retire(b, second, discarded)


def _retire(b: _Builder, label, discarded: set):
    b.terminate(label)
    discarded.add(label)


# ---------------------------------------------------------------------------
# resources


@dataclass
class ResourceReport:
    n: int
    T: int
    fT: int
    f: float
    wires_formula_open: int
    nodes_formula_open: int
    wires_formula_purif: int
    nodes_formula_purif: int
    survival_lower_bound: float
    open_advantage: bool
    repetition_bound: int
    drain_bound: int
    wires_actual: int | None = None
    nodes_actual: int | None = None
    drains_actual: int | None = None
    node_constant: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def resource_formulas(n: int, T: int, fT: int) -> ResourceReport:
    """Closed-form graph sizes of the open-system and purification models."""
    if n < 1 or T < 0 or fT < 0:
        raise ValueError("need n >= 1 and non-negative gate and channel counts")
    dm_wires = 2 ** (2 * n)
    purif_wires = 2 ** (n + fT)
    return ResourceReport(
        n=n,
        T=T,
        fT=fT,
        f=fT / T if T else 0.0,
        wires_formula_open=dm_wires * (1 + fT),
        nodes_formula_open=dm_wires * (T + fT),
        wires_formula_purif=purif_wires,
        nodes_formula_purif=purif_wires * (T + fT),
        survival_lower_bound=max(0.25**fT, 0.5 ** (2 * n)),
        open_advantage=fT > n,
        repetition_bound=2 ** (2 * min(fT, n)),
        # each channel touches 2^{2n}/4 four-wire fibers with at most 4 damped wires each
        drain_bound=dm_wires * fT,
    )


def resources_for(n: int, T: int, f: float) -> ResourceReport:
    """Formulas from a gate count and noise fraction; ``fT`` is rounded to an integer."""
    if not 0.0 <= f <= 1.0:
        raise ValueError("noise fraction must lie in [0, 1]")
    return resource_formulas(n, T, int(round(f * T)))


def resource_report(spec: CircuitSpec, graph: ScatterGraph | None = None) -> ResourceReport:
    report = resource_formulas(spec.n_qubits, len(spec.gates), len(spec.channels))
    if graph is not None:
        report.wires_actual = len(graph.wire_map) + len(graph.drain_ports)
        report.nodes_actual = graph.n_nodes
        report.drains_actual = len(graph.drain_ports)
        if report.nodes_formula_open:
            report.node_constant = graph.n_nodes / report.nodes_formula_open
        report.notes.append("node counts use this package's widget constructions (crossings add no nodes)")
        if graph.abstract:
            report.notes.append("graph contains ideal blocks; node counts exclude their internals")
    return report


# ---------------------------------------------------------------------------
# DOT export


def _label_text(label) -> str:
    return ",".join(str(x) for x in label)


def export_dot(graph: ScatterGraph) -> str:
    """Deterministic DOT text: wires labeled by basis or DM element, drains drawn as red boxes."""
    w = graph.widget
    lines = [f'graph "{graph.name or "scatter"}" {{', "  rankdir=LR;", '  node [shape=point, width=0.08];']
    by_label: dict = {}
    for v in range(w.n_nodes):
        by_label.setdefault(w.node_labels.get(v), []).append(v)
    for label in sorted(by_label, key=lambda x: (x is None, x)):
        nodes = by_label[label]
        if label is None:
            lines += [f"  n{v};" for v in nodes]
            continue
        lines.append(f'  subgraph "cluster_{_label_text(label)}" {{')
        lines.append(f'    label="rho[{_label_text(label)}]";' if graph.mode == "dm" else f'    label="|{label[0]}>";')
        lines.append("    style=invis;")
        lines += [f"    n{v};" for v in nodes]
        lines.append("  }")
    for a, b, h in w.edges:
        attr = "" if h == 1.0 else f' [label="{h:.6g}"]'
        lines.append(f"  n{a} -- n{b}{attr};")
    for i, p in enumerate(w.in_ports):
        style = "bold" if i == graph.start_port else "dashed"
        lines.append(f'  in{i} [shape=none, label="in"]; in{i} -- n{p.node} [style={style}];')
    drains = set(graph.drain_ports)
    n_in = len(w.in_ports)
    port_label = {port: label for label, port in graph.wire_map.items()}
    for i, p in enumerate(w.out_ports):
        port = n_in + i
        hop = "" if p.hopping == 1.0 else f', label="{p.hopping:.6g}"'
        if port in drains:
            lines.append(f'  out{i} [shape=box, color=red, label="drain"]; n{p.node} -- out{i} [color=red{hop}];')
        else:
            label = port_label[port]
            style = "dotted" if label in graph.discarded else "solid"
            lines.append(
                f'  out{i} [shape=none, label="{_label_text(label)}"]; n{p.node} -- out{i} [style={style}{hop}];'
            )
    lines.append("}")
    return "\n".join(lines) + "\n"
