"""Tight-binding widget graphs and their scattering matrices.

A widget is a finite graph whose Hamiltonian is its (real, weighted)
adjacency matrix.  Semi-infinite unit-hopping leads attach at port nodes; a
port may carry its own first hopping ``h`` (the bond between the port node and
the first lead site), which is how the damping junction's lambda-dependent
bonds are expressed.

Scattering convention, at energy ``E = 2 cos k``:

* the wave ``e^{ikx}`` travels toward the graph on an input lead and away from
  it on an output lead, with ``x = 0`` at the port node;
* eliminating a lead gives the self-energy ``h**2 e^{ik}`` on its port node,
  and a unit incoming wave gives the source ``-2i h sin k``;
* the outgoing amplitude on port ``q`` is ``h_q psi[node_q]`` minus the
  incoming unit wave when ``q`` is the source port.

For ``h = 1`` these are exactly the node equations one writes by hand for a
widget with zero reflection.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .circuit import OMEGA, U1_MATRIX, U2_MATRIX

REFLECTION_TOL = 1e-10
K_OPERATING = math.pi / 4


class SingularSystemError(RuntimeError):
    """The lead-eliminated system has no unique solution (band edge or bound state)."""


class WidgetError(ValueError):
    pass


@dataclass(frozen=True)
class Port:
    node: int
    hopping: float = 1.0
    label: object = None


@dataclass(frozen=True, eq=False)
class IdealBlock:
    """Reflectionless scatterer given only by its transmission matrix.

    Amplitude reaching an ``inputs`` node leaves the graph there (outgoing lead)
    and is re-injected as incoming waves on the ``outputs`` nodes with weights
    ``matrix[out, in]``.
    """

    inputs: tuple
    outputs: tuple
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (len(self.outputs), len(self.inputs)):
            raise WidgetError(f"ideal block matrix shape {m.shape} does not match ports")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))


@dataclass(frozen=True, eq=False)
class WidgetGraph:
    n_nodes: int
    edges: tuple
    in_ports: tuple
    out_ports: tuple
    ideal_blocks: tuple = ()
    name: str = ""
    nominal_length: int = 0
    node_labels: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(a), int(b), float(h)) for a, b, h in self.edges))
        object.__setattr__(self, "in_ports", tuple(self.in_ports))
        object.__setattr__(self, "out_ports", tuple(self.out_ports))
        object.__setattr__(self, "ideal_blocks", tuple(self.ideal_blocks))

    @property
    def ports(self) -> tuple:
        return self.in_ports + self.out_ports

    @property
    def is_abstract(self) -> bool:
        return bool(self.ideal_blocks)

    def check(self) -> list[str]:
        problems = []
        for a, b, h in self.edges:
            if not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                problems.append(f"edge ({a}, {b}) references a missing node")
            if a == b:
                problems.append(f"self loop on node {a}")
            if h == 0 or not math.isfinite(h):
                problems.append(f"edge ({a}, {b}) has invalid hopping {h}")
        for kind, ports in (("in", self.in_ports), ("out", self.out_ports)):
            nodes = [p.node for p in ports]
            for p in ports:
                if not 0 <= p.node < self.n_nodes:
                    problems.append(f"{kind} port on missing node {p.node}")
            if kind == "in" and len(set(nodes)) != len(nodes):
                problems.append("input port nodes are not distinct")
        if self.out_ports and self.in_ports and not problems:
            reach = self._reachable({p.node for p in self.in_ports})
            for p in self.out_ports:
                if p.node not in reach:
                    problems.append(f"out port on node {p.node} is disconnected from the inputs")
        return problems

    def _reachable(self, start: set) -> set:
        adj: dict[int, set] = {}
        for a, b, _ in self.edges:
            adj.setdefault(a, set()).add(b)
            adj.setdefault(b, set()).add(a)
        for blk in self.ideal_blocks:
            for a in blk.inputs:
                adj.setdefault(a, set()).update(blk.outputs)
        seen = set(start)
        queue = deque(start)
        while queue:
            v = queue.popleft()
            for w in adj.get(v, ()):
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
        return seen

    def adjacency(self) -> sp.csr_matrix:
        n = self.n_nodes
        if not self.edges:
            return sp.csr_matrix((n, n))
        a, b, h = zip(*self.edges)
        rows = np.concatenate([a, b])
        cols = np.concatenate([b, a])
        vals = np.concatenate([h, h])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def with_hopping(self, edge_index: int, hopping: float) -> "WidgetGraph":
        """Copy with one edge re-weighted (used for fault injection)."""
        edges = list(self.edges)
        a, b, _ = edges[edge_index]
        edges[edge_index] = (a, b, hopping)
        return WidgetGraph(
            self.n_nodes, tuple(edges), self.in_ports, self.out_ports,
            self.ideal_blocks, self.name, self.nominal_length, dict(self.node_labels),
        )

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        def port(p: Port):
            d = {"node": p.node, "hopping": p.hopping}
            if p.label is not None:
                d["label"] = _label_json(p.label)
            return d

        return {
            "name": self.name,
            "nodes": self.n_nodes,
            "edges": [[a, b, h] for a, b, h in self.edges],
            "in_ports": [port(p) for p in self.in_ports],
            "out_ports": [port(p) for p in self.out_ports],
            "ideal_blocks": [
                {
                    "inputs": list(blk.inputs),
                    "outputs": list(blk.outputs),
                    "matrix": [[[float(z.real), float(z.imag)] for z in row] for row in blk.matrix],
                }
                for blk in self.ideal_blocks
            ],
            "nominal_length": self.nominal_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WidgetGraph":
        def port(p):
            label = p.get("label")
            return Port(int(p["node"]), float(p.get("hopping", 1.0)), _label_from_json(label))

        blocks = []
        for blk in d.get("ideal_blocks", []):
            m = np.array(blk["matrix"], dtype=float)
            blocks.append(IdealBlock(tuple(blk["inputs"]), tuple(blk["outputs"]), m[..., 0] + 1j * m[..., 1]))
        return cls(
            int(d["nodes"]),
            tuple((a, b, h) for a, b, h in d["edges"]),
            tuple(port(p) for p in d["in_ports"]),
            tuple(port(p) for p in d["out_ports"]),
            tuple(blocks),
            d.get("name", ""),
            int(d.get("nominal_length", 0)),
        )


def _label_json(label):
    if isinstance(label, tuple):
        return [_label_json(x) for x in label]
    return label


def _label_from_json(label):
    if isinstance(label, list):
        return tuple(_label_from_json(x) for x in label)
    return label


# ---------------------------------------------------------------------------
# solver


@dataclass(eq=False)
class SMatrix:
    k: float
    full: np.ndarray
    n_in: int
    internal: np.ndarray

    @property
    def r(self) -> np.ndarray:
        return self.full[: self.n_in, : self.n_in]

    @property
    def t(self) -> np.ndarray:
        return self.full[self.n_in :, : self.n_in]

    @property
    def reflection_norm(self) -> float:
        return float(np.max(np.abs(self.r))) if self.r.size else 0.0

    def column_norms(self) -> np.ndarray:
        """Total outgoing probability for each input port (1 when flux is conserved)."""
        return np.sum(np.abs(self.full[:, : self.n_in]) ** 2, axis=0)


def lead_system(w: WidgetGraph, k: float) -> sp.csc_matrix:
    """``E - H - Sigma`` with ideal-block couplings, as a sparse matrix."""
    n = w.n_nodes
    energy = 2 * math.cos(k)
    lead = np.exp(1j * k)
    diag = np.full(n, energy, dtype=complex)
    for p in w.ports:
        diag[p.node] -= p.hopping**2 * lead
    rows, cols, vals = [], [], []
    src = -2j * math.sin(k)
    for blk in w.ideal_blocks:
        for a in blk.inputs:
            diag[a] -= lead
        for bi, b in enumerate(blk.outputs):
            diag[b] -= lead
            for ai, a in enumerate(blk.inputs):
                if blk.matrix[bi, ai] != 0:
                    rows.append(b)
                    cols.append(a)
                    vals.append(-src * blk.matrix[bi, ai])
    system = sp.diags(diag, format="csc") - w.adjacency().tocsc()
    if vals:
        system = system + sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    return system.tocsc()


def solve_ports(w: WidgetGraph, k: float, sources: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Node amplitudes and outgoing port amplitudes for unit waves on ``sources``.

    Returns ``(psi, out)`` with ``psi[:, c]`` the node amplitudes for the
    c-th source and ``out[q, c]`` the outgoing amplitude on port ``q``.
    """
    if not 0 < k < math.pi:
        raise ValueError(f"momentum must lie in (0, pi), got {k}")
    ports = w.ports
    system = lead_system(w, k)
    rhs = np.zeros((w.n_nodes, len(sources)), dtype=complex)
    for c, p in enumerate(sources):
        rhs[ports[p].node, c] += -2j * math.sin(k) * ports[p].hopping
    try:
        lu = spla.splu(system)
        psi = lu.solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(f"lead-eliminated system is singular at k={k}: {exc}") from exc
    if not np.all(np.isfinite(psi)):
        raise SingularSystemError(f"non-finite solution at k={k}")
    residual = np.max(np.abs(system @ psi - rhs)) if psi.size else 0.0
    if residual > 1e-8:
        raise SingularSystemError(f"ill-conditioned system at k={k} (residual {residual:.2e})")
    out = np.empty((len(ports), len(sources)), dtype=complex)
    for q, p in enumerate(ports):
        out[q] = p.hopping * psi[p.node]
    for c, p in enumerate(sources):
        out[p, c] -= 1.0
    return psi, out


def solve_smatrix(w: WidgetGraph, k: float = K_OPERATING) -> SMatrix:
    problems = w.check()
    if problems:
        raise WidgetError("; ".join(problems))
    psi, full = solve_ports(w, k, range(len(w.ports)))
    return SMatrix(k, full, len(w.in_ports), psi[:, : len(w.in_ports)])


# ---------------------------------------------------------------------------
# catalog


def bare_wire(length: int = 0) -> WidgetGraph:
    if length < 0:
        raise WidgetError("wire length must be non-negative")
    edges = tuple((i, i + 1, 1.0) for i in range(length))
    return WidgetGraph(length + 1, edges, (Port(0),), (Port(length),), name=f"wire({length})", nominal_length=length)


def phase_widget(m: int) -> WidgetGraph:
    """Path ``m`` sites longer than the zero-length reference wire; phase ``e^{ikm}``."""
    if not 1 <= m <= 7:
        raise WidgetError(f"phase widget power must be in 1..7, got {m}")
    w = bare_wire(m)
    return WidgetGraph(w.n_nodes, w.edges, w.in_ports, w.out_ports, name=f"phase({m})", nominal_length=0)


def u1_widget(m: int = 1) -> WidgetGraph:
    """Two wires; the |1> wire is ``m`` sites longer, giving ``diag(1, e^{i pi m/4})`` at k = pi/4."""
    if not 1 <= m <= 7:
        raise WidgetError(f"U1 power must be in 1..7, got {m}")
    # node 0: |0> wire; nodes 1..m+1: |1> wire
    edges = tuple((1 + i, 2 + i, 1.0) for i in range(m))
    return WidgetGraph(m + 2, edges, (Port(0), Port(1)), (Port(0), Port(m + 1)), name=f"u1^{m}")


def u2_core_widget() -> WidgetGraph:
    """Six-node U2 layout read off the hand-written node equations, all hoppings 1.

    Nodes: 0 = in0, 1 = in1, 2 = bridge between the inputs, 3 = out0,
    4 = out1, 5 = bridge between the outputs.  At k = pi/4 this graph gives
    ``[[i, -1], [-1, i]]/sqrt(2)``, i.e. ``Z U2 Z``.
    """
    edges = ((0, 3, 1.0), (1, 4, 1.0), (0, 2, 1.0), (1, 2, 1.0), (3, 5, 1.0), (4, 5, 1.0))
    return WidgetGraph(6, edges, (Port(0), Port(1)), (Port(3), Port(4)), name="u2-core", nominal_length=1)


def u2_widget() -> WidgetGraph:
    """U2 widget: the six-node core with the two wire-1 bridge bonds set to -1.

    The sign flip is a Z gauge on wire 1, so the transmission is exactly U2 at
    k = pi/4 with zero reflection.
    """
    edges = ((0, 3, 1.0), (1, 4, 1.0), (0, 2, 1.0), (1, 2, -1.0), (3, 5, 1.0), (4, 5, -1.0))
    return WidgetGraph(6, edges, (Port(0), Port(1)), (Port(3), Port(4)), name="u2", nominal_length=1)


def crossing(perm: Sequence[int]) -> WidgetGraph:
    """Wire permutation: input wire ``i`` leaves on output ``perm[i]``; no internal bonds."""
    perm = tuple(int(x) for x in perm)
    if sorted(perm) != list(range(len(perm))):
        raise WidgetError(f"not a permutation: {perm}")
    inv = [0] * len(perm)
    for i, j in enumerate(perm):
        inv[j] = i
    return WidgetGraph(
        len(perm), (), tuple(Port(i) for i in range(len(perm))),
        tuple(Port(inv[j]) for j in range(len(perm))), name=f"crossing{perm}",
    )


def dlambda_widget(lam: float) -> WidgetGraph:
    """Damping junction: one node, input lead, kept lead with bond ``lam``, drain with ``sqrt(1-lam^2)``."""
    if not 0.0 <= lam <= 1.0:
        raise WidgetError(f"damping value must be in [0, 1], got {lam}")
    mu = math.sqrt(max(0.0, 1.0 - lam * lam))
    return WidgetGraph(
        1, (), (Port(0),), (Port(0, lam, "kept"), Port(0, mu, "drain")), name=f"D({lam:g})",
    )


def ideal_block(matrix) -> WidgetGraph:
    m = np.asarray(matrix, dtype=complex)
    n_out, n_in = m.shape
    ins = tuple(range(n_in))
    outs = tuple(range(n_in, n_in + n_out))
    return WidgetGraph(
        n_in + n_out, (), tuple(Port(a) for a in ins), tuple(Port(b) for b in outs),
        (IdealBlock(ins, outs, m),), name="ideal",
    )


_CATALOG = {
    "wire": bare_wire,
    "phase": phase_widget,
    "u1": u1_widget,
    "u2": u2_widget,
    "u2_core": u2_core_widget,
    "crossing": crossing,
    "dlambda": dlambda_widget,
    "ideal": ideal_block,
}


def catalog(name: str, *args, **kwargs) -> WidgetGraph:
    try:
        ctor = _CATALOG[name]
    except KeyError:
        raise WidgetError(f"unknown widget {name!r}; known: {', '.join(sorted(_CATALOG))}") from None
    return ctor(*args, **kwargs)


def dlambda_matrix(lam: float) -> np.ndarray:
    return np.array([[lam], [math.sqrt(max(0.0, 1 - lam * lam))]], dtype=complex)


def catalog_targets() -> list[tuple[str, WidgetGraph, np.ndarray, bool]]:
    """(name, widget, ideal transmission at k = pi/4, k-independent?) for the standard catalog."""
    rows = [
        ("wire(0)", bare_wire(0), np.eye(1), False),
        ("u2", u2_widget(), U2_MATRIX, False),
        ("crossing(1,0)", crossing((1, 0)), np.array([[0, 1], [1, 0]]), True),
        ("crossing(2,0,1)", crossing((2, 0, 1)), np.eye(3)[[1, 2, 0]], True),
    ]
    for m in range(1, 8):
        rows.append((f"phase({m})", phase_widget(m), np.array([[OMEGA**m]]), False))
        rows.append((f"u1^{m}", u1_widget(m), np.linalg.matrix_power(U1_MATRIX, m), False))
    for lam in (0.0, 0.3, 1 / math.sqrt(2), 0.6, 1.0):
        rows.append((f"D({lam:.4g})", dlambda_widget(lam), dlambda_matrix(lam), True))
    return [(n, w, np.asarray(t, dtype=complex), kind) for n, w, t, kind in rows]


@dataclass
class WidgetReport:
    max_err: float
    reflection_norm: float
    phase_offset: complex
    tol: float | None = None

    @property
    def passed(self) -> bool:
        tol = REFLECTION_TOL if self.tol is None else self.tol
        return self.max_err <= tol and self.reflection_norm <= tol


def verify_widget(w: WidgetGraph, target, k: float = K_OPERATING, tol: float | None = None) -> WidgetReport:
    """Compare a widget's transmission with ``target`` up to one global phase."""
    target = np.asarray(target, dtype=complex)
    s = solve_smatrix(w, k)
    t = s.t
    if t.shape != target.shape:
        raise WidgetError(f"target shape {target.shape} does not match transmission {t.shape}")
    overlap = np.vdot(target, t)
    phase = overlap / abs(overlap) if abs(overlap) > 1e-14 else 1.0 + 0j
    max_err = float(np.max(np.abs(t - phase * target)))
    return WidgetReport(max_err, s.reflection_norm, complex(phase), tol)


# ---------------------------------------------------------------------------
# DOT export


def widget_to_dot(w: WidgetGraph, title: str | None = None) -> str:
    lines = [f'graph "{title or w.name or "widget"}" {{', "  rankdir=LR;", "  node [shape=circle, width=0.2, label=\"\"];"]
    for v in range(w.n_nodes):
        lines.append(f"  n{v};")
    for a, b, h in w.edges:
        attr = "" if h == 1.0 else f' [label="{h:.6g}"]'
        lines.append(f"  n{a} -- n{b}{attr};")
    for i, p in enumerate(w.in_ports):
        lines.append(f'  in{i} [shape=point]; in{i} -- n{p.node} [style=dashed];')
    for i, p in enumerate(w.out_ports):
        attr = "style=dashed" if p.hopping == 1.0 else f'style=dashed, label="{p.hopping:.6g}"'
        lines.append(f"  out{i} [shape=point]; n{p.node} -- out{i} [{attr}];")
    lines.append("}")
    return "\n".join(lines) + "\n"
