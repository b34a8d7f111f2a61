"""Frequency- and time-domain solution of compiled graphs, plus DM readouts."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import jv

from .compiler import ScatterGraph
from .widgets import K_OPERATING, WidgetGraph, solve_ports

REFLECTION_LIMIT = 1e-6
NORM_TOL = 1e-9
EXIT_FRACTION = 0.01
THREADS_ENV = "DMWALK_THREADS"


class ModelViolation(RuntimeError):
    """The start port reflects at the operating point, so the graph is not a valid widget network."""


class TimeDomainError(RuntimeError):
    pass


@dataclass(eq=False)
class WireAmplitudes:
    k: float
    amps: dict
    drain_total: float
    global_phase: complex
    rescale_applied: float
    mode: str
    n_qubits: int
    traced: tuple = ()
    discarded: frozenset = frozenset()
    reflection: float = 0.0
    drain_amps: dict = field(default_factory=dict)

    @property
    def kept(self) -> dict:
        return {w: a for w, a in self.amps.items() if w not in self.discarded}

    def density_matrix(self) -> np.ndarray:
        """Kept amplitudes reassembled into the reduced density matrix (dm mode)."""
        if self.mode != "dm":
            psi = np.array([self.amps[(i,)] for i in range(2**self.n_qubits)])
            return np.outer(psi, psi.conj())
        n = self.n_qubits
        keep = [q for q in range(n) if q not in self.traced]
        d = 2 ** len(keep)
        rho = np.zeros((d, d), dtype=complex)
        scale = math.sqrt(2) ** len(self.traced)
        for (i, j), a in self.kept.items():
            rho[_reduce(i, keep, n), _reduce(j, keep, n)] = a * scale
        return rho


def _reduce(index: int, keep, n: int) -> int:
    out = 0
    for q in keep:
        out = (out << 1) | ((index >> (n - 1 - q)) & 1)
    return out


def _finalize(graph: ScatterGraph, k: float, raw: dict, drains: dict, reflection: float) -> WireAmplitudes:
    rescale = graph.rescale
    amps = {label: raw[label] * np.exp(-1j * k * graph.wire_l0[label]) * rescale for label in graph.wire_map}
    phase = 1.0 + 0j
    if graph.mode == "dm":
        diag = sum(a for (i, j), a in amps.items() if i == j and (i, j) not in graph.discarded)
        if abs(diag) > 1e-14:
            phase = diag / abs(diag)
            amps = {label: a / phase for label, a in amps.items()}
    drain_total = float(sum(abs(a) ** 2 for a in drains.values()))
    return WireAmplitudes(
        k=k,
        amps=amps,
        drain_total=drain_total,
        global_phase=complex(np.exp(1j * k * graph.nominal_length) * phase),
        rescale_applied=rescale,
        mode=graph.mode,
        n_qubits=graph.n_qubits,
        traced=graph.traced,
        discarded=graph.discarded,
        reflection=reflection,
        drain_amps=drains,
    )


def solve_frequency(graph: ScatterGraph, k: float = K_OPERATING) -> WireAmplitudes:
    """Unit wave into the start port; read the terminal wires and drains."""
    w = graph.widget
    _, out = solve_ports(w, k, [graph.start_port])
    out = out[:, 0]
    n_in = len(w.in_ports)
    reflection = float(np.max(np.abs(out[:n_in])))
    if abs(k - K_OPERATING) < 1e-12 and reflection > REFLECTION_LIMIT:
        raise ModelViolation(f"reflection {reflection:.3e} at k = pi/4 exceeds {REFLECTION_LIMIT:g}")
    raw = {label: complex(out[port]) for label, port in graph.wire_map.items()}
    drains = {w.ports[p].label: complex(out[p]) for p in graph.drain_ports}
    return _finalize(graph, k, raw, drains, reflection)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "")))
    except ValueError:
        return os.cpu_count() or 1


def sweep_k(graph: ScatterGraph, ks, workers: int | None = None) -> list[WireAmplitudes]:
    """Frequency solves over many momenta (run in a thread pool)."""
    ks = [float(k) for k in ks]
    workers = workers or thread_count()
    if workers == 1 or len(ks) == 1:
        return [_solve_lenient(graph, k) for k in ks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda k: _solve_lenient(graph, k), ks))


def _solve_lenient(graph: ScatterGraph, k: float) -> WireAmplitudes:
    # off the operating point reflection is a measured quantity, not an error
    if abs(k - K_OPERATING) < 1e-12:
        return solve_frequency(graph, k)
    w = graph.widget
    _, out = solve_ports(w, k, [graph.start_port])
    out = out[:, 0]
    reflection = float(np.max(np.abs(out[: len(w.in_ports)])))
    raw = {label: complex(out[port]) for label, port in graph.wire_map.items()}
    drains = {w.ports[p].label: complex(out[p]) for p in graph.drain_ports}
    return _finalize(graph, k, raw, drains, reflection)


# ---------------------------------------------------------------------------
# readouts


def purity_from_wires(w: WireAmplitudes) -> float:
    return float(sum(abs(a) ** 2 for a in w.kept.values()))


def subsystem_purity(w: WireAmplitudes, kept_wires=None) -> float:
    """Purity of the untraced subsystem: ``2^t`` times the kept-wire density."""
    if not w.traced:
        raise ValueError("subsystem purity needs a graph that ends in a partial trace")
    kept = set(w.kept)
    if kept_wires is not None and set(kept_wires) != kept:
        raise ValueError("kept wire set does not match the graph's surviving wires")
    return float(2 ** len(w.traced) * sum(abs(w.amps[x]) ** 2 for x in kept))


def survival_probability(w: WireAmplitudes) -> float:
    return 1.0 - w.drain_total


# ---------------------------------------------------------------------------
# time domain


@dataclass
class TimeTrace:
    times: np.ndarray
    norms: np.ndarray
    backscatter: float  # |r|^2 at the packet's central momentum (matched filter on the input leads)
    backscatter_norm: float  # all probability found back on the input leads
    internal_fraction: float
    drain_norm: float
    config: dict


@dataclass(eq=False)
class _Closed:
    hamiltonian: sp.csr_matrix
    n_internal: int
    leads: list  # per port: array of lead-site indices (first site next to the port node)


def _close(w: WidgetGraph, lead_len: int) -> _Closed:
    """Graph with every lead truncated to ``lead_len`` sites; hoppings negated."""
    if w.ideal_blocks:
        raise TimeDomainError("ideal blocks have no Hamiltonian and cannot be propagated in time")
    rows, cols, vals = [], [], []
    for a, b, h in w.edges:
        rows += [a, b]
        cols += [b, a]
        vals += [-h, -h]
    n = w.n_nodes
    leads = []
    for p in w.ports:
        sites = np.arange(n, n + lead_len)
        n += lead_len
        leads.append(sites)
        if p.hopping != 0.0:
            rows += [p.node, sites[0]]
            cols += [sites[0], p.node]
            vals += [-p.hopping, -p.hopping]
        rows += list(sites[:-1]) + list(sites[1:])
        cols += list(sites[1:]) + list(sites[:-1])
        vals += [-1.0] * (2 * (lead_len - 1))
    ham = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return _Closed(ham, w.n_nodes, leads)


def _chebyshev(ham: sp.csr_matrix, psi: np.ndarray, dt: float, bound: float) -> np.ndarray:
    """``exp(-i H dt) psi`` by Chebyshev expansion of ``H/bound``."""
    x = bound * dt
    n_terms = int(x + 10 * x ** (1 / 3) + 30)
    while abs(jv(n_terms, x)) > 1e-17 and n_terms < 10 * x + 100:
        n_terms += 10
    coeffs = jv(np.arange(n_terms), x) * (-1j) ** np.arange(n_terms)
    coeffs[1:] *= 2
    scaled = ham / bound
    t_prev = psi
    t_cur = scaled @ psi
    out = coeffs[0] * t_prev + coeffs[1] * t_cur
    for c in coeffs[2:]:
        t_prev, t_cur = t_cur, 2 * (scaled @ t_cur) - t_prev
        out += c * t_cur
    return out


def _packet(lead_len: int, sigma: float, k: float) -> np.ndarray:
    """Gaussian on an input lead, indexed from the port outward (site j at x = -j)."""
    x = -np.arange(1, lead_len + 1, dtype=float)
    x0 = -lead_len / 2
    # incoming wave exp(ikx) travels toward the port under H = -A
    psi = np.exp(-((x - x0) ** 2) / (4 * sigma**2)) * np.exp(1j * k * x)
    return psi / np.linalg.norm(psi)


def _propagate(closed: _Closed, psi0: np.ndarray, t_final: float, checkpoints: int):
    bound = 1.01 * float(np.max(np.abs(closed.hamiltonian).sum(axis=1)))
    psi = psi0
    times, norms = [0.0], [float(np.linalg.norm(psi))]
    dt = t_final / checkpoints
    for step in range(checkpoints):
        psi = _chebyshev(closed.hamiltonian, psi, dt, bound)
        times.append((step + 1) * dt)
        norms.append(float(np.linalg.norm(psi)))
    norms = np.array(norms)
    if np.max(np.abs(norms - 1)) > NORM_TOL:
        raise TimeDomainError(f"norm drift {np.max(np.abs(norms - 1)):.2e} exceeds {NORM_TOL:g}")
    return psi, np.array(times), norms


def _reference(lead_len: int, sigma: float, k: float, t_final: float, max_delay: int, checkpoints: int):
    """Free-line packet at ``t_final`` as a function of the distance past the input port."""
    span = max_delay + lead_len
    # sites: input lead (lead_len), port node at 0, then 1..span
    n = lead_len + span + 1
    ham = sp.diags([-np.ones(n - 1), -np.ones(n - 1)], [-1, 1], format="csr")
    psi0 = np.zeros(n, dtype=complex)
    psi0[:lead_len] = _packet(lead_len, sigma, k)[::-1]
    psi, _, _ = _propagate(_Closed(ham, n, []), psi0, t_final, checkpoints)
    return psi[lead_len:]  # index d = free-line position d


def _check_params(sigma: float, lead_len: int):
    if sigma < 4:
        raise ValueError("wavepacket width must be at least 4 sites")
    if lead_len < 8 * sigma:
        raise ValueError("lead length must be at least 8 sigma")


def _run_time_domain(w: WidgetGraph, source: int, delays: dict, k: float, sigma: float,
                     lead_len: int | None, t_max: float | None, checkpoints: int):
    lead_len = int(lead_len if lead_len is not None else math.ceil(10 * sigma))
    _check_params(sigma, lead_len)
    closed = _close(w, lead_len)
    vg = 2 * math.sin(k)
    max_delay = max(delays.values(), default=0)
    t_final = (lead_len + max_delay) / vg if t_max is None else float(t_max)
    psi0 = np.zeros(closed.hamiltonian.shape[0], dtype=complex)
    psi0[closed.leads[source]] = _packet(lead_len, sigma, k)
    psi, times, norms = _propagate(closed, psi0, t_final, checkpoints)
    ref = _reference(lead_len, sigma, k, t_final, max_delay + 1, checkpoints)

    n_in = len(w.in_ports)
    back_norm = float(sum(np.sum(np.abs(psi[closed.leads[p]]) ** 2) for p in range(n_in)))
    # reflected waves leave along the input leads as a zero-delay outgoing packet
    window = ref[1 : 1 + lead_len]
    back = float(sum(abs(np.vdot(window, psi[closed.leads[p]]) / np.vdot(window, window)) ** 2 for p in range(n_in)))
    internal = float(np.sum(np.abs(psi[: closed.n_internal]) ** 2))
    if internal > EXIT_FRACTION:
        raise TimeDomainError(f"{internal:.2%} of the norm is still inside the graph at t = {t_final:.1f}")
    est = {}
    for port, d in delays.items():
        window = ref[d + 1 : d + 1 + lead_len]
        phi = psi[closed.leads[port]][: len(window)]
        tau = np.vdot(window, phi) / np.vdot(window, window)
        # the reference already carries the free phase e^{ikd}
        est[port] = complex(tau * np.exp(1j * k * d))
    config = {"k": k, "sigma": sigma, "lead_len": lead_len, "t_final": t_final, "checkpoints": checkpoints,
              "estimator": "matched filter against the free-line packet shifted by the path length"}
    return est, psi, closed, TimeTrace(times, norms, back, back_norm, internal, 0.0, config)


def wavepacket_smatrix(w: WidgetGraph, k: float = K_OPERATING, sigma: float = 20.0,
                       lead_len: int | None = None, delays=None, checkpoints: int = 8):
    """Time-domain estimate of a widget's transmission matrix.

    Returns ``(t_estimate, traces)`` with one trace per input port.  ``delays``
    gives the path length from each input port to each output port; by default
    the widget's nominal length is used for every pair.
    """
    n_in, n_out = len(w.in_ports), len(w.out_ports)
    t = np.zeros((n_out, n_in), dtype=complex)
    traces = []
    for a in range(n_in):
        if delays is None:
            d = {n_in + q: w.nominal_length for q in range(n_out)}
        else:
            d = {n_in + q: int(delays[q][a]) for q in range(n_out)}
        est, _, _, trace = _run_time_domain(w, a, d, k, sigma, lead_len, None, checkpoints)
        for q in range(n_out):
            t[q, a] = est[n_in + q]
        traces.append(trace)
    return t, traces


def propagate_wavepacket(graph: ScatterGraph, k: float = K_OPERATING, sigma: float = 20.0,
                         lead_len: int | None = None, t_max: float | None = None,
                         checkpoints: int = 8) -> tuple[WireAmplitudes, TimeTrace]:
    """Wavepacket estimate of the compiled graph's wire amplitudes."""
    w = graph.widget
    # path length from the start node to each terminal node
    delays = {port: graph.wire_lengths[label] for label, port in graph.wire_map.items()}
    est, psi, closed, trace = _run_time_domain(w, graph.start_port, delays, k, sigma, lead_len, t_max, checkpoints)
    raw = {label: est[port] for label, port in graph.wire_map.items()}
    drains = {}
    drain_norm = 0.0
    for p in graph.drain_ports:
        norm = float(np.sum(np.abs(psi[closed.leads[p]]) ** 2))
        drains[w.ports[p].label] = complex(math.sqrt(norm))
        drain_norm += norm
    trace.drain_norm = drain_norm
    result = _finalize(graph, k, raw, drains, math.sqrt(trace.backscatter))
    return result, trace
