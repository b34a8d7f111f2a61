"""Noisy-circuit compiler to quantum-walk scattering graphs, with a density-matrix oracle."""

from .circuit import CircuitSpec, format_circuit, kraus_to_superop, load_circuit, parse_circuit, validate
from .compiler import ScatterGraph, compile_circuit, export_dot, resource_formulas, resource_report
from .oracle import DensityMatrix, compare, partial_trace, purity, simulate
from .scattering import (
    WireAmplitudes,
    propagate_wavepacket,
    purity_from_wires,
    solve_frequency,
    subsystem_purity,
    survival_probability,
)
from .synthesis import ChannelPlan, GateSequence, conjugate_sequence, pauli_transform, plan_channel, synthesize_unitary
from .widgets import SMatrix, WidgetGraph, catalog, solve_smatrix, verify_widget

__all__ = [
    "CircuitSpec", "format_circuit", "kraus_to_superop", "load_circuit", "parse_circuit", "validate",
    "ScatterGraph", "compile_circuit", "export_dot", "resource_formulas", "resource_report",
    "DensityMatrix", "compare", "partial_trace", "purity", "simulate",
    "WireAmplitudes", "propagate_wavepacket", "purity_from_wires", "solve_frequency",
    "subsystem_purity", "survival_probability",
    "ChannelPlan", "GateSequence", "conjugate_sequence", "pauli_transform", "plan_channel", "synthesize_unitary",
    "SMatrix", "WidgetGraph", "catalog", "solve_smatrix", "verify_widget",
]
