"""Command-line front end: ``run``, ``widgets``, ``resources`` and ``export-dot``."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .circuit import CircuitError, load_circuit
from .compiler import CompileError, compile_circuit, export_dot, resource_report, resources_for
from .oracle import compare, purity, simulate
from .scattering import (
    ModelViolation,
    TimeDomainError,
    propagate_wavepacket,
    purity_from_wires,
    solve_frequency,
    subsystem_purity,
    survival_probability,
    sweep_k,
)
from .serialize import dumps, wire_key
from .synthesis import NotExactlyRepresentable
from .widgets import K_OPERATING, SingularSystemError, WidgetError, catalog_targets, verify_widget

EXIT_OK, EXIT_VERIFY, EXIT_INPUT = 0, 1, 2
WIDGET_TOL = 1e-9


def _amplitude_record(w) -> dict:
    rec = {
        "k": w.k,
        "wires": {wire_key(label): a for label, a in w.amps.items()},
        "purity": purity_from_wires(w),
        "survival": survival_probability(w),
        "drainTotal": w.drain_total,
        "rescaleApplied": w.rescale_applied,
        "globalPhase": w.global_phase,
        "reflection": w.reflection,
    }
    if w.traced:
        rec["subsystemPurity"] = subsystem_purity(w)
    return rec


def _parse_sweep(text: str) -> np.ndarray:
    try:
        lo, hi, steps = text.split(":")
        ks = np.linspace(float(lo), float(hi), int(steps))
    except ValueError:
        raise argparse.ArgumentTypeError(f"sweep must look like from:to:steps, got {text!r}") from None
    if ks.size == 0 or np.any(ks <= 0) or np.any(ks >= math.pi):
        raise argparse.ArgumentTypeError("sweep momenta must lie in (0, pi)")
    return ks


def cmd_run(args) -> int:
    spec = load_circuit(args.circuit)
    graph = compile_circuit(spec, ideal_blocks=args.ideal_blocks)
    report = {
        "circuit": spec.name or Path(args.circuit).stem,
        "mode": spec.mode,
        "qubits": spec.n_qubits,
        "solver": args.solver,
        "abstract": graph.abstract,
        "rescaleLog": graph.rescale_log,
    }
    status = EXIT_OK
    freq = None
    if args.solver in ("frequency", "both"):
        freq = solve_frequency(graph, args.k)
        report["frequency"] = _amplitude_record(freq)
    if args.solver in ("timedomain", "both"):
        td, trace = propagate_wavepacket(graph, args.k, args.sigma, args.lead_len, args.t_max)
        rec = _amplitude_record(td)
        rec["backscatter"] = trace.backscatter
        rec["backscatterNorm"] = trace.backscatter_norm
        rec["config"] = trace.config
        report["timedomain"] = rec
    report["resources"] = resource_report(spec, graph).to_dict()
    if args.sweep_k is not None:
        report["sweep"] = [_amplitude_record(w) for w in sweep_k(graph, args.sweep_k)]
    if args.verify:
        rho = simulate(spec)
        result = freq if freq is not None else solve_frequency(graph, args.k)
        cmp = compare(result, rho, tol=args.tol)
        report["verify"] = {
            "maxAbsErr": cmp.max_abs_err,
            "worstWire": wire_key(cmp.worst_wire),
            "phaseUsed": cmp.phase_used,
            "oraclePurity": purity(rho),
            "passed": cmp.passed,
            "tol": cmp.tol,
        }
        if not cmp.passed:
            print(f"verification failed: {cmp.summary()}", file=sys.stderr)
            status = EXIT_VERIFY
    if args.dot:
        Path(args.dot).write_text(export_dot(graph))
    text = dumps(report)
    if args.output:
        Path(args.output).write_text(text)
    if args.json:
        sys.stdout.write(text)
    else:
        _print_summary(report)
    return status


def _print_summary(report: dict):
    print(f"{report['circuit']}: {report['qubits']} qubit(s), {report['mode']} mode")
    res = report["resources"]
    print(f"  graph: {res['nodes_actual']} nodes, {res['wires_actual']} wires ({res['drains_actual']} drains)")
    for key in ("frequency", "timedomain"):
        if key in report:
            rec = report[key]
            print(f"  {key}: purity {rec['purity']:.10g}, survival {rec['survival']:.10g}")
            if "subsystemPurity" in rec:
                print(f"  {key}: subsystem purity {rec['subsystemPurity']:.10g}")
    if "verify" in report:
        v = report["verify"]
        state = "PASS" if v["passed"] else "FAIL"
        print(f"  verify: {state} max err {v['maxAbsErr']:.3e} (worst wire {v['worstWire']})")


def widget_rows(ks=(K_OPERATING,), inject=None) -> list[dict]:
    """verify_widget over the catalog; k-independent widgets are also checked at every k in ``ks``."""
    rows = []
    for name, widget, target, k_free in catalog_targets():
        if inject is not None and inject[0] == name:
            widget = widget.with_hopping(inject[1], inject[2])
        for k in ks if k_free else (K_OPERATING,):
            rep = verify_widget(widget, target, k, WIDGET_TOL)
            rows.append({"widget": name, "k": k, "maxErr": rep.max_err, "reflectionNorm": rep.reflection_norm,
                         "phaseOffset": rep.phase_offset, "passed": rep.passed})
    return rows


def _parse_inject(text: str):
    try:
        name, edge, hop = text.rsplit(":", 2)
        return name, int(edge), float(hop)
    except ValueError:
        raise argparse.ArgumentTypeError("inject must look like NAME:EDGE_INDEX:HOPPING") from None


def cmd_widgets(args) -> int:
    ks = sorted({K_OPERATING, *args.k})
    rows = widget_rows(ks, args.inject)
    if args.json:
        sys.stdout.write(dumps(rows))
    else:
        print(f"{'widget':<18}{'k':>8}{'maxErr':>12}{'reflection':>12}  result")
        for r in rows:
            state = "pass" if r["passed"] else "FAIL"
            print(f"{r['widget']:<18}{r['k']:>8.4f}{r['maxErr']:>12.2e}{r['reflectionNorm']:>12.2e}  {state}")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_VERIFY


def cmd_resources(args) -> int:
    rep = resources_for(args.n, args.T, args.f)
    if args.json:
        sys.stdout.write(dumps(rep.to_dict()))
        return EXIT_OK
    print(f"n={rep.n}  T={rep.T}  fT={rep.fT}")
    print(f"{'':<14}{'open (dm)':>14}{'purification':>14}")
    print(f"{'wires':<14}{rep.wires_formula_open:>14}{rep.wires_formula_purif:>14}")
    print(f"{'nodes':<14}{rep.nodes_formula_open:>14}{rep.nodes_formula_purif:>14}")
    print(f"fT > n regime: {str(rep.open_advantage).lower()}")
    print(f"survival lower bound: {rep.survival_lower_bound:.6g}")
    print(f"repetition bound: {rep.repetition_bound}")
    print(f"drain bound: {rep.drain_bound}")
    return EXIT_OK


def cmd_export_dot(args) -> int:
    spec = load_circuit(args.circuit)
    text = export_dot(compile_circuit(spec, ideal_blocks=args.ideal_blocks))
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmwalk", description="Compile noisy circuits to scattering graphs and solve them.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compile, solve and optionally verify a circuit")
    run.add_argument("circuit")
    run.add_argument("--k", type=float, default=K_OPERATING, help="momentum (default pi/4)")
    run.add_argument("--solver", choices=("frequency", "timedomain", "both"), default="frequency")
    run.add_argument("--sigma", type=float, default=20.0, help="wavepacket width in sites")
    run.add_argument("--lead-len", type=int, default=None, help="finite lead length (default 10 sigma)")
    run.add_argument("--t-max", type=float, default=None)
    run.add_argument("-o", "--output", help="write the JSON report here")
    run.add_argument("--ideal-blocks", action="store_true", help="allow ideal blocks for unsynthesizable channels")
    run.add_argument("--dot", help="also write the graph as DOT")
    run.add_argument("--json", action="store_true", help="print the JSON report to stdout")
    run.add_argument("--verify", action="store_true", help="cross-check against the density-matrix oracle")
    run.add_argument("--tol", type=float, default=1e-8)
    run.add_argument("--sweep-k", type=_parse_sweep, default=None, metavar="FROM:TO:STEPS")
    run.set_defaults(func=cmd_run)

    widgets = sub.add_parser("widgets", help="verify the widget catalog")
    widgets.add_argument("--k", type=float, action="append", default=[0.3, 2.0],
                         help="extra momenta for k-independent widgets")
    widgets.add_argument("--inject", type=_parse_inject, default=None,
                         help="test hook: set edge EDGE_INDEX of widget NAME to HOPPING")
    widgets.add_argument("--json", action="store_true")
    widgets.set_defaults(func=cmd_widgets)

    res = sub.add_parser("resources", help="graph-size formulas for open-system vs purification models")
    res.add_argument("n", type=int)
    res.add_argument("T", type=int)
    res.add_argument("f", type=float)
    res.add_argument("--json", action="store_true")
    res.set_defaults(func=cmd_resources)

    dot = sub.add_parser("export-dot", help="write the compiled graph as DOT")
    dot.add_argument("circuit")
    dot.add_argument("-o", "--output")
    dot.add_argument("--ideal-blocks", action="store_true")
    dot.set_defaults(func=cmd_export_dot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (CircuitError, CompileError, NotExactlyRepresentable, WidgetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelViolation, SingularSystemError, TimeDomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
