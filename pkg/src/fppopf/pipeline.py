"""End-to-end runs: FPP then SCA (or slack diagnosis) wrapped into a report."""

from __future__ import annotations

import dataclasses
import time
from collections.abc import Callable

import numpy as np

from .analysis import SolveReport, build_report
from .driver import (
    CONVERGED_INFEASIBLE,
    IterationTrace,
    SolverOptions,
    TraceRecord,
    run_diagnosis,
    run_fpp,
    run_sca,
)
from .network import NetworkModel
from .problem import CostModel, OpfProblem, assemble

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NOT_CONVERGED = "not-converged"

EXIT_CODES = {OPTIMAL: 0, FEASIBLE: 0, INFEASIBLE: 2, NOT_CONVERGED: 3}
# a reported-feasible point never violates a constraint by more than this (p.u.)
REPORT_FEAS_TOL = 1e-7


def exit_code(report: SolveReport) -> int:
    return EXIT_CODES.get(report.status, 3)


def _options_dict(opts: SolverOptions) -> dict:
    d = dataclasses.asdict(opts)
    if not isinstance(d["initial"], str):
        d["initial"] = "warm-start"
    return d


def solve(net: NetworkModel, cost: CostModel, opts: SolverOptions | None = None, *,
          warm: np.ndarray | None = None, sink: Callable[[TraceRecord], None] | None = None,
          problem: OpfProblem | None = None) -> SolveReport:
    """Find a feasible point by FPP, improve it by SCA and report.

    A stalled FPP is reported as ``infeasible`` (or ``not-converged`` on
    iteration limit or solver failure) with a note pointing at
    :func:`diagnose`; the diagnosis is not run automatically.
    """
    opts = opts or SolverOptions()
    problem = problem or assemble(net, cost)
    trace = IterationTrace(sink=sink)
    t0 = time.perf_counter()
    fpp = run_fpp(problem, opts, z0=warm, trace=trace)
    timings = {"fpp": time.perf_counter() - t0}
    iterations = {"fpp": fpp.iterations}
    notes = []
    if not fpp.feasible:
        status = INFEASIBLE if fpp.status == CONVERGED_INFEASIBLE else NOT_CONVERGED
        notes.append(f"FPP stopped ({fpp.status}) with slack {fpp.slack:.3e}; "
                     "run the diagnosis for per-constraint slacks")
        timings["total"] = timings["fpp"]
        return build_report(problem, fpp.x, mode="solve", status=status, feasible=False,
                            trace=trace.records, iterations=iterations, options=_options_dict(opts),
                            eps1_effective=fpp.eps1_effective, timings=timings, notes=notes)
    t2 = time.perf_counter()
    sca = run_sca(problem, fpp, opts, trace)
    timings["sca"] = time.perf_counter() - t2
    timings["total"] = time.perf_counter() - t0
    iterations["sca"] = sca.iterations
    feasible = sca.residual <= REPORT_FEAS_TOL
    status = OPTIMAL if feasible and sca.converged else NOT_CONVERGED
    if not sca.converged:
        notes.append("SCA stopped before meeting the eps2 voltage-change test")
    return build_report(problem, sca.x, mode="solve", status=status, feasible=feasible,
                        trace=trace.records, iterations=iterations,
                        options=_options_dict(opts), eps1_effective=fpp.eps1_effective,
                        timings=timings, notes=notes)


def diagnose(net: NetworkModel, cost: CostModel, opts: SolverOptions | None = None, *,
             warm: np.ndarray | None = None, sink: Callable[[TraceRecord], None] | None = None,
             problem: OpfProblem | None = None) -> SolveReport:
    """Per-constraint slack diagnosis; the report's ``slacks`` are ranked largest first."""
    opts = opts or SolverOptions()
    problem = problem or assemble(net, cost)
    trace = IterationTrace(sink=sink)
    t0 = time.perf_counter()
    diag = run_diagnosis(problem, opts, trace, z0=warm)
    timings = {"diagnosis": time.perf_counter() - t0, "total": time.perf_counter() - t0}
    if diag.feasible:
        status = FEASIBLE
    elif diag.status == CONVERGED_INFEASIBLE:
        status = INFEASIBLE
    else:
        status = NOT_CONVERGED
    return build_report(problem, diag.x, mode="diagnose", status=status, feasible=diag.feasible,
                        trace=trace.records, slacks=diag.ranked, iterations={"diagnosis": diag.iterations},
                        options=_options_dict(opts), timings=timings)
