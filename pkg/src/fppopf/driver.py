"""Outer loops: feasible point pursuit, successive convex approximation and
slack-based infeasibility diagnosis."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .conic import DEFAULT_TOL, NUMERICAL_FAILURE, ConicSolution, solve_conic
from .convexify import build_diagnosis_subproblem, build_fpp_subproblem, build_sca_subproblem
from .feasibility import constraint_violations, full_violation, refine_feasibility
from .network import flat_voltage
from .problem import OpfProblem, evaluate_cost, sync_auxiliaries

log = logging.getLogger(__name__)

# FPP / diagnosis outcomes
FEASIBLE = "feasible"
CONVERGED_INFEASIBLE = "converged-infeasible"
NOT_CONVERGED = "max-iter"
SOLVER_FAILURE = "solver-failure"

RELAXED_EPS1 = 1e-8
# an inaccurate conic answer is still a valid next linearisation point when its
# own residual is this small; QCQP feasibility is always re-checked directly
USABLE_RESIDUAL = 1e-5
# largest stalled slack for which a Newton restoration is attempted
RESTORE_SLACK = 1e-3


def _usable(sol: ConicSolution) -> bool:
    if sol.ok:
        return True
    return sol.status == NUMERICAL_FAILURE and bool(np.all(np.isfinite(sol.x))) \
        and sol.primal_residual <= USABLE_RESIDUAL


def _solve(sub, opts: SolverOptions) -> ConicSolution:
    """Solve at the requested accuracy, retrying once ten times looser."""
    sol = solve_conic(sub, opts.conic_tol)
    if not _usable(sol):
        retry = solve_conic(sub, 10 * opts.conic_tol)
        if _usable(retry):
            log.debug("%s solve needed a looser tolerance (%s)", sub.kind, sol.backend_status)
            return retry
    return sol


@dataclass
class SolverOptions:
    """Tolerances and limits for the outer loops.

    ``eps_step`` is the FPP voltage-change threshold; it defaults to ``eps1``.
    ``sca_band`` is the fixed right-hand-side allowance of the SCA restrictions
    (two-sided balance equalities leave no room to move without it).
    """

    eps1: float = 1e-11
    eps2: float = 1e-5
    eps_step: float | None = None
    max_iter: int = 2000
    conic_tol: float = DEFAULT_TOL
    feas_tol: float = 1e-7
    sca_band: float = 5e-8
    polish: bool = True
    polish_iter: int = 50
    initial: str | np.ndarray = "flat"

    def __post_init__(self):
        if self.eps1 <= 0 or self.eps2 <= 0:
            raise ValueError("eps1 and eps2 must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.sca_band < 0:
            raise ValueError("sca_band must be nonnegative")

    @property
    def step_tol(self) -> float:
        return self.eps1 if self.eps_step is None else self.eps_step


@dataclass
class TraceRecord:
    phase: str
    iteration: int
    slack: float
    cost: float
    dv: float
    ms: float

    def line(self) -> str:
        return (f"{self.phase}\t{self.iteration}\t{self.slack:.6e}\t{self.cost:.10g}\t"
                f"{self.dv:.6e}\t{self.ms:.2f}")


TRACE_HEADER = "phase\titeration\ts\tcost\tdv\tms"


@dataclass
class IterationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    sink: Callable[[TraceRecord], None] | None = None

    def add(self, rec: TraceRecord) -> None:
        self.records.append(rec)
        if self.sink is not None:
            self.sink(rec)

    def phase(self, name: str) -> list[TraceRecord]:
        return [r for r in self.records if r.phase == name]

    def slacks(self, name: str = "fpp") -> np.ndarray:
        return np.array([r.slack for r in self.phase(name)])

    def costs(self, name: str = "sca") -> np.ndarray:
        return np.array([r.cost for r in self.phase(name)])

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class FppResult:
    status: str
    x: np.ndarray
    slack: float
    residual: float
    iterations: int
    trace: IterationTrace
    eps1_effective: float

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


@dataclass
class ScaResult:
    x: np.ndarray
    cost: float
    iterations: int
    converged: bool
    residual: float
    trace: IterationTrace
    polished: bool = False


@dataclass
class DiagnosisResult:
    status: str
    slacks: dict[str, float]
    ranked: list[tuple[str, float]]
    x: np.ndarray
    iterations: int
    trace: IterationTrace

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    @property
    def squared_norm(self) -> float:
        return float(sum(s * s for s in self.slacks.values()))


def initial_point(problem: OpfProblem, opts: SolverOptions) -> np.ndarray:
    if isinstance(opts.initial, str):
        if opts.initial != "flat":
            raise ValueError(f"unknown initial point {opts.initial!r}")
        return flat_voltage(problem.net)
    z0 = np.asarray(opts.initial, dtype=complex)
    if z0.shape != (problem.dim,):
        raise ValueError(f"initial point has {z0.shape} entries, network needs ({problem.dim},)")
    return z0


def _ms(t0: float) -> float:
    return 1e3 * (time.perf_counter() - t0)


def run_fpp(problem: OpfProblem, opts: SolverOptions | None = None, z0: np.ndarray | None = None,
            trace: IterationTrace | None = None, phase: str = "fpp",
            max_iter: int | None = None) -> FppResult:
    """Minimise the shared slack over successive restrictions until it vanishes.

    Feasibility is certified by evaluating every QCQP constraint at the final
    point, never inferred from the slack alone.
    """
    opts = opts or SolverOptions()
    trace = trace if trace is not None else IterationTrace()
    z = initial_point(problem, opts) if z0 is None else np.asarray(z0, complex)
    max_iter = opts.max_iter if max_iter is None else max_iter
    base = problem.layout.size
    x = problem.stack(z)
    slack = math.inf
    status = NOT_CONVERGED
    # best certified candidate: (slack, residual, x)
    best: tuple[float, float, np.ndarray] | None = None
    restored = False
    it = 0
    residual = full_violation(problem, x)
    if residual < opts.eps1:
        # the start already satisfies every constraint: slack zero, nothing to pursue
        trace.add(TraceRecord(phase, 0, 0.0, math.nan, 0.0, 0.0))
        return FppResult(FEASIBLE, x, 0.0, residual, 0, trace, opts.eps1)
    for it in range(1, max_iter + 1):
        t0 = time.perf_counter()
        sub = build_fpp_subproblem(problem, z)
        sol = _solve(sub, opts)
        if not _usable(sol):
            log.warning("%s iteration %d: conic solve ended with %s", phase, it, sol.backend_status)
            status = SOLVER_FAILURE
            break
        s = max(0.0, float(sol.x[sub.slack_cols[0]]))
        v = problem.voltage(sol.x)
        dv = float(np.linalg.norm(v - z))
        # the slack can only rise through solver noise, so z is already a fixed point
        stalled = s > slack + 1e-12
        if not stalled:
            trace.add(TraceRecord(phase, it, s, math.nan, dv, _ms(t0)))
            x, z, slack = sol.x[:base].copy(), v, s
        if not stalled and s <= RELAXED_EPS1:
            cand, residual = x, full_violation(problem, x)
            if residual > opts.feas_tol:
                cand, residual = refine_feasibility(problem, x)
            if residual <= opts.feas_tol and (best is None or residual < best[1]):
                best = (s, residual, cand)
            if s < opts.eps1 and best is not None:
                status = FEASIBLE
                x = best[2]
                break
            continue
        if stalled or dv <= opts.step_tol:
            if not restored and best is None and slack <= RESTORE_SLACK:
                # near-feasible fixed point of an inaccurate restriction: try a
                # Newton restoration and resume from it if it is feasible
                restored = True
                cand, residual = refine_feasibility(problem, x, max_steps=20)
                if residual <= opts.feas_tol:
                    # v = z is feasible for the restriction at the restored point
                    # with slack equal to its direct violation
                    log.debug("%s iteration %d: restored feasibility (%.2e)", phase, it, residual)
                    v = problem.voltage(cand)
                    trace.add(TraceRecord(phase, it, residual, math.nan, float(np.linalg.norm(v - z)), _ms(t0)))
                    x, z, slack = cand, v, residual
                    best = (residual, residual, cand)
                    status = FEASIBLE if residual < opts.eps1 else status
                    break
            status = CONVERGED_INFEASIBLE
            if stalled:
                it -= 1
            break
    eps1_eff = opts.eps1
    if status != FEASIBLE and best is not None:
        # the backend could not certify eps1; fall back to the documented relaxation
        slack, _, x = best
        status = FEASIBLE
        if slack >= opts.eps1:
            eps1_eff = max(RELAXED_EPS1, slack)
    residual = full_violation(problem, x)
    if status != FEASIBLE and slack < opts.eps1:
        log.warning("%s slack %.2e but direct residual %.2e exceeds %.1e", phase, slack, residual, opts.feas_tol)
    return FppResult(status, x, slack, residual, it, trace, eps1_eff)


def _sca_cost(problem: OpfProblem, x: np.ndarray) -> float:
    lay = problem.layout
    return evaluate_cost(problem, x[lay.alpha], x[lay.p_res], x[lay.q_res]).total


def run_sca(problem: OpfProblem, start: np.ndarray | FppResult, opts: SolverOptions | None = None,
            trace: IterationTrace | None = None) -> ScaResult:
    """Successive convex approximation from a feasible point.

    Stops when ||v_i - v_{i-1}|| / ||v_{i-1}|| <= eps2. With ``opts.polish`` the
    final point is pulled back to exact feasibility by a few FPP iterations.
    """
    opts = opts or SolverOptions()
    trace = trace if trace is not None else IterationTrace()
    x = start.x if isinstance(start, FppResult) else np.asarray(start, float)
    x = sync_auxiliaries(problem, x)
    base = problem.layout.size
    viol = full_violation(problem, x)
    if viol > opts.feas_tol:
        raise ValueError(f"SCA needs a feasible start; max violation is {viol:.3e}")
    if viol > 0.0:
        # a start sitting on the band edge leaves the first restriction no interior
        cand, res = refine_feasibility(problem, x)
        if res < viol:
            x = cand
    z = problem.voltage(x)
    cost = _sca_cost(problem, x)
    converged = False
    restored = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        t0 = time.perf_counter()
        sub = build_sca_subproblem(problem, z, margin=opts.sca_band)
        sol = _solve(sub, opts)
        # an inexact solve is still a usable step when the point it returns is
        # feasible for the OPF itself (loose rows are typically flow auxiliaries)
        if not _usable(sol) and not (np.all(np.isfinite(sol.x))
                                     and full_violation(problem, sol.x[:base]) <= opts.feas_tol):
            log.warning("sca iteration %d: conic solve ended with %s; keeping last iterate", it, sol.backend_status)
            it -= 1
            break
        new_x = sol.x[:base].copy()
        new_cost = sol.objective
        if new_cost > cost + 1e-9 * max(1.0, abs(cost)):
            viol = full_violation(problem, x)
            if not restored and viol > opts.sca_band:
                # solver round-off pushed z outside the band, so z no longer lies
                # in its own restriction; pull it back and try again
                restored = True
                cand, res = refine_feasibility(problem, x)
                if res < viol:
                    log.debug("sca iteration %d: cost rose, re-centred z (violation %.2e -> %.2e)", it, viol, res)
                    x, z = cand, problem.voltage(cand)
                    continue
            log.debug("sca iteration %d: cost rose %.10g -> %.10g, stopping", it, cost, new_cost)
            it -= 1
            converged = True
            break
        restored = False
        v = problem.voltage(new_x)
        rel = float(np.linalg.norm(v - z) / max(np.linalg.norm(z), 1e-300))
        trace.add(TraceRecord("sca", it, 0.0, new_cost, rel, _ms(t0)))
        x, z, cost = new_x, v, new_cost
        if rel <= opts.eps2:
            converged = True
            break
    polished = False
    if opts.polish:
        # the band leaves violations up to sca_band; remove them
        cand, res = refine_feasibility(problem, x)
        if res > opts.feas_tol:
            fin = run_fpp(problem, opts, z0=z, trace=trace, phase="polish", max_iter=opts.polish_iter)
            if fin.feasible:
                cand, res = fin.x, fin.residual
        if res <= full_violation(problem, x):
            x, polished = cand, True
    x = sync_auxiliaries(problem, x)
    residual = full_violation(problem, x)
    return ScaResult(x, _sca_cost(problem, x), it, converged, residual, trace, polished)


def run_diagnosis(problem: OpfProblem, opts: SolverOptions | None = None,
                  trace: IterationTrace | None = None, z0: np.ndarray | None = None) -> DiagnosisResult:
    """Iterate the per-constraint-slack restriction until ||s|| settles.

    Returns slacks sorted in descending order. All slacks below ``eps1`` (or
    the relaxed threshold) mean the final voltages are feasible.
    """
    opts = opts or SolverOptions()
    trace = trace if trace is not None else IterationTrace()
    z = initial_point(problem, opts) if z0 is None else np.asarray(z0, complex)
    base = problem.layout.size
    x = problem.stack(z)
    slacks: dict[str, float] = {}
    prev = math.inf
    status = NOT_CONVERGED
    it = 0
    for it in range(1, opts.max_iter + 1):
        t0 = time.perf_counter()
        sub = build_diagnosis_subproblem(problem, z)
        sol = _solve(sub, opts)
        if not _usable(sol):
            log.warning("diagnosis iteration %d: conic solve ended with %s", it, sol.backend_status)
            status = SOLVER_FAILURE
            break
        s = np.maximum(sol.x[sub.slack_cols], 0.0)
        norm = float(np.linalg.norm(s))
        if norm > prev + 1e-12:
            status = CONVERGED_INFEASIBLE
            it -= 1
            break
        v = problem.voltage(sol.x)
        dv = float(np.linalg.norm(v - z))
        trace.add(TraceRecord("diagnosis", it, norm * norm, math.nan, dv, _ms(t0)))
        change = prev - norm
        x, z = sol.x[:base].copy(), v
        slacks = dict(zip(sub.slack_ids, map(float, s)))
        prev = norm
        if s.max(initial=0.0) < opts.eps1:
            status = FEASIBLE
            break
        if dv <= opts.step_tol or change <= opts.eps2 * 1e-3 * norm:
            status = CONVERGED_INFEASIBLE
            break
    if status != FEASIBLE and slacks and max(slacks.values()) <= RELAXED_EPS1:
        status = FEASIBLE
    if status != FEASIBLE and slacks and max(slacks.values()) <= RESTORE_SLACK:
        # tiny slacks the interior-point solver cannot resolve further
        cand, residual = refine_feasibility(problem, x, max_steps=20)
        if residual <= opts.feas_tol:
            x, status = cand, FEASIBLE
            viol = constraint_violations(problem, x)
            slacks = {cid: max(0.0, viol.get(cid, 0.0)) for cid in slacks}
    if status == FEASIBLE and full_violation(problem, x) > opts.feas_tol:
        x, residual = refine_feasibility(problem, x)
        if residual > opts.feas_tol:
            status = CONVERGED_INFEASIBLE
    ranked = sorted(slacks.items(), key=lambda kv: kv[1], reverse=True)
    return DiagnosisResult(status, slacks, ranked, x, it, trace)


def warm_start(previous, problem: OpfProblem | None = None) -> np.ndarray:
    """Initial point from an earlier solve on the same topology.

    ``previous`` may be a SolveReport, a dict loaded from a report JSON file
    (``magnitude`` and ``angle_deg`` lists), or a complex voltage vector.
    """
    if hasattr(previous, "voltage"):
        v = np.asarray(previous.voltage, dtype=complex)
    elif isinstance(previous, dict):
        try:
            mag = np.asarray(previous["magnitude"], dtype=float)
            ang = np.asarray(previous["angle_deg"], dtype=float)
        except KeyError as exc:
            raise ValueError(f"report has no {exc.args[0]!r} field") from None
        v = mag * np.exp(1j * np.deg2rad(ang))
    else:
        v = np.asarray(previous, dtype=complex)
    if problem is not None and v.shape != (problem.dim,):
        raise ValueError(f"warm start has {v.size} entries, network needs {problem.dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("warm start contains non-finite voltages")
    return v
