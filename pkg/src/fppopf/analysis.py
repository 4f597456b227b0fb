"""Post-solution checks, generation recovery, mismatch metrics and reports."""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .feasibility import constraint_violations
from .network import PHASE_ANGLE_DEG, NetworkModel, ResUnit, build_admittance, normalize_angles
from .problem import (
    CostBreakdown,
    CostModel,
    GenCost,
    OpfProblem,
    ResCost,
    evaluate_cost,
    res_region_contains,
)

REPORT_SCHEMA = "fppopf-report/1"


# ---------------------------------------------------------------- generation and injections

@dataclass(frozen=True)
class GenerationValue:
    bus: int
    phase: str
    p: float
    q: float
    within_limits: bool


def recover_generation(problem: OpfProblem, v: np.ndarray, p_res=None, q_res=None,
                       tol: float = 1e-7) -> dict[tuple[int, str], GenerationValue]:
    """Generation implied by the balance equations at every (bus, phase).

    Values are never clipped; ``within_limits`` flags whether they respect the
    generator box (zero box for phases without a generator) within ``tol``.
    """
    mats = problem.matrices
    nres = len(problem.res_units)
    p_res = np.zeros(nres) if p_res is None else np.asarray(p_res, float)
    q_res = np.zeros(nres) if q_res is None else np.asarray(q_res, float)
    out = {}
    for bus in problem.net.buses:
        for ph in bus.phases:
            key = (bus.id, ph)
            load = bus.load_at(ph)
            p = mats.real_power[key](v) + load.real
            q = mats.reactive_power[key](v) + load.imag
            r = problem.res_index(*key)
            if r is not None:
                p -= p_res[r]
                q -= q_res[r]
            lim = bus.gen_at(ph)
            ok = lim.pmin - tol <= p <= lim.pmax + tol and lim.qmin - tol <= q <= lim.qmax + tol
            out[key] = GenerationValue(bus.id, ph, float(p), float(q), bool(ok))
    return out


def kcl_injections(net: NetworkModel, v: np.ndarray) -> dict[tuple[int, str], complex]:
    """Complex power injected at each (bus, phase), summed line by line.

    Works from the raw line impedances, shunts and taps, independently of the
    admittance matrix and the quadratic forms used by the solver.
    """
    idx = net.index
    current = np.zeros(idx.total_dim, complex)
    for line in net.lines:
        fi = idx.indices(line.from_bus, line.phases)
        ti = idx.indices(line.to_bus, line.phases)
        vf, vt = v[fi] / line.tap, v[ti]
        series = np.linalg.solve(line.z, vf - vt)
        half = 0.5 * line.y_shunt
        current[fi] += (series + half @ vf) / line.tap
        current[ti] += -series + half @ vt
    for bus in net.buses:
        for ph, y in bus.shunt.items():
            current[idx[(bus.id, ph)]] += y * v[idx[(bus.id, ph)]]
    s = v * np.conj(current)
    return {pair: complex(s[i]) for i, pair in enumerate(idx)}


def kcl_flows(net: NetworkModel, v: np.ndarray) -> dict[tuple[str, str, str], complex]:
    """Complex power leaving each line end, from raw line data."""
    idx = net.index
    out = {}
    for line in net.lines:
        fi = idx.indices(line.from_bus, line.phases)
        ti = idx.indices(line.to_bus, line.phases)
        vf, vt = v[fi] / line.tap, v[ti]
        series = np.linalg.solve(line.z, vf - vt)
        half = 0.5 * line.y_shunt
        i_from = (series + half @ vf) / line.tap
        i_to = -series + half @ vt
        for a, ph in enumerate(line.phases):
            out[(line.id, "from", ph)] = complex(v[fi[a]] * np.conj(i_from[a]))
            out[(line.id, "to", ph)] = complex(v[ti[a]] * np.conj(i_to[a]))
    return out


def _box_distance(p: float, q: float, pmin: float, pmax: float, qmin: float, qmax: float) -> float:
    dp = max(pmin - p, 0.0, p - pmax)
    dq = max(qmin - q, 0.0, q - qmax)
    return math.hypot(dp, dq)


def injection_mismatch(net: NetworkModel, v: np.ndarray, injections: Mapping[tuple[int, str], complex],
                       res_dispatch: Mapping[tuple[int, str], complex] | None = None) -> float:
    """Largest distance (p.u.) between an injection and its scheduled set.

    The scheduled set is the generator box shifted by load and RES output; at
    load-only phases it is the single point -load + RES.
    """
    res_dispatch = res_dispatch or {}
    worst = 0.0
    for bus in net.buses:
        for ph in bus.phases:
            key = (bus.id, ph)
            s = injections[key]
            base = res_dispatch.get(key, 0j) - bus.load_at(ph)
            g = bus.gen_at(ph)
            worst = max(worst, _box_distance(s.real - base.real, s.imag - base.imag,
                                             g.pmin, g.pmax, g.qmin, g.qmax))
    return worst


# ---------------------------------------------------------------- residuals

@dataclass
class Residuals:
    """Signed violations (positive = violated) and aggregate metrics."""

    constraints: dict[str, float]
    flow_limits: dict[str, float]
    res_region: dict[str, float]
    max_violation: float
    mismatch_pu: float
    mismatch_mva: float


def evaluate_residuals(problem: OpfProblem, x: np.ndarray) -> Residuals:
    """Residuals of every OPF constraint at the real candidate ``x``."""
    lay = problem.layout
    v = problem.voltage(x)
    cons = constraint_violations(problem, x)
    flows = {}
    for fl in problem.flow_limits:
        key = (fl.line, fl.end, fl.phase)
        p, q = problem.matrices.flow_p[key](v), problem.matrices.flow_q[key](v)
        flows[f"flow-limit/{fl.line}/{fl.end}/{fl.phase}"] = math.hypot(p, q) - fl.smax
    region = {}
    for j, u in enumerate(problem.res_units):
        p, q = x[lay.p_res.start + j], x[lay.q_res.start + j]
        region[f"res-region/bus{u.bus}/{u.phase}"] = _res_violation(u, p, q)
    inj = {key: complex(problem.matrices.real_power[key](v), problem.matrices.reactive_power[key](v))
           for key in problem.net.index}
    dispatch = {(u.bus, u.phase): complex(x[lay.p_res.start + j], x[lay.q_res.start + j])
                for j, u in enumerate(problem.res_units)}
    mismatch = injection_mismatch(problem.net, v, inj, dispatch)
    worst = max([0.0, *cons.values(), *flows.values(), *region.values()])
    return Residuals(cons, flows, region, worst, mismatch, mismatch * problem.net.base_mva)


def _res_violation(u: ResUnit, p: float, q: float) -> float:
    return float(max(-p, p - u.available_power, math.hypot(p, q) - u.inverter_capacity,
                     abs(q) - math.tan(u.max_angle) * p))


# ---------------------------------------------------------------- reports

@dataclass
class SolveReport:
    """Everything a run produces, serialisable to JSON and CSV.

    Powers are stored in p.u.; ``base_mva`` converts them. Angles are in
    degrees after rotating the reference bus (its first phase) to 0.
    """

    case: str
    mode: str
    status: str
    feasible: bool
    base_mva: float
    buses: list[tuple[int, str]]
    magnitude: list[float]
    angle_deg: list[float]
    generation: list[dict[str, Any]] = field(default_factory=list)
    res_dispatch: list[dict[str, Any]] = field(default_factory=list)
    cost: dict[str, float] = field(default_factory=dict)
    mismatch_pu: float = math.nan
    mismatch_mva: float = math.nan
    max_violation: float = math.nan
    residuals: dict[str, float] = field(default_factory=dict)
    slacks: list[tuple[str, float]] = field(default_factory=list)
    iterations: dict[str, int] = field(default_factory=dict)
    trace: list[dict[str, Any]] = field(default_factory=list)
    options: dict[str, Any] = field(default_factory=dict)
    eps1_effective: float | None = None
    timings: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    schema: str = REPORT_SCHEMA

    @property
    def voltage(self) -> np.ndarray:
        return np.asarray(self.magnitude) * np.exp(1j * np.deg2rad(self.angle_deg))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["buses"] = [list(b) for b in self.buses]
        d["slacks"] = [list(s) for s in self.slacks]
        return _jsonable(d)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> SolveReport:
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}, expected {REPORT_SCHEMA!r}")
        kw = dict(d)
        kw["buses"] = [(int(b), str(p)) for b, p in kw["buses"]]
        kw["slacks"] = [(str(c), float(s)) for c, s in kw.get("slacks", [])]
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> SolveReport:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON at line {exc.lineno} ({exc.msg})") from None
        return cls.from_dict(data)

    def write(self, path: str | Path) -> list[Path]:
        """Write ``path`` (JSON) plus ``<stem>_voltages.csv`` and ``<stem>_slacks.csv``."""
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        vpath = path.with_name(path.stem + "_voltages.csv")
        spath = path.with_name(path.stem + "_slacks.csv")
        write_voltage_csv(self, vpath)
        write_slack_csv(self, spath)
        return [path, vpath, spath]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_voltage_csv(report: SolveReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "phase", "magnitude", "angle_deg"])
        for (bus, ph), m, a in zip(report.buses, report.magnitude, report.angle_deg):
            w.writerow([bus, ph, f"{m:.12g}", f"{a:.12g}"])


def write_slack_csv(report: SolveReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["constraint", "slack"])
        for cid, s in report.slacks:
            w.writerow([cid, f"{s:.12g}"])


def reference_angles(net: NetworkModel, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitudes and angles (degrees) with the reference bus' first phase at its nominal angle."""
    w = normalize_angles(net, v)
    ang = np.rad2deg(np.angle(w))
    ref = net.reference_bus
    # remove the rounding left by the rotation
    ang[net.index[(ref.id, ref.phases[0])]] = PHASE_ANGLE_DEG[ref.phases[0]]
    return np.abs(w), ang


def build_report(problem: OpfProblem, x: np.ndarray, *, mode: str, status: str, feasible: bool,
                 trace: Iterable[Any] = (), slacks: Iterable[tuple[str, float]] = (),
                 iterations: Mapping[str, int] | None = None, options: Mapping[str, Any] | None = None,
                 eps1_effective: float | None = None, timings: Mapping[str, float] | None = None,
                 notes: Iterable[str] = ()) -> SolveReport:
    net = problem.net
    lay = problem.layout
    v = problem.voltage(x)
    mag, ang = reference_angles(net, v)
    p_res, q_res = x[lay.p_res], x[lay.q_res]
    gen = recover_generation(problem, v, p_res, q_res)
    generation = [dict(bus=g.bus, phase=g.phase, p=g.p, q=g.q, within_limits=g.within_limits)
                  for key, g in gen.items() if net.bus(key[0]).has_gen(key[1])]
    res_rows = [dict(bus=u.bus, phase=u.phase, p=float(p), q=float(q), available=u.available_power,
                     curtailment=float(u.available_power - p))
                for u, p, q in zip(problem.res_units, p_res, q_res)]
    alpha = [gen[k].p for k in problem.gen_keys]
    cb: CostBreakdown = evaluate_cost(problem, alpha, p_res, q_res)
    resid = evaluate_residuals(problem, x)
    all_resid = {**resid.constraints, **resid.flow_limits, **resid.res_region}
    return SolveReport(
        case=net.name, mode=mode, status=status, feasible=feasible, base_mva=net.base_mva,
        buses=list(net.index), magnitude=[float(m) for m in mag], angle_deg=[float(a) for a in ang],
        generation=generation, res_dispatch=res_rows,
        cost={k: float(c) for k, c in (('generation', cb.generation), ('curtailment', cb.curtailment),
                                       ('reactive', cb.reactive), ('total', cb.total))},
        mismatch_pu=resid.mismatch_pu, mismatch_mva=resid.mismatch_mva, max_violation=resid.max_violation,
        residuals=all_resid, slacks=list(slacks), iterations=dict(iterations or {}),
        trace=[_trace_row(r) for r in trace], options=dict(options or {}),
        eps1_effective=eps1_effective, timings=dict(timings or {}), notes=list(notes),
    )


def _trace_row(rec: Any) -> dict[str, Any]:
    if isinstance(rec, Mapping):
        return dict(rec)
    return {k: getattr(rec, k) for k in ("phase", "iteration", "slack", "cost", "dv", "ms")}


# ---------------------------------------------------------------- independent validation

@dataclass
class Validation:
    ok: bool
    max_violation: float
    mismatch_mva: float
    failures: list[str]


def validate_report(report: SolveReport, net: NetworkModel, tol: float = 1e-7) -> Validation:
    """Re-check a report against raw network data without the solver's forms."""
    if list(report.buses) != list(net.index):
        return Validation(False, math.inf, math.inf, ["report buses do not match the case"])
    v = report.voltage
    inj = kcl_injections(net, v)
    flows = kcl_flows(net, v)
    dispatch = {(r["bus"], r["phase"]): complex(r["p"], r["q"]) for r in report.res_dispatch}
    failures: list[str] = []
    worst = 0.0

    def check(name: str, viol: float):
        nonlocal worst
        worst = max(worst, viol)
        if viol > tol:
            failures.append(f"{name}: violation {viol:.3e}")

    for bus in net.buses:
        for ph in bus.phases:
            m = abs(v[net.index[(bus.id, ph)]])
            check(f"voltage bus{bus.id}/{ph}", max(bus.vmin[ph] ** 2 - m * m, m * m - bus.vmax[ph] ** 2))
    mismatch = injection_mismatch(net, v, inj, dispatch)
    check("injection mismatch", mismatch)
    for line in net.monitored_lines():
        for end in ("from", "to"):
            for ph in line.phases:
                check(f"flow {line.id}/{end}/{ph}", abs(flows[(line.id, end, ph)]) - line.smax)
    units = {(u.bus, u.phase): u for u in net.res_units}
    for key, s in dispatch.items():
        u = units.get(key)
        if u is None:
            failures.append(f"RES dispatch at unknown unit {key}")
            continue
        check(f"RES region bus{key[0]}/{key[1]}", _res_violation(u, s.real, s.imag))
    return Validation(not failures, worst, mismatch * net.base_mva, failures)


# ---------------------------------------------------------------- brute-force oracle

@dataclass
class OracleResult:
    feasible: bool
    cost: float
    voltage: np.ndarray | None
    points: int


def _gen_cost(c: GenCost, p: np.ndarray) -> np.ndarray:
    return c.b2 * p * p + c.b1 * p + c.b0


def _res_grid(u: ResUnit, n: int) -> tuple[np.ndarray, np.ndarray]:
    p, q = np.meshgrid(np.linspace(0.0, u.available_power, n),
                       np.linspace(-u.inverter_capacity, u.inverter_capacity, n), indexing="ij")
    p, q = p.ravel(), q.ravel()
    keep = np.array([res_region_contains(u, a, b, 1e-12) for a, b in zip(p, q)], bool)
    return p[keep], q[keep]


def brute_force_opf(net: NetworkModel, cost: CostModel, mag_step: float = 1e-3, angle_step_deg: float = 0.01,
                    res_points: int = 100, eq_tol: float = 1e-4) -> OracleResult:
    """Exhaustive grid search for networks of at most three single-phase buses.

    Two buses: the non-reference voltage magnitude is gridded and, since the
    OPF is invariant to a common rotation, its angle is fixed at 0; the
    reference voltage then follows exactly from Kirchhoff's current law at the
    other bus when that bus has no generator. Three buses: the reference bus
    magnitude, one load bus magnitude and angle are gridded, the third voltage
    is recovered from the load bus KCL and its own balance is accepted within
    ``eq_tol``. Returns the cheapest grid point meeting every constraint.
    """
    if not net.is_single_phase or len(net.buses) > 3:
        raise ValueError("brute-force oracle handles at most three single-phase buses")
    if len(net.buses) == 1:
        b = net.buses[0]
        ph = b.phases[0]
        g = b.gen_at(ph)
        load = b.load_at(ph)
        if not (g.pmin <= load.real <= g.pmax and g.qmin <= load.imag <= g.qmax):
            return OracleResult(False, math.inf, None, 1)
        c = _gen_cost(cost.gen.get((b.id, ph), GenCost()), np.array([load.real]))[0]
        return OracleResult(True, float(c), np.array([1.0 + 0j]), 1)
    if len(net.buses) == 2:
        return _oracle_two_bus(net, cost, mag_step, res_points)
    return _oracle_three_bus(net, cost, mag_step, angle_step_deg, eq_tol)


def _units_at(net: NetworkModel, bus_id: int) -> ResUnit | None:
    return next((u for u in net.res_units if u.bus == bus_id), None)


def _oracle_two_bus(net: NetworkModel, cost: CostModel, mag_step: float, res_points: int) -> OracleResult:
    ref = net.reference_bus
    other = next(b for b in net.buses if b is not ref)
    if other.has_gen("a") or _units_at(net, ref.id) is not None:
        raise ValueError("two-bus oracle expects the generator at the reference bus and no RES there")
    y = build_admittance(net).toarray()
    i_ref, i_oth = net.index[(ref.id, "a")], net.index[(other.id, "a")]
    if abs(y[i_oth, i_ref]) == 0:
        raise ValueError("buses are not connected")
    mags = np.arange(other.vmin["a"], other.vmax["a"] + 0.5 * mag_step, mag_step)
    unit = _units_at(net, other.id)
    if unit is not None:
        pr, qr = _res_grid(unit, res_points)
    else:
        pr, qr = np.zeros(1), np.zeros(1)
    m, p_r = np.meshgrid(mags, pr, indexing="ij")
    _, q_r = np.meshgrid(mags, qr, indexing="ij")
    m, p_r, q_r = m.ravel(), p_r.ravel(), q_r.ravel()
    v2 = m.astype(complex)
    s2 = p_r + 1j * q_r - other.load_at("a")
    i2 = np.conj(s2 / v2)
    v1 = (i2 - y[i_oth, i_oth] * v2) / y[i_oth, i_ref]
    i1 = y[i_ref, i_ref] * v1 + y[i_ref, i_oth] * v2
    s1 = v1 * np.conj(i1) + ref.load_at("a")
    g = ref.gen_at("a")
    a1 = np.abs(v1)
    ok = (a1 >= ref.vmin["a"]) & (a1 <= ref.vmax["a"])
    ok &= (s1.real >= g.pmin) & (s1.real <= g.pmax) & (s1.imag >= g.qmin) & (s1.imag <= g.qmax)
    vv = np.zeros((m.size, 2), complex)
    vv[:, i_ref], vv[:, i_oth] = v1, v2
    ok &= _flows_ok(net, vv)
    total = _gen_cost(cost.gen.get((ref.id, "a"), GenCost()), s1.real)
    if unit is not None:
        rc = cost.res.get((unit.bus, unit.phase), ResCost())
        curt = unit.available_power - p_r
        total = total + rc.c2 * curt**2 + rc.c1 * curt + rc.d2 * q_r**2 + rc.d1 * q_r
    if not ok.any():
        return OracleResult(False, math.inf, None, int(m.size))
    k = int(np.argmin(np.where(ok, total, np.inf)))
    return OracleResult(True, float(total[k]), vv[k], int(m.size))


def _flows_ok(net: NetworkModel, vv: np.ndarray) -> np.ndarray:
    ok = np.ones(vv.shape[0], bool)
    lines = net.monitored_lines()
    if not lines:
        return ok
    for k in range(vv.shape[0]):
        flows = kcl_flows(net, vv[k])
        ok[k] = all(abs(flows[(line.id, e, "a")]) <= line.smax for line in lines for e in ("from", "to"))
    return ok


def _oracle_three_bus(net: NetworkModel, cost: CostModel, mag_step: float, angle_step_deg: float,
                      eq_tol: float, angle_span_deg: float = 20.0) -> OracleResult:
    if net.res_units:
        raise ValueError("three-bus oracle does not grid RES dispatch")
    y = build_admittance(net).toarray()
    ref = net.reference_bus
    loads = [b for b in net.buses if b is not ref and not b.has_gen("a")]
    if not loads:
        raise ValueError("three-bus oracle needs a load bus adjacent to the reference")
    mid = next((b for b in loads if all(abs(y[net.index[(b.id, 'a')], net.index[(o.id, 'a')]]) > 0
                                        for o in net.buses if o is not b)), None)
    if mid is None:
        raise ValueError("three-bus oracle needs a load bus connected to both other buses")
    third = next(b for b in net.buses if b is not ref and b is not mid)
    ir, im, it = (net.index[(b.id, "a")] for b in (ref, mid, third))
    best = (math.inf, None)
    count = 0
    ref_mags = np.arange(ref.vmin["a"], ref.vmax["a"] + 0.5 * mag_step, mag_step)
    mid_mags = np.arange(mid.vmin["a"], mid.vmax["a"] + 0.5 * mag_step, mag_step)
    angles = np.deg2rad(np.arange(-angle_span_deg, angle_span_deg + 0.5 * angle_step_deg, angle_step_deg))
    for a_ref in ref_mags:
        vm, th = np.meshgrid(mid_mags, angles, indexing="ij")
        v2 = (vm * np.exp(1j * th)).ravel()
        v1 = np.full(v2.shape, a_ref + 0j)
        i2 = np.conj(-mid.load_at("a") / v2)
        v3 = (i2 - y[im, ir] * v1 - y[im, im] * v2) / y[im, it]
        count += v2.size
        vv = np.zeros((v2.size, 3), complex)
        vv[:, ir], vv[:, im], vv[:, it] = v1, v2, v3
        s = vv * np.conj(vv @ y.T)
        ok = np.ones(v2.size, bool)
        total = np.zeros(v2.size)
        for b, col in ((ref, ir), (third, it)):
            g = b.gen_at("a")
            inj = s[:, col] + b.load_at("a")
            mag = np.abs(vv[:, col])
            ok &= (mag >= b.vmin["a"]) & (mag <= b.vmax["a"])
            if b.has_gen("a"):
                ok &= (inj.real >= g.pmin) & (inj.real <= g.pmax) & (inj.imag >= g.qmin) & (inj.imag <= g.qmax)
                total += _gen_cost(cost.gen.get((b.id, "a"), GenCost()), inj.real)
            else:
                ok &= np.abs(inj) <= eq_tol
        if net.monitored_lines():
            ok &= _flows_ok(net, vv)
        if ok.any():
            k = int(np.argmin(np.where(ok, total, np.inf)))
            if total[k] < best[0]:
                best = (float(total[k]), vv[k].copy())
    if best[1] is None:
        return OracleResult(False, math.inf, None, count)
    return OracleResult(True, best[0], best[1], count)


__all__ = [
    "GenerationValue", "recover_generation", "kcl_injections", "kcl_flows", "injection_mismatch",
    "Residuals", "evaluate_residuals", "SolveReport", "build_report", "write_voltage_csv",
    "write_slack_csv", "reference_angles", "Validation", "validate_report", "OracleResult",
    "brute_force_opf", "REPORT_SCHEMA",
]
