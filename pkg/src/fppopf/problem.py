"""Nonconvex QCQP form of the multi-phase AC OPF."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .network import NetworkModel, ResUnit, build_admittance
from .quadratics import (
    HermitianForm,
    HermitianSplit,
    InjectionMatrices,
    build_flow_matrices,
    build_injection_matrices,
    eigen_split,
)

# Constraint kinds. Balance and voltage kinds carry their bound side in the
# name; flow links carry it in ``side``.
GEN_EPIGRAPH = "gen-epigraph"
P_UPPER = "active-balance-upper"
P_LOWER = "active-balance-lower"
Q_UPPER = "reactive-balance-upper"
Q_LOWER = "reactive-balance-lower"
V_UPPER = "voltage-upper"
V_LOWER = "voltage-lower"
FLOW_P = "flow-P-link"
FLOW_Q = "flow-Q-link"

BUS_KINDS = (P_UPPER, P_LOWER, Q_UPPER, Q_LOWER, V_UPPER, V_LOWER)

_DESCRIPTIONS = {
    GEN_EPIGRAPH: "generation epigraph",
    P_UPPER: "active power balance (upper)",
    P_LOWER: "active power balance (lower)",
    Q_UPPER: "reactive power balance (upper)",
    Q_LOWER: "reactive power balance (lower)",
    V_UPPER: "voltage magnitude upper limit",
    V_LOWER: "voltage magnitude lower limit",
    FLOW_P: "active flow link",
    FLOW_Q: "reactive flow link",
}


@dataclass(frozen=True)
class GenCost:
    b2: float = 0.0
    b1: float = 0.0
    b0: float = 0.0


@dataclass(frozen=True)
class ResCost:
    c2: float = 0.0
    c1: float = 0.0
    d2: float = 0.0
    d1: float = 0.0


@dataclass
class CostModel:
    """Cost coefficients in per-unit power (currency per p.u. and per p.u.^2).

    ``gen`` is keyed by (bus, phase) of a generator; ``res`` by (bus, phase) of
    a renewable unit. Missing entries cost nothing.
    """

    gen: dict[tuple[int, str], GenCost] = field(default_factory=dict)
    res: dict[tuple[int, str], ResCost] = field(default_factory=dict)

    def __post_init__(self):
        for key, c in self.gen.items():
            if c.b2 < 0:
                raise ValueError(f"generator {key}: quadratic coefficient must be nonnegative")
        for key, c in self.res.items():
            if c.c2 < 0 or c.d2 < 0:
                raise ValueError(f"RES {key}: quadratic coefficients must be nonnegative")

    @classmethod
    def uniform(cls, net: NetworkModel, b2=0.0, b1=0.0, c2=0.0, c1=0.0, d2=0.0, d1=0.0) -> CostModel:
        return cls({k: GenCost(b2, b1) for k in net.gen_phases()},
                   {(u.bus, u.phase): ResCost(c2, c1, d2, d1) for u in net.res_units})


@dataclass(frozen=True)
class ConstraintRecord:
    """One scalar constraint  v^H A v + sum(coef * y[j])  (<= | >=)  const.

    ``linear`` pairs index positions in the problem's real variable vector
    (never the voltage block) with coefficients.
    """

    id: str
    kind: str
    side: str  # "upper" (<=) or "lower" (>=)
    form: str  # key into OpfProblem.forms
    const: float
    linear: tuple[tuple[int, float], ...] = ()
    bus: int | None = None
    phase: str | None = None
    line: str | None = None

    def describe(self) -> str:
        what = _DESCRIPTIONS.get(self.kind, self.kind)
        if self.line is not None:
            return f"line {self.line} phase {self.phase}: {what} ({self.side})"
        return f"bus {self.bus} phase {self.phase}: {what}"


@dataclass(frozen=True)
class VariableLayout:
    """Positions of the real decision variables shared by every subproblem."""

    n_v: int
    n_res: int
    n_gen: int
    n_flow: int

    @property
    def v_re(self) -> slice:
        return slice(0, self.n_v)

    @property
    def v_im(self) -> slice:
        return slice(self.n_v, 2 * self.n_v)

    @property
    def p_res(self) -> slice:
        s = 2 * self.n_v
        return slice(s, s + self.n_res)

    @property
    def q_res(self) -> slice:
        s = 2 * self.n_v + self.n_res
        return slice(s, s + self.n_res)

    @property
    def alpha(self) -> slice:
        s = 2 * self.n_v + 2 * self.n_res
        return slice(s, s + self.n_gen)

    @property
    def flow_p(self) -> slice:
        s = 2 * self.n_v + 2 * self.n_res + self.n_gen
        return slice(s, s + self.n_flow)

    @property
    def flow_q(self) -> slice:
        s = 2 * self.n_v + 2 * self.n_res + self.n_gen + self.n_flow
        return slice(s, s + self.n_flow)

    @property
    def size(self) -> int:
        return 2 * self.n_v + 2 * self.n_res + self.n_gen + 2 * self.n_flow


@dataclass(frozen=True)
class FlowLimit:
    line: str
    end: str
    phase: str
    smax: float


@dataclass
class OpfProblem:
    net: NetworkModel
    y: sp.csr_matrix
    matrices: InjectionMatrices
    cost: CostModel
    forms: dict[str, HermitianForm]
    splits: dict[str, HermitianSplit]
    constraints: list[ConstraintRecord]
    layout: VariableLayout
    gen_keys: list[tuple[int, str]]
    res_units: list[ResUnit]
    flow_limits: list[FlowLimit]

    @property
    def dim(self) -> int:
        return self.net.total_dim

    def constraint(self, cid: str) -> ConstraintRecord:
        for c in self.constraints:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def res_index(self, bus: int, phase: str) -> int | None:
        for j, u in enumerate(self.res_units):
            if (u.bus, u.phase) == (bus, phase):
                return j
        return None

    def stack(self, v: np.ndarray, p_res=None, q_res=None, alpha=None,
              flow_p=None, flow_q=None) -> np.ndarray:
        """Pack a candidate into the real variable vector used by the records."""
        lay = self.layout
        x = np.zeros(lay.size)
        x[lay.v_re] = np.real(v)
        x[lay.v_im] = np.imag(v)
        for sl, val in ((lay.p_res, p_res), (lay.q_res, q_res), (lay.alpha, alpha),
                        (lay.flow_p, flow_p), (lay.flow_q, flow_q)):
            if val is not None:
                x[sl] = val
        return x

    def voltage(self, x: np.ndarray) -> np.ndarray:
        lay = self.layout
        return x[lay.v_re] + 1j * x[lay.v_im]


def _form_key(kind: str, *parts) -> str:
    return kind + ":" + ".".join(str(p) for p in parts)


def assemble(net: NetworkModel, cost: CostModel) -> OpfProblem:
    """Build the QCQP: balance, voltage, epigraph and flow-link constraints.

    Splits of every constraint form are computed here once and reused by all
    convex subproblems.
    """
    gen_keys = net.gen_phases()
    res_units = list(net.res_units)
    res_keys = {(u.bus, u.phase) for u in res_units}
    for key in cost.gen:
        if key not in gen_keys:
            raise ValueError(f"cost given for undeclared generator at bus {key[0]} phase {key[1]}")
    for key in cost.res:
        if key not in res_keys:
            raise ValueError(f"cost given for undeclared RES unit at bus {key[0]} phase {key[1]}")

    y = build_admittance(net)
    mats = build_injection_matrices(y, net.index)
    flow_limits: list[FlowLimit] = []
    for line in net.monitored_lines():
        for end in ("from", "to"):
            for phase, (fp, fq) in build_flow_matrices(net, net.index, line, end).items():
                mats.flow_p[(line.id, end, phase)] = fp
                mats.flow_q[(line.id, end, phase)] = fq
                flow_limits.append(FlowLimit(line.id, end, phase, float(line.smax)))

    layout = VariableLayout(net.total_dim, len(res_units), len(gen_keys), len(flow_limits))
    forms: dict[str, HermitianForm] = {}
    records: list[ConstraintRecord] = []
    res_pos = {(u.bus, u.phase): j for j, u in enumerate(res_units)}
    gen_pos = {k: j for j, k in enumerate(gen_keys)}

    for bus in net.buses:
        for phase in bus.phases:
            key = (bus.id, phase)
            fp, fq, fm = (_form_key("P", *key), _form_key("Q", *key), _form_key("M", *key))
            forms[fp] = mats.real_power[key]
            forms[fq] = mats.reactive_power[key]
            forms[fm] = mats.magnitude[key]
            load = bus.load_at(phase)
            lim = bus.gen_at(phase)
            lin_p: tuple = ()
            lin_q: tuple = ()
            if key in res_pos:
                j = res_pos[key]
                lin_p = ((layout.p_res.start + j, -1.0),)
                lin_q = ((layout.q_res.start + j, -1.0),)
            tag = f"bus{bus.id}/{phase}"
            common = dict(bus=bus.id, phase=phase)
            if key in gen_pos:
                a = layout.alpha.start + gen_pos[key]
                records.append(ConstraintRecord(f"{GEN_EPIGRAPH}/{tag}", GEN_EPIGRAPH, "upper", fp,
                                                -load.real, lin_p + ((a, -1.0),), **common))
            records += [
                ConstraintRecord(f"{P_UPPER}/{tag}", P_UPPER, "upper", fp, lim.pmax - load.real, lin_p, **common),
                ConstraintRecord(f"{P_LOWER}/{tag}", P_LOWER, "lower", fp, lim.pmin - load.real, lin_p, **common),
                ConstraintRecord(f"{Q_UPPER}/{tag}", Q_UPPER, "upper", fq, lim.qmax - load.imag, lin_q, **common),
                ConstraintRecord(f"{Q_LOWER}/{tag}", Q_LOWER, "lower", fq, lim.qmin - load.imag, lin_q, **common),
                ConstraintRecord(f"{V_UPPER}/{tag}", V_UPPER, "upper", fm, bus.vmax[phase] ** 2, (), **common),
                ConstraintRecord(f"{V_LOWER}/{tag}", V_LOWER, "lower", fm, bus.vmin[phase] ** 2, (), **common),
            ]

    for j, fl in enumerate(flow_limits):
        fkey = (fl.line, fl.end, fl.phase)
        kp, kq = _form_key("FP", *fkey), _form_key("FQ", *fkey)
        forms[kp] = mats.flow_p[fkey]
        forms[kq] = mats.flow_q[fkey]
        ip, iq = layout.flow_p.start + j, layout.flow_q.start + j
        tag = f"{fl.line}/{fl.end}/{fl.phase}"
        for kind, fk, aux in ((FLOW_P, kp, ip), (FLOW_Q, kq, iq)):
            for side in ("upper", "lower"):
                records.append(ConstraintRecord(f"{kind}-{side}/{tag}", kind, side, fk, 0.0, ((aux, -1.0),),
                                                phase=fl.phase, line=f"{fl.line}:{fl.end}"))

    splits = {k: eigen_split(f) for k, f in forms.items()}
    return OpfProblem(net, y, mats, cost, forms, splits, records, layout, gen_keys, res_units, flow_limits)


def res_region_contains(unit: ResUnit, p: float, q: float, tol: float = 0.0) -> bool:
    """Membership of (p, q) in the inverter operating region."""
    if p < -tol or p > unit.available_power + tol:
        return False
    if p * p + q * q > unit.inverter_capacity**2 + tol:
        return False
    return abs(q) <= np.tan(unit.max_angle) * p + tol


@dataclass(frozen=True)
class CostBreakdown:
    generation: float
    curtailment: float
    reactive: float

    @property
    def total(self) -> float:
        return self.generation + self.curtailment + self.reactive


def evaluate_cost(problem: OpfProblem, alpha, p_res=None, q_res=None) -> CostBreakdown:
    """Generation + curtailment + reactive-support cost (per-unit powers)."""
    alpha = np.asarray(alpha, dtype=float)
    cg = 0.0
    for a, key in zip(alpha, problem.gen_keys):
        c = problem.cost.gen.get(key, GenCost())
        cg += c.b2 * a * a + c.b1 * a + c.b0
    cc = ci = 0.0
    if problem.res_units:
        p_res = np.zeros(len(problem.res_units)) if p_res is None else np.asarray(p_res, float)
        q_res = np.zeros(len(problem.res_units)) if q_res is None else np.asarray(q_res, float)
        for u, p, q in zip(problem.res_units, p_res, q_res):
            c = problem.cost.res.get((u.bus, u.phase), ResCost())
            curt = u.available_power - p
            cc += c.c2 * curt * curt + c.c1 * curt
            ci += c.d2 * q * q + c.d1 * q
    return CostBreakdown(cg, cc, ci)


def count_constraints(problem: OpfProblem) -> Mapping[str, int]:
    out: dict[str, int] = {}
    for c in problem.constraints:
        out[c.kind] = out.get(c.kind, 0) + 1
    return out


def sync_auxiliaries(problem: OpfProblem, x: np.ndarray) -> np.ndarray:
    """Copy of ``x`` whose alpha and flow auxiliaries equal the values implied
    by its voltages and RES dispatch (tight epigraph, exact flow links)."""
    x = np.array(x, dtype=float, copy=True)
    lay = problem.layout
    v = problem.voltage(x)
    for j, key in enumerate(problem.gen_keys):
        pg = problem.matrices.real_power[key](v) + problem.net.bus(key[0]).load_at(key[1]).real
        r = problem.res_index(*key)
        if r is not None:
            pg -= x[lay.p_res.start + r]
        x[lay.alpha.start + j] = pg
    for j, fl in enumerate(problem.flow_limits):
        key = (fl.line, fl.end, fl.phase)
        x[lay.flow_p.start + j] = problem.matrices.flow_p[key](v)
        x[lay.flow_q.start + j] = problem.matrices.flow_q[key](v)
    return x

