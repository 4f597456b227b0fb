"""Convex inner approximations of the OPF around an approximation point z.

A quadratic constraint v^H B v <= r is replaced by the convex restriction

    v^H B+ v + 2 Re{z^H B- v} - z^H B- z <= r (+ slack),

which majorises the left side everywhere and touches it at v = z. Lower-bound
constraints are handled by negating B, which swaps the roles of B+ and B-.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import Affine, ConicProgram, RsocBlock, SocBlock
from .problem import GEN_EPIGRAPH, ConstraintRecord, GenCost, OpfProblem, ResCost
from .quadratics import HermitianSplit

FPP = "fpp"
SCA = "sca"
DIAGNOSIS = "diagnosis"

SCA_FEASIBILITY_TOL = 1e-7


@dataclass
class SurrogateConstraint:
    """||G (x[q_cols] - center)||^2 + g^T x[l_cols] <= rhs, convex in the real variables.

    The quadratic is centred at the approximation point so the cone only sees
    the (small) step; ``g`` then holds the full gradient of the form at z.
    ``slack_col`` (if any) already has coefficient -1 inside ``g``.
    """

    record_id: str
    q_cols: np.ndarray
    factor: np.ndarray  # G, real; zero rows when the convex part vanishes
    l_cols: np.ndarray
    g: np.ndarray
    rhs: float
    slack_col: int | None
    # complex data kept for direct evaluation in v
    split: HermitianSplit
    z: np.ndarray
    center: np.ndarray

    @property
    def is_linear(self) -> bool:
        return self.factor.shape[0] == 0

    def lhs(self, x: np.ndarray) -> float:
        val = float(self.g @ x[self.l_cols])
        if not self.is_linear:
            val += float(np.sum((self.factor @ (x[self.q_cols] - self.center)) ** 2))
        return val

    def quad_lhs(self, v: np.ndarray) -> float:
        """Majoriser of v^H B v:  v^H B+ v + 2 Re{z^H B- v} - z^H B- z."""
        plus, minus = self.split.plus, self.split.minus
        w = minus.apply(self.z)
        vs = np.asarray(v)[minus.support]
        return plus(v) + 2.0 * float(np.real(np.vdot(w, vs))) - minus(self.z)

    def to_cone(self) -> RsocBlock | None:
        """Rotated-cone form; ``None`` means the constraint is a plain linear row."""
        if self.is_linear:
            return None
        u = Affine(self.l_cols, -0.5 * self.g[None, :], np.array([0.5 * self.rhs]))
        w = Affine.scalar(const=1.0)
        y = Affine(self.q_cols, self.factor, -(self.factor @ self.center))
        return RsocBlock(u, w, y)


def build_surrogate(record: ConstraintRecord, split: HermitianSplit, z: np.ndarray,
                    slack_col: int | None = None, margin: float = 0.0) -> SurrogateConstraint:
    """Convex restriction of ``record`` around ``z``.

    ``split`` must be the split of the record's own form; ``margin`` is a fixed
    allowance added to the right-hand side.
    """
    z = np.asarray(z, dtype=complex)
    if z.shape != (split.plus.dim,):
        raise ValueError(f"approximation point has {z.shape} entries, expected ({split.plus.dim},)")
    if record.side == "upper":
        sgn, b = 1.0, split
    elif record.side == "lower":
        sgn, b = -1.0, split.negated()
    else:
        raise ValueError(f"unknown side {record.side!r}")
    n = split.plus.dim
    lin_cols, lin_vals = [], []
    zbz = 0.0
    # v^H B+ v = (v-z)^H B+ (v-z) + 2 Re{z^H B+ v} - z^H B+ z, so both parts
    # contribute a tangent term
    for part in (b.plus, b.minus):
        if part.support.size:
            w = part.apply(z)
            zbz += part(z)
            lin_cols.append(np.concatenate([part.support, part.support + n]))
            lin_vals.append(2.0 * np.concatenate([w.real, w.imag]))
    if record.linear:
        cols, vals = zip(*record.linear)
        lin_cols.append(np.asarray(cols, dtype=np.int64))
        lin_vals.append(sgn * np.asarray(vals, dtype=float))
    if slack_col is not None:
        lin_cols.append(np.array([slack_col]))
        lin_vals.append(np.array([-1.0]))
    l_cols = np.concatenate(lin_cols).astype(np.int64) if lin_cols else np.zeros(0, dtype=np.int64)
    g = np.concatenate(lin_vals) if lin_vals else np.zeros(0)
    if b.plus_factor.shape[0]:
        support = b.plus.support
        q_cols = np.concatenate([support, support + n])
        factor = b.lifted_plus_factor
        center = np.concatenate([z.real[support], z.imag[support]])
    else:
        q_cols = np.zeros(0, dtype=np.int64)
        factor = np.zeros((0, 0))
        center = np.zeros(0)
    rhs = sgn * record.const + zbz + margin
    return SurrogateConstraint(record.id, q_cols, factor, l_cols, g, float(rhs), slack_col, b, z, center)


@dataclass
class Subproblem(ConicProgram):
    """A conic program plus the bookkeeping needed to read its solution."""

    kind: str = FPP
    z: np.ndarray | None = None
    surrogates: list[SurrogateConstraint] = field(default_factory=list)
    slack_cols: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    slack_ids: list[str] = field(default_factory=list)
    cost_col: int | None = None


class _Builder:
    def __init__(self, problem: OpfProblem, n_extra: int):
        self.problem = problem
        self.base = problem.layout.size
        self.n = self.base + n_extra
        self.lb = np.full(self.n, -np.inf)
        self.ub = np.full(self.n, np.inf)
        self.rows: list[Affine] = []  # each row: a(x) <= 0 written as Affine value <= 0
        self.socs: list[SocBlock] = []
        self.rsocs: list[RsocBlock] = []
        self.surrogates: list[SurrogateConstraint] = []
        lay = problem.layout
        for j, key in enumerate(problem.gen_keys):
            lim = problem.net.bus(key[0]).gen_at(key[1])
            self.lb[lay.alpha.start + j] = lim.pmin
            self.ub[lay.alpha.start + j] = lim.pmax

    def res_region(self):
        lay = self.problem.layout
        for j, u in enumerate(self.problem.res_units):
            ip, iq = lay.p_res.start + j, lay.q_res.start + j
            self.lb[ip] = 0.0
            self.ub[ip] = u.available_power
            tan = float(np.tan(u.max_angle))
            self.rows.append(Affine([ip, iq], [[-tan, 1.0]], [0.0]))
            self.rows.append(Affine([ip, iq], [[-tan, -1.0]], [0.0]))
            self.socs.append(SocBlock(Affine.scalar(const=u.inverter_capacity),
                                      Affine([ip, iq], np.eye(2), np.zeros(2))))

    def flow_disks(self):
        lay = self.problem.layout
        for j, fl in enumerate(self.problem.flow_limits):
            ip, iq = lay.flow_p.start + j, lay.flow_q.start + j
            self.socs.append(SocBlock(Affine.scalar(const=fl.smax), Affine([ip, iq], np.eye(2), np.zeros(2))))

    def add(self, sur: SurrogateConstraint):
        self.surrogates.append(sur)
        cone = sur.to_cone()
        if cone is None:
            self.rows.append(Affine(sur.l_cols, sur.g[None, :], np.array([-sur.rhs])))
        else:
            self.rsocs.append(cone)

    def finish(self, c: np.ndarray, c0: float = 0.0, **meta) -> Subproblem:
        if self.rows:
            m = len(self.rows)
            r = np.concatenate([np.full(a.cols.size, i) for i, a in enumerate(self.rows)])
            cidx = np.concatenate([a.cols for a in self.rows])
            vals = np.concatenate([a.coef.ravel() for a in self.rows])
            ineq_a = sp.csr_matrix((vals, (r, cidx)), shape=(m, self.n))
            ineq_b = -np.array([a.const[0] for a in self.rows])
        else:
            ineq_a, ineq_b = None, None
        return Subproblem(self.n, c, c0, None, None, ineq_a, ineq_b, self.lb, self.ub,
                          self.socs, self.rsocs, surrogates=self.surrogates, **meta)


def _surrogated(problem: OpfProblem, with_epigraph: bool) -> list[ConstraintRecord]:
    return [r for r in problem.constraints if with_epigraph or r.kind != GEN_EPIGRAPH]


def build_fpp_subproblem(problem: OpfProblem, z: np.ndarray) -> Subproblem:
    """Minimise one shared slack s >= 0 added to every surrogate constraint."""
    b = _Builder(problem, 1)
    s = b.base
    b.lb[s] = 0.0
    for rec in _surrogated(problem, with_epigraph=False):
        b.add(build_surrogate(rec, problem.splits[rec.form], z, slack_col=s))
    b.res_region()
    b.flow_disks()
    c = np.zeros(b.n)
    c[s] = 1.0
    return b.finish(c, kind=FPP, z=np.asarray(z, complex).copy(),
                    slack_cols=np.array([s]), slack_ids=["shared"])


def build_diagnosis_subproblem(problem: OpfProblem, z: np.ndarray, norm: str = "2") -> Subproblem:
    """One nonnegative slack per surrogate constraint.

    With ``norm="2"`` the objective is ||s||_2 (same minimisers as ||s||_2^2);
    with ``norm="inf"`` it is max_j s_j, which reproduces the shared-slack problem.
    """
    recs = _surrogated(problem, with_epigraph=False)
    m = len(recs)
    b = _Builder(problem, m + 1)
    cols = np.arange(b.base, b.base + m)
    tau = b.base + m
    b.lb[cols] = 0.0
    for rec, col in zip(recs, cols):
        b.add(build_surrogate(rec, problem.splits[rec.form], z, slack_col=int(col)))
    b.res_region()
    b.flow_disks()
    if norm == "2":
        b.socs.append(SocBlock(Affine.scalar({tau: 1.0}), Affine(cols, np.eye(m), np.zeros(m))))
    elif norm == "inf":
        for col in cols:
            b.rows.append(Affine([int(col), tau], [[1.0, -1.0]], [0.0]))
    else:
        raise ValueError("norm must be '2' or 'inf'")
    c = np.zeros(b.n)
    c[tau] = 1.0
    return b.finish(c, kind=DIAGNOSIS, z=np.asarray(z, complex).copy(),
                    slack_cols=cols, slack_ids=[r.id for r in recs], cost_col=tau)


def max_violation(problem: OpfProblem, x: np.ndarray, with_epigraph: bool = True) -> float:
    """Largest violation of the QCQP records at the real candidate ``x``."""
    v = problem.voltage(x)
    worst = 0.0
    for rec in problem.constraints:
        if rec.kind == GEN_EPIGRAPH and not with_epigraph:
            continue
        worst = max(worst, record_violation(problem, rec, v, x))
    return worst


def record_violation(problem: OpfProblem, rec: ConstraintRecord, v: np.ndarray, x: np.ndarray) -> float:
    val = problem.forms[rec.form](v) + sum(c * x[j] for j, c in rec.linear)
    return val - rec.const if rec.side == "upper" else rec.const - val


def build_sca_subproblem(problem: OpfProblem, z: np.ndarray, *, start: np.ndarray | None = None,
                         margin: float = 0.0, feasibility_tol: float = SCA_FEASIBILITY_TOL) -> Subproblem:
    """Minimise the OPF cost over the slack-free inner approximation at ``z``.

    ``start`` is the full real candidate (voltages, RES dispatch, alpha, flow
    auxiliaries) that ``z`` came from; when given it must satisfy every QCQP
    constraint within ``feasibility_tol``. ``margin`` is a fixed right-hand-side
    allowance that keeps a numerically feasible z inside its own restriction.
    """
    z = np.asarray(z, complex)
    if start is not None:
        viol = max_violation(problem, start, with_epigraph=False)
        if viol > feasibility_tol:
            raise ValueError(f"SCA needs a feasible start; max violation is {viol:.3e}")
    lay = problem.layout
    b = _Builder(problem, 1)
    t = b.base
    for rec in _surrogated(problem, with_epigraph=True):
        b.add(build_surrogate(rec, problem.splits[rec.form], z, margin=margin))
    b.res_region()
    b.flow_disks()

    c = np.zeros(b.n)
    c0 = 0.0
    quad_cols, quad_coef, quad_const = [], [], []
    for j, key in enumerate(problem.gen_keys):
        gc = problem.cost.gen.get(key, GenCost())
        col = lay.alpha.start + j
        c[col] += gc.b1
        c0 += gc.b0
        if gc.b2 > 0:
            quad_cols.append([col]), quad_coef.append([np.sqrt(gc.b2)]), quad_const.append(0.0)
    for j, u in enumerate(problem.res_units):
        rc = problem.cost.res.get((u.bus, u.phase), ResCost())
        ip, iq = lay.p_res.start + j, lay.q_res.start + j
        c[ip] -= rc.c1
        c0 += rc.c1 * u.available_power
        c[iq] += rc.d1
        if rc.c2 > 0:
            r = np.sqrt(rc.c2)
            quad_cols.append([ip]), quad_coef.append([-r]), quad_const.append(r * u.available_power)
        if rc.d2 > 0:
            quad_cols.append([iq]), quad_coef.append([np.sqrt(rc.d2)]), quad_const.append(0.0)
    if quad_cols:
        cols = np.array([cc[0] for cc in quad_cols])
        coef = np.zeros((len(cols), len(cols)))
        coef[np.arange(len(cols)), np.arange(len(cols))] = [q[0] for q in quad_coef]
        # sum of squares <= t  <=>  ||y||^2 <= 2 (t/2) (1)
        b.rsocs.append(RsocBlock(Affine.scalar({t: 0.5}), Affine.scalar(const=1.0),
                                 Affine(cols, coef, np.array(quad_const))))
        b.lb[t] = 0.0
        c[t] = 1.0
    else:
        b.lb[t] = b.ub[t] = 0.0
    return b.finish(c, c0, kind=SCA, z=z.copy(), cost_col=t)
