"""Real-valued conic programs (linear, second-order and rotated cones) and the solver contract.

The interior-point backend is Clarabel; everything the rest of the package
sees is :class:`ConicProgram` in and :class:`ConicSolution` out.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TextIO

import clarabel
import numpy as np
import scipy.sparse as sp

from .quadratics import HermitianForm, lift_hermitian

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITER = "max-iter"
NUMERICAL_FAILURE = "numerical-failure"
INFEASIBLE = "infeasible"

DEFAULT_TOL = 1e-9


@dataclass
class Affine:
    """m affine functions  coef @ x[cols] + const."""

    cols: np.ndarray
    coef: np.ndarray
    const: np.ndarray

    def __post_init__(self):
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.coef = np.atleast_2d(np.asarray(self.coef, dtype=float))
        self.const = np.atleast_1d(np.asarray(self.const, dtype=float))
        if self.coef.shape != (self.const.size, self.cols.size):
            raise ValueError(f"affine block shape {self.coef.shape} inconsistent with "
                             f"{self.const.size} rows and {self.cols.size} columns")

    @classmethod
    def scalar(cls, terms: dict[int, float] | None = None, const: float = 0.0) -> Affine:
        terms = terms or {}
        cols = np.fromiter(terms.keys(), dtype=np.int64, count=len(terms))
        coef = np.fromiter(terms.values(), dtype=float, count=len(terms))[None, :]
        return cls(cols, coef, np.array([const]))

    @property
    def rows(self) -> int:
        return self.const.size

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.coef @ x[self.cols] + self.const

    def scaled(self, a: float) -> Affine:
        return Affine(self.cols, a * self.coef, a * self.const)


@dataclass
class SocBlock:
    """||y(x)|| <= t(x)."""

    t: Affine
    y: Affine


@dataclass
class RsocBlock:
    """||y(x)||^2 <= 2 u(x) w(x), with u, w >= 0."""

    u: Affine
    w: Affine
    y: Affine


@dataclass
class ConicProgram:
    """minimize c^T x + c0 over x in R^n subject to

    eq_a x = eq_b, ineq_a x <= ineq_b, lb <= x <= ub, and the cone blocks.
    ``names`` optionally labels rows of ``ineq`` and cone blocks for debugging.
    """

    n: int
    c: np.ndarray
    c0: float = 0.0
    eq_a: sp.csr_matrix | None = None
    eq_b: np.ndarray | None = None
    ineq_a: sp.csr_matrix | None = None
    ineq_b: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    socs: list[SocBlock] = field(default_factory=list)
    rsocs: list[RsocBlock] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.shape != (self.n,):
            raise ValueError("objective length does not match n")
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, float)
        if self.eq_a is None:
            self.eq_a, self.eq_b = sp.csr_matrix((0, self.n)), np.zeros(0)
        if self.ineq_a is None:
            self.ineq_a, self.ineq_b = sp.csr_matrix((0, self.n)), np.zeros(0)
        self.eq_a = sp.csr_matrix(self.eq_a)
        self.ineq_a = sp.csr_matrix(self.ineq_a)
        self.eq_b = np.asarray(self.eq_b, float)
        self.ineq_b = np.asarray(self.ineq_b, float)
        if self.eq_a.shape[1] != self.n or self.ineq_a.shape[1] != self.n:
            raise ValueError("constraint matrices must have n columns")
        for blk in self.socs:
            self._check(blk.t, blk.y)
        for blk in self.rsocs:
            self._check(blk.u, blk.w, blk.y)

    def _check(self, *affs: Affine):
        for a in affs:
            if a.cols.size and (a.cols.min() < 0 or a.cols.max() >= self.n):
                raise ValueError("cone block references a variable outside x")

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.c0)

    def violations(self, x: np.ndarray) -> dict[str, float]:
        """Largest violation per constraint family, recomputed from the stored data."""
        out = {"eq": 0.0, "ineq": 0.0, "bounds": 0.0, "soc": 0.0, "rsoc": 0.0}
        if self.eq_b.size:
            out["eq"] = float(np.abs(self.eq_a @ x - self.eq_b).max())
        if self.ineq_b.size:
            out["ineq"] = float(max(0.0, (self.ineq_a @ x - self.ineq_b).max()))
        out["bounds"] = float(max(0.0, np.max(self.lb - x, initial=0.0), np.max(x - self.ub, initial=0.0)))
        for blk in self.socs:
            out["soc"] = max(out["soc"], float(np.linalg.norm(blk.y(x)) - blk.t(x)[0]))
        for blk in self.rsocs:
            u, w = blk.u(x)[0], blk.w(x)[0]
            yy = float(np.sum(blk.y(x) ** 2))
            # measured as the violation of the equivalent SOC
            t = (u + w) / math.sqrt(2)
            r = math.hypot(math.sqrt(yy), (u - w) / math.sqrt(2))
            out["rsoc"] = max(out["rsoc"], r - t)
        return out

    def primal_residual(self, x: np.ndarray) -> float:
        return max(0.0, *self.violations(x).values())

    def dump(self, fh: TextIO) -> None:
        """Write a plain-text canonical form: header, then sparse triplets."""
        fh.write("# fppopf conic program v1\n")
        fh.write(f"# n {self.n} eq {self.eq_b.size} ineq {self.ineq_b.size} "
                 f"soc {len(self.socs)} rsoc {len(self.rsocs)}\n")
        fh.write(f"objective_constant {float(self.c0)!r}\n")
        for j in np.flatnonzero(self.c):
            fh.write(f"c {j} {float(self.c[j])!r}\n")
        for j in range(self.n):
            if np.isfinite(self.lb[j]) or np.isfinite(self.ub[j]):
                fh.write(f"bound {j} {float(self.lb[j])!r} {float(self.ub[j])!r}\n")
        for tag, a, b in (("eq", self.eq_a, self.eq_b), ("ineq", self.ineq_a, self.ineq_b)):
            coo = a.tocoo()
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{tag} {i} {j} {float(v)!r}\n")
            for i, v in enumerate(b):
                fh.write(f"{tag}_rhs {i} {float(v)!r}\n")
        for k, blk in enumerate(self.socs):
            _dump_affine(fh, f"soc {k} t", blk.t)
            _dump_affine(fh, f"soc {k} y", blk.y)
        for k, blk in enumerate(self.rsocs):
            _dump_affine(fh, f"rsoc {k} u", blk.u)
            _dump_affine(fh, f"rsoc {k} w", blk.w)
            _dump_affine(fh, f"rsoc {k} y", blk.y)


def _dump_affine(fh: TextIO, prefix: str, a: Affine) -> None:
    for i in range(a.rows):
        for j, col in enumerate(a.cols):
            if a.coef[i, j] != 0:
                fh.write(f"{prefix} {i} {col} {float(a.coef[i, j])!r}\n")
        fh.write(f"{prefix}_const {i} {float(a.const[i])!r}\n")


@dataclass
class ConicSolution:
    x: np.ndarray
    objective: float
    primal_residual: float
    status: str
    duality_gap: float = math.nan
    iterations: int = 0
    solve_time: float = 0.0
    backend_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def lift_complex(z: np.ndarray, form: HermitianForm) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lift a Hermitian form to real data on x = [Re v; Im v].

    Returns (columns, A_real, g) where v^H A v = x_s^T A_real x_s on the columns,
    and g are the real coefficients of 2 Re{z^H A v}.
    """
    n = form.dim
    cols = np.concatenate([form.support, form.support + n])
    w = form.block @ np.asarray(z)[form.support]
    g = 2.0 * np.concatenate([w.real, w.imag])
    return cols, lift_hermitian(form.block), g


def _scatter(affs: list[Affine], n: int, sign: float = -1.0) -> tuple[sp.csc_matrix, np.ndarray]:
    rows, cols, vals, rhs = [], [], [], []
    r0 = 0
    for a in affs:
        m, k = a.coef.shape
        if k:
            rows.append(np.repeat(np.arange(r0, r0 + m), k))
            cols.append(np.tile(a.cols, m))
            vals.append(sign * a.coef.ravel())
        rhs.append(a.const)
        r0 += m
    if not affs:
        return sp.csc_matrix((0, n)), np.zeros(0)
    mat = sp.coo_matrix(
        (np.concatenate(vals) if vals else np.zeros(0),
         (np.concatenate(rows) if rows else np.zeros(0, int), np.concatenate(cols) if cols else np.zeros(0, int))),
        shape=(r0, n),
    )
    return mat.tocsc(), np.concatenate(rhs)


_STATUS = {
    "Solved": OPTIMAL,
    "AlmostSolved": OPTIMAL,
    "MaxIterations": MAX_ITER,
    "MaxTime": MAX_ITER,
    "PrimalInfeasible": INFEASIBLE,
    "AlmostPrimalInfeasible": INFEASIBLE,
}


def solve_conic(p: ConicProgram, tol: float = DEFAULT_TOL, max_iter: int = 400) -> ConicSolution:
    """Solve ``p`` with the interior-point backend and re-check the answer.

    A backend "optimal" is only reported as optimal when the primal residual,
    recomputed from ``p``'s own data, is within ``max(tol, 10 * tol * scale)``
    where ``scale`` is the largest right-hand-side magnitude.
    """
    n = p.n
    blocks_a, blocks_b, cones = [], [], []
    if p.eq_b.size:
        blocks_a.append(p.eq_a.tocsc())
        blocks_b.append(p.eq_b)
        cones.append(clarabel.ZeroConeT(p.eq_b.size))
    nonneg_a = [p.ineq_a.tocsc()]
    nonneg_b = [p.ineq_b]
    fin_lo = np.flatnonzero(np.isfinite(p.lb))
    fin_hi = np.flatnonzero(np.isfinite(p.ub))
    if fin_lo.size:
        nonneg_a.append(sp.csc_matrix((-np.ones(fin_lo.size), (np.arange(fin_lo.size), fin_lo)), shape=(fin_lo.size, n)))
        nonneg_b.append(-p.lb[fin_lo])
    if fin_hi.size:
        nonneg_a.append(sp.csc_matrix((np.ones(fin_hi.size), (np.arange(fin_hi.size), fin_hi)), shape=(fin_hi.size, n)))
        nonneg_b.append(p.ub[fin_hi])
    m_nonneg = sum(b.size for b in nonneg_b)
    if m_nonneg:
        blocks_a.append(sp.vstack(nonneg_a).tocsc())
        blocks_b.append(np.concatenate(nonneg_b))
        cones.append(clarabel.NonnegativeConeT(m_nonneg))
    soc_affs: list[Affine] = []
    for blk in p.socs:
        soc_affs += [blk.t, blk.y]
        cones.append(clarabel.SecondOrderConeT(1 + blk.y.rows))
    s2 = 1.0 / math.sqrt(2.0)
    for blk in p.rsocs:
        t = Affine(np.concatenate([blk.u.cols, blk.w.cols]),
                   np.hstack([blk.u.coef, blk.w.coef]) * s2, (blk.u.const + blk.w.const) * s2)
        d = Affine(np.concatenate([blk.u.cols, blk.w.cols]),
                   np.hstack([blk.u.coef, -blk.w.coef]) * s2, (blk.u.const - blk.w.const) * s2)
        soc_affs += [t, d, blk.y]
        cones.append(clarabel.SecondOrderConeT(2 + blk.y.rows))
    if soc_affs:
        a, b = _scatter(soc_affs, n)
        blocks_a.append(a)
        blocks_b.append(b)
    a_mat = sp.vstack(blocks_a).tocsc() if blocks_a else sp.csc_matrix((0, n))
    b_vec = np.concatenate(blocks_b) if blocks_b else np.zeros(0)
    a_mat.sum_duplicates()

    # a unit-norm objective keeps the gap and feasibility tolerances comparable
    c_scale = float(np.abs(p.c).max(initial=0.0)) or 1.0
    scale = max(1.0, float(np.abs(b_vec).max(initial=0.0)))
    sol = _run_backend(p, a_mat, b_vec, cones, c_scale, scale, tol, max_iter, robust=False)
    if sol.backend_status == "AlmostSolved" and not (sol.ok and sol.duality_gap <= tol * max(1.0, abs(sol.objective))):
        # the default step rule sometimes stalls short of the requested gap;
        # shorter steps with more refinement usually get through
        retry = _run_backend(p, a_mat, b_vec, cones, c_scale, scale, tol, max_iter, robust=True)
        if retry.ok and (not sol.ok or retry.backend_status == "Solved" or retry.duality_gap < sol.duality_gap):
            log.debug("robust re-solve: gap %.2e -> %.2e", sol.duality_gap, retry.duality_gap)
            sol = retry
    return sol


def _run_backend(p: ConicProgram, a_mat, b_vec, cones, c_scale: float, scale: float, tol: float,
                 max_iter: int, robust: bool) -> ConicSolution:
    n = p.n
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = 1e-7
    settings.max_iter = max_iter
    settings.presolve_enable = False
    if robust:
        settings.max_step_fraction = 0.9
        settings.iterative_refinement_max_iter = 50
        settings.iterative_refinement_reltol = 1e-15
        settings.iterative_refinement_abstol = 1e-15
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), p.c / c_scale, a_mat, b_vec, cones, settings)
    res = solver.solve()
    x = np.asarray(res.x, dtype=float)
    backend = str(res.status)
    status = _STATUS.get(backend, NUMERICAL_FAILURE)
    resid = p.primal_residual(x) if x.size == n and np.all(np.isfinite(x)) else math.inf
    if status == OPTIMAL and resid > max(tol, 10 * tol * scale):
        log.debug("backend reported %s but re-checked residual is %.3e", backend, resid)
        status = NUMERICAL_FAILURE
    gap = c_scale * abs(res.obj_val - res.obj_val_dual) if np.isfinite(res.obj_val_dual) else math.nan
    obj = p.objective(x) if np.all(np.isfinite(x)) else math.nan
    return ConicSolution(x, obj, resid, status, gap, res.iterations, res.solve_time, backend)
