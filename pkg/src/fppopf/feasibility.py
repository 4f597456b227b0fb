"""Direct feasibility measurement and a Gauss-Newton feasibility refinement.

Interior-point answers of the nearly degenerate restrictions that appear once
the iterates become feasible are only accurate to roughly 1e-7. The
refinement takes such a point and drives the active constraints to their
bounds with a few minimum-norm Newton steps on the voltages.
"""

from __future__ import annotations

import math

import numpy as np

from .problem import FLOW_P, FLOW_Q, GEN_EPIGRAPH, OpfProblem, sync_auxiliaries
from .quadratics import HermitianForm, lift_hermitian


def full_violation(problem: OpfProblem, x: np.ndarray) -> float:
    """Largest violation of every OPF constraint at ``x``.

    Covers balance, voltage, generator limits, the RES operating region and
    apparent-power flow limits; flows are evaluated from the voltages, not
    read from the auxiliary variables.
    """
    lay = problem.layout
    v = problem.voltage(x)
    worst = 0.0
    for rec in problem.constraints:
        if rec.kind in (GEN_EPIGRAPH, FLOW_P, FLOW_Q):
            continue
        val = problem.forms[rec.form](v) + sum(c * x[j] for j, c in rec.linear)
        worst = max(worst, val - rec.const if rec.side == "upper" else rec.const - val)
    for fl in problem.flow_limits:
        key = (fl.line, fl.end, fl.phase)
        p, q = problem.matrices.flow_p[key](v), problem.matrices.flow_q[key](v)
        worst = max(worst, math.hypot(p, q) - fl.smax)
    for j, u in enumerate(problem.res_units):
        p, q = x[lay.p_res.start + j], x[lay.q_res.start + j]
        worst = max(worst, -p, p - u.available_power, math.hypot(p, q) - u.inverter_capacity,
                    abs(q) - math.tan(u.max_angle) * p)
    return float(worst)


def constraint_violations(problem: OpfProblem, x: np.ndarray) -> dict[str, float]:
    """Signed violation of every balance, voltage and RES record, by constraint id."""
    v = problem.voltage(x)
    out = {}
    for rec in problem.constraints:
        if rec.kind in (GEN_EPIGRAPH, FLOW_P, FLOW_Q):
            continue
        val = problem.forms[rec.form](v) + sum(c * x[j] for j, c in rec.linear)
        out[rec.id] = float(val - rec.const if rec.side == "upper" else rec.const - val)
    return out


def _gradient(form: HermitianForm, v: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Columns and values of d(v^H A v)/d[Re v; Im v]."""
    s = form.support
    xs = np.concatenate([v[s].real, v[s].imag])
    return np.concatenate([s, s + n]), 2.0 * lift_hermitian(form.block) @ xs


def _active_rows(problem: OpfProblem, x: np.ndarray, active_tol: float):
    """(form keys, weights, fixed linear part, target) for each active condition.

    A two-sided balance pair with equal bounds contributes one row. Flow disks
    appear as P^2 + Q^2 = smax^2 rows (weights refer to the flow forms).
    """
    v = problem.voltage(x)
    rows = []
    by_form: dict[tuple, list] = {}
    for rec in problem.constraints:
        if rec.kind in (GEN_EPIGRAPH, FLOW_P, FLOW_Q):
            continue
        by_form.setdefault((rec.form, rec.linear), []).append(rec)
    for (form, linear), recs in by_form.items():
        fixed = sum(c * x[j] for j, c in linear)
        val = problem.forms[form](v) + fixed
        bounds = {r.side: r.const for r in recs}
        lo, hi = bounds.get("lower", -math.inf), bounds.get("upper", math.inf)
        if hi - lo <= 1e-12:
            rows.append(("form", form, fixed, 0.5 * (lo + hi)))
        elif val >= hi - active_tol:
            rows.append(("form", form, fixed, hi))
        elif val <= lo + active_tol:
            rows.append(("form", form, fixed, lo))
    for fl in problem.flow_limits:
        key = (fl.line, fl.end, fl.phase)
        p, q = problem.matrices.flow_p[key](v), problem.matrices.flow_q[key](v)
        if math.hypot(p, q) >= fl.smax - active_tol:
            rows.append(("flow", key, 0.0, fl.smax**2))
    return rows


def refine_feasibility(problem: OpfProblem, x: np.ndarray, *, active_tol: float = 1e-6,
                       max_steps: int = 8) -> tuple[np.ndarray, float]:
    """Pull a nearly feasible candidate onto its active constraints.

    Only voltages move; RES dispatch is kept and the generator/flow auxiliaries
    are re-synchronised. Returns the best candidate seen (possibly ``x``
    itself) and its :func:`full_violation`.
    """
    n = problem.dim
    x = sync_auxiliaries(problem, x)
    best, best_res = x, full_violation(problem, x)
    rows = _active_rows(problem, x, active_tol)
    if not rows or best_res == 0.0:
        return best, best_res
    mats = problem.matrices
    for _ in range(max_steps):
        v = problem.voltage(x)
        jac = np.zeros((len(rows), 2 * n))
        r = np.zeros(len(rows))
        for i, (kind, key, fixed, target) in enumerate(rows):
            if kind == "form":
                cols, g = _gradient(problem.forms[key], v, n)
                np.add.at(jac[i], cols, g)
                r[i] = target - (problem.forms[key](v) + fixed)
            else:
                fp, fq = mats.flow_p[key], mats.flow_q[key]
                p, q = fp(v), fq(v)
                for form, val in ((fp, p), (fq, q)):
                    cols, g = _gradient(form, v, n)
                    np.add.at(jac[i], cols, 2.0 * val * g)
                r[i] = target - (p * p + q * q)
        if np.abs(r).max() < 1e-15:
            break
        step, *_ = np.linalg.lstsq(jac, r, rcond=None)
        x = x.copy()
        x[problem.layout.v_re] += step[:n]
        x[problem.layout.v_im] += step[n:]
        x = sync_auxiliaries(problem, x)
        res = full_violation(problem, x)
        if res < best_res:
            best, best_res = x, res
        if np.linalg.norm(step) < 1e-14:
            break
    return best, best_res
