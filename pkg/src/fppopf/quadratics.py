"""Hermitian quadratic forms on the stacked phasor vector.

Every matrix used by the OPF constraints is low rank and touches only a few
(bus, phase) positions, so a form is stored as a dense block on its support.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .network import Line, NetworkModel, PhaseIndexMap

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class HermitianForm:
    support: np.ndarray
    block: np.ndarray
    dim: int
    label: str = ""

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        block = np.asarray(self.block, dtype=complex)
        if block.shape != (support.size, support.size):
            raise ValueError("block shape does not match support")
        scale = max(1.0, float(np.abs(block).max(initial=0.0)))
        if np.abs(block - block.conj().T).max(initial=0.0) > HERMITIAN_TOL * scale:
            raise ValueError(f"form {self.label!r} is not Hermitian")
        support.setflags(write=False)
        block.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "block", block)

    @classmethod
    def from_dense(cls, a: np.ndarray, label: str = "") -> HermitianForm:
        a = np.asarray(a, dtype=complex)
        nz = np.flatnonzero(np.any(a != 0, axis=0) | np.any(a != 0, axis=1))
        return cls(nz, a[np.ix_(nz, nz)], a.shape[0], label)

    @property
    def matrix(self) -> sp.csr_matrix:
        s = self.support
        r, c = np.meshgrid(s, s, indexing="ij")
        m = sp.coo_matrix((self.block.ravel(), (r.ravel(), c.ravel())), shape=(self.dim, self.dim))
        return m.tocsr()

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __call__(self, v: np.ndarray) -> float:
        """v^H A v (real for Hermitian A)."""
        w = np.asarray(v)[self.support]
        return float(np.real(np.vdot(w, self.block @ w)))

    def apply(self, v: np.ndarray) -> np.ndarray:
        """A v restricted to the support."""
        return self.block @ np.asarray(v)[self.support]

    def __neg__(self) -> HermitianForm:
        return HermitianForm(self.support, -self.block, self.dim, self.label)

    def is_zero(self) -> bool:
        return not np.any(self.block)


@dataclass(frozen=True)
class HermitianSplit:
    """PSD/NSD decomposition A = plus + minus.

    ``plus_factor`` R satisfies plus = R^H R on the shared support; its rows are
    sqrt(lambda_i) u_i^H for the positive eigenpairs.
    """

    plus: HermitianForm
    minus: HermitianForm
    plus_factor: np.ndarray
    minus_factor: np.ndarray

    @cached_property
    def _negated(self) -> HermitianSplit:
        # -A = (-minus) + (-plus): the roles swap.
        return HermitianSplit(-self.minus, -self.plus, self.minus_factor, self.plus_factor)

    def negated(self) -> HermitianSplit:
        return self._negated

    @cached_property
    def lifted_plus_factor(self) -> np.ndarray:
        """:func:`lift_factor` of ``plus_factor``, computed once."""
        return lift_factor(self.plus_factor)


def eigen_split(form: HermitianForm, rtol: float = 1e-14) -> HermitianSplit:
    """Split a Hermitian form into its positive and negative semidefinite parts."""
    b = form.block
    if b.size and np.abs(b - b.conj().T).max() > HERMITIAN_TOL * max(1.0, np.abs(b).max()):
        raise ValueError(f"form {form.label!r} is not Hermitian")
    b = 0.5 * (b + b.conj().T)
    if b.size == 0:
        empty = np.zeros((0, 0), complex)
        return HermitianSplit(form, form, empty, empty)
    lam, u = np.linalg.eigh(b)
    cut = rtol * max(np.abs(lam).max(), 1e-300)
    pos = lam > cut
    neg = lam < -cut
    rp = np.sqrt(lam[pos])[:, None] * u[:, pos].conj().T
    rn = np.sqrt(-lam[neg])[:, None] * u[:, neg].conj().T
    plus = rp.conj().T @ rp
    minus = -(rn.conj().T @ rn)
    return HermitianSplit(
        HermitianForm(form.support, 0.5 * (plus + plus.conj().T), form.dim, form.label + "+"),
        HermitianForm(form.support, 0.5 * (minus + minus.conj().T), form.dim, form.label + "-"),
        rp,
        rn,
    )


def _row_forms(i: int, row: sp.csr_matrix | np.ndarray, dim: int, label: str):
    """Real- and reactive-power forms for the product v_i * conj(g^T v).

    Builds 1/2 (e g^T + conj(g) e^T) and j/2 (e g^T - conj(g) e^T).
    """
    if sp.issparse(row):
        row = row.tocsr()
        cols, vals = row.indices, row.data
    else:
        row = np.asarray(row).ravel()
        cols = np.flatnonzero(row)
        vals = row[cols]
    support = np.union1d(cols, [i]).astype(np.int64)
    pos = {c: k for k, c in enumerate(support)}
    g = np.zeros(support.size, complex)
    for c, val in zip(cols, vals):
        g[pos[c]] += val
    e = np.zeros(support.size)
    e[pos[i]] = 1.0
    eg = np.outer(e, g)
    p = 0.5 * (eg + eg.conj().T)
    q = 0.5j * (eg - eg.conj().T)
    return (HermitianForm(support, p, dim, "P" + label), HermitianForm(support, q, dim, "Q" + label))


@dataclass
class InjectionMatrices:
    """Per (bus, phase): real-power, reactive-power and magnitude-squared forms;
    per monitored (line, end, phase): sending-end real and reactive flow forms."""

    real_power: dict[tuple[int, str], HermitianForm]
    reactive_power: dict[tuple[int, str], HermitianForm]
    magnitude: dict[tuple[int, str], HermitianForm]
    flow_p: dict[tuple[str, str, str], HermitianForm] = field(default_factory=dict)
    flow_q: dict[tuple[str, str, str], HermitianForm] = field(default_factory=dict)


def build_injection_matrices(y: sp.spmatrix, index: PhaseIndexMap) -> InjectionMatrices:
    y = sp.csr_matrix(y)
    n = index.total_dim
    real_power, reactive_power, magnitude = {}, {}, {}
    for i, (bus, phase) in enumerate(index):
        tag = f"[{bus}.{phase}]"
        real_power[(bus, phase)], reactive_power[(bus, phase)] = _row_forms(i, y.getrow(i), n, tag)
        magnitude[(bus, phase)] = HermitianForm(np.array([i]), np.ones((1, 1)), n, "M" + tag)
    return InjectionMatrices(real_power, reactive_power, magnitude)


def build_flow_matrices(net: NetworkModel, index: PhaseIndexMap, line: Line,
                        end: str = "from") -> dict[str, tuple[HermitianForm, HermitianForm]]:
    """Sending-end flow forms of ``line`` seen from ``end`` ('from' or 'to').

    Returns phase -> (F_P, F_Q) with v^H F_P v = Re{v_l conj(i_lm)} and
    v^H F_Q v = Im{v_l conj(i_lm)}, where i_lm is the pi-model current
    leaving bus l towards m.
    """
    if line.smax is None:
        raise ValueError(f"line {line.id} has no flow limit")
    if end not in ("from", "to"):
        raise ValueError("end must be 'from' or 'to'")
    yff, yft, ytf, ytt = line.branch_blocks()
    if end == "from":
        own, other, y_own, y_other = line.from_bus, line.to_bus, yff, yft
    else:
        own, other, y_own, y_other = line.to_bus, line.from_bus, ytt, ytf
    n = index.total_dim
    oi = index.indices(own, line.phases)
    ti = index.indices(other, line.phases)
    out = {}
    for a, phase in enumerate(line.phases):
        row = np.zeros(n, complex)
        row[oi] += y_own[a]
        row[ti] += y_other[a]
        out[phase] = _row_forms(oi[a], row, n, f"[{line.id}:{end}.{phase}]")
    return out


def lift_hermitian(block: np.ndarray) -> np.ndarray:
    """Real symmetric lift: v^H A v = x^T [[Re A, -Im A], [Im A, Re A]] x, x = [Re v; Im v]."""
    return _lift(block)


def lift_factor(r: np.ndarray) -> np.ndarray:
    """Real lift of a complex factor R so that ||R v||^2 = ||G x||^2."""
    return _lift(r)


def _lift(a: np.ndarray) -> np.ndarray:
    m, n = a.shape
    out = np.empty((2 * m, 2 * n))
    out[:m, :n] = a.real
    out[:m, n:] = -a.imag
    out[m:, :n] = a.imag
    out[m:, n:] = a.real
    return out
