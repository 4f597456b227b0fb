"""Multi-phase network model, phasor index map and bus admittance matrix."""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

PHASES = ("a", "b", "c")
PHASE_ANGLE_DEG = {"a": 0.0, "b": -120.0, "c": 120.0}


def _ordered_phases(phases: Iterable[str]) -> tuple[str, ...]:
    phases = tuple(phases)
    unknown = set(phases) - set(PHASES)
    if unknown:
        raise ValueError(f"unknown phase label(s) {sorted(unknown)}; expected a subset of {PHASES}")
    if len(set(phases)) != len(phases):
        raise ValueError(f"duplicate phase labels in {phases}")
    return tuple(p for p in PHASES if p in phases)


@dataclass(frozen=True)
class GenLimits:
    pmin: float
    pmax: float
    qmin: float
    qmax: float

    def __post_init__(self):
        if self.pmin > self.pmax:
            raise ValueError(f"pmin {self.pmin} exceeds pmax {self.pmax}")
        if self.qmin > self.qmax:
            raise ValueError(f"qmin {self.qmin} exceeds qmax {self.qmax}")


ZERO_GEN = GenLimits(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Bus:
    """A (possibly multi-phase) node. All powers are per-unit on the system base.

    ``load`` maps phase -> complex demand P + jQ. ``gen`` holds generator limits
    for phases that host a conventional unit; absent phases have zero limits.
    ``shunt`` is an optional per-phase shunt admittance to ground.
    """

    id: int
    phases: tuple[str, ...]
    load: Mapping[str, complex] = field(default_factory=dict)
    gen: Mapping[str, GenLimits] = field(default_factory=dict)
    vmin: Mapping[str, float] = field(default_factory=dict)
    vmax: Mapping[str, float] = field(default_factory=dict)
    shunt: Mapping[str, complex] = field(default_factory=dict)
    is_reference: bool = False

    def __post_init__(self):
        object.__setattr__(self, "phases", _ordered_phases(self.phases))
        for name in ("load", "gen", "vmin", "vmax", "shunt"):
            extra = set(getattr(self, name)) - set(self.phases)
            if extra:
                raise ValueError(f"bus {self.id}: {name} given for undeclared phase(s) {sorted(extra)}")
        vmin = {p: float(self.vmin.get(p, 0.9)) for p in self.phases}
        vmax = {p: float(self.vmax.get(p, 1.1)) for p in self.phases}
        for p in self.phases:
            if not 0 < vmin[p] <= vmax[p]:
                raise ValueError(f"bus {self.id} phase {p}: need 0 < vmin <= vmax, got {vmin[p]}, {vmax[p]}")
        object.__setattr__(self, "vmin", vmin)
        object.__setattr__(self, "vmax", vmax)
        object.__setattr__(self, "load", {p: complex(s) for p, s in self.load.items()})
        object.__setattr__(self, "shunt", {p: complex(y) for p, y in self.shunt.items()})
        object.__setattr__(self, "gen", dict(self.gen))

    def load_at(self, phase: str) -> complex:
        return self.load.get(phase, 0j)

    def gen_at(self, phase: str) -> GenLimits:
        return self.gen.get(phase, ZERO_GEN)

    def has_gen(self, phase: str) -> bool:
        return phase in self.gen


@dataclass(frozen=True)
class ResUnit:
    """Inverter-interfaced renewable unit on one phase of a bus.

    ``max_angle`` is the largest allowed power-factor angle, so a minimum power
    factor ``pf`` corresponds to ``arccos(pf)``.
    """

    bus: int
    phase: str
    available_power: float
    inverter_capacity: float
    max_angle: float

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.available_power < 0:
            raise ValueError("available_power must be nonnegative")
        if self.inverter_capacity < 0:
            raise ValueError("inverter_capacity must be nonnegative")
        if not 0 < self.max_angle < np.pi / 2:
            raise ValueError("max_angle must lie in (0, pi/2)")

    @classmethod
    def from_power_factor(cls, bus: int, phase: str, available_power: float,
                          inverter_capacity: float, min_pf: float) -> ResUnit:
        return cls(bus, phase, available_power, inverter_capacity, float(np.arccos(min_pf)))

    @property
    def min_power_factor(self) -> float:
        return float(np.cos(self.max_angle))

    @property
    def name(self) -> str:
        return f"res:{self.bus}.{self.phase}"


@dataclass(frozen=True)
class Line:
    """pi-equivalent line. ``z`` and ``y_shunt`` are |phases| x |phases| per-unit matrices.

    ``tap`` is an off-nominal turns ratio on the from side (1.0 for plain lines);
    ``smax`` an optional apparent-power limit applied per phase at both ends.
    """

    id: str
    from_bus: int
    to_bus: int
    phases: tuple[str, ...]
    z: np.ndarray
    y_shunt: np.ndarray | None = None
    smax: float | None = None
    tap: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "phases", _ordered_phases(self.phases))
        n = len(self.phases)
        z = np.atleast_2d(np.asarray(self.z, dtype=complex))
        y = np.zeros((n, n), complex) if self.y_shunt is None else np.atleast_2d(np.asarray(self.y_shunt, dtype=complex))
        if z.shape != (n, n) or y.shape != (n, n):
            raise ValueError(f"line {self.id}: impedance/shunt must be {n}x{n} for phases {self.phases}")
        if self.from_bus == self.to_bus:
            raise ValueError(f"line {self.id}: from and to bus coincide")
        if self.tap <= 0:
            raise ValueError(f"line {self.id}: tap ratio must be positive")
        if self.smax is not None and self.smax <= 0:
            raise ValueError(f"line {self.id}: smax must be positive")
        z.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y_shunt", y)

    @property
    def series_admittance(self) -> np.ndarray:
        try:
            if np.linalg.cond(self.z) > 1e14:
                raise np.linalg.LinAlgError
            ys = np.linalg.inv(self.z)
        except np.linalg.LinAlgError:
            raise ValueError(f"line {self.id}: series impedance matrix is singular") from None
        # inversion round-off would otherwise break the exact symmetry of Y
        return 0.5 * (ys + ys.T) if np.array_equal(self.z, self.z.T) else ys

    def branch_blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Return (Yff, Yft, Ytf, Ytt) with i_from = Yff v_from + Yft v_to and
        i_to = Ytf v_from + Ytt v_to."""
        ys = self.series_admittance
        half = 0.5 * self.y_shunt
        t = self.tap
        return (ys + half) / t**2, -ys / t, -ys / t, ys + half


class PhaseIndexMap:
    """Bus-major ordering of the (bus, phase) pairs into the stacked phasor vector."""

    def __init__(self, pairs: Iterable[tuple[int, str]]):
        self._pairs: list[tuple[int, str]] = list(pairs)
        self._index = {pair: i for i, pair in enumerate(self._pairs)}
        if len(self._index) != len(self._pairs):
            raise ValueError("duplicate (bus, phase) pair in index map")

    @classmethod
    def from_buses(cls, buses: Iterable[Bus]) -> PhaseIndexMap:
        return cls((b.id, p) for b in buses for p in b.phases)

    @property
    def total_dim(self) -> int:
        return len(self._pairs)

    def __len__(self) -> int:
        return len(self._pairs)

    def __getitem__(self, pair: tuple[int, str]) -> int:
        return self._index[pair]

    def __contains__(self, pair) -> bool:
        return pair in self._index

    def __iter__(self):
        return iter(self._pairs)

    def pair(self, i: int) -> tuple[int, str]:
        return self._pairs[i]

    def indices(self, bus: int, phases: Iterable[str]) -> list[int]:
        return [self._index[(bus, p)] for p in phases]


class NetworkModel:
    """Immutable network: buses, lines, renewable units and the phasor index map."""

    def __init__(self, buses: Iterable[Bus], lines: Iterable[Line] = (),
                 res_units: Iterable[ResUnit] = (), base_mva: float = 1.0, name: str = "network"):
        self.buses: tuple[Bus, ...] = tuple(buses)
        self.lines: tuple[Line, ...] = tuple(lines)
        self.res_units: tuple[ResUnit, ...] = tuple(res_units)
        self.base_mva = float(base_mva)
        self.name = name
        if self.base_mva <= 0:
            raise ValueError("base_mva must be positive")
        self._bus_by_id = {b.id: b for b in self.buses}
        self._validate()
        self.index = PhaseIndexMap.from_buses(self.buses)

    def _validate(self):
        if not self.buses:
            raise ValueError("network has no buses")
        if len(self._bus_by_id) != len(self.buses):
            raise ValueError("duplicate bus ids")
        refs = [b.id for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise ValueError(f"exactly one reference bus required, found {len(refs)}")
        line_ids = set()
        for line in self.lines:
            if line.id in line_ids:
                raise ValueError(f"duplicate line id {line.id}")
            line_ids.add(line.id)
            for end in (line.from_bus, line.to_bus):
                if end not in self._bus_by_id:
                    raise ValueError(f"line {line.id} references unknown bus {end}")
                missing = set(line.phases) - set(self._bus_by_id[end].phases)
                if missing:
                    raise ValueError(f"line {line.id}: phases {sorted(missing)} not present at bus {end}")
        seen = set()
        for unit in self.res_units:
            bus = self._bus_by_id.get(unit.bus)
            if bus is None or unit.phase not in bus.phases:
                raise ValueError(f"RES unit at {unit.bus}.{unit.phase} is not on a declared bus phase")
            if (unit.bus, unit.phase) in seen:
                raise ValueError(f"more than one RES unit at {unit.bus}.{unit.phase}")
            seen.add((unit.bus, unit.phase))
        pos = {b.id: i for i, b in enumerate(self.buses)}
        n = len(self.buses)
        if self.lines:
            rows = [pos[l.from_bus] for l in self.lines]
            cols = [pos[l.to_bus] for l in self.lines]
            graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        else:
            graph = sp.coo_matrix((n, n))
        ncomp, _ = connected_components(graph, directed=False)
        if ncomp != 1:
            raise ValueError(f"network graph is not connected ({ncomp} components)")

    def bus(self, bus_id: int) -> Bus:
        return self._bus_by_id[bus_id]

    @property
    def reference_bus(self) -> Bus:
        return next(b for b in self.buses if b.is_reference)

    @property
    def total_dim(self) -> int:
        return self.index.total_dim

    @property
    def is_single_phase(self) -> bool:
        return all(len(b.phases) == 1 for b in self.buses)

    def gen_phases(self) -> list[tuple[int, str]]:
        return [(b.id, p) for b in self.buses for p in b.phases if b.has_gen(p)]

    def monitored_lines(self) -> list[Line]:
        return [l for l in self.lines if l.smax is not None]

    def replace(self, buses=None, lines=None, res_units=None, name=None) -> NetworkModel:
        return NetworkModel(self.buses if buses is None else buses,
                            self.lines if lines is None else lines,
                            self.res_units if res_units is None else res_units,
                            self.base_mva, self.name if name is None else name)


def build_admittance(net: NetworkModel) -> sp.csr_matrix:
    """Assemble the bus admittance matrix Y with i = Y v.

    Each line contributes its series admittance inverse(Z) to the off-diagonal
    blocks (negated) and inverse(Z) plus half its shunt to both diagonal blocks.
    The result is complex symmetric.
    """
    idx = net.index
    rows: list[int] = []
    cols: list[int] = []
    vals: list[complex] = []

    def put(block, ri, ci):
        for a, r in enumerate(ri):
            for b, c in enumerate(ci):
                if block[a, b] != 0:
                    rows.append(r)
                    cols.append(c)
                    vals.append(block[a, b])

    for line in net.lines:
        yff, yft, ytf, ytt = line.branch_blocks()
        fi = idx.indices(line.from_bus, line.phases)
        ti = idx.indices(line.to_bus, line.phases)
        put(yff, fi, fi)
        put(yft, fi, ti)
        put(ytf, ti, fi)
        put(ytt, ti, ti)
    for bus in net.buses:
        for p, y in bus.shunt.items():
            if y != 0:
                i = idx[(bus.id, p)]
                rows.append(i)
                cols.append(i)
                vals.append(y)
    n = net.total_dim
    return sp.coo_matrix((np.asarray(vals, complex), (rows, cols)), shape=(n, n)).tocsr()


def flat_voltage(net: NetworkModel) -> np.ndarray:
    """Unit magnitude at every (bus, phase) with nominal angles 0, -120, +120 degrees."""
    angles = np.array([PHASE_ANGLE_DEG[p] for _, p in net.index])
    return np.exp(1j * np.deg2rad(angles))


def normalize_angles(net: NetworkModel, v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` so the reference bus' first phase sits at its nominal angle."""
    ref = net.reference_bus
    p = ref.phases[0]
    vr = v[net.index[(ref.id, p)]]
    if abs(vr) == 0:
        return v.copy()
    target = np.deg2rad(PHASE_ANGLE_DEG[p])
    return v * np.exp(1j * (target - np.angle(vr)))
