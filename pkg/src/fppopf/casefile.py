"""Case ingestion: MATPOWER-style ``.m`` files and the multi-phase JSON schema.

Powers in both formats are in MW / MVAr and are converted to per-unit on the
case base at ingest; impedances and admittances are already per-unit. Cost
coefficients are given per MW and rescaled so that the solver works in p.u.
"""

from __future__ import annotations

import json
import re
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

import numpy as np

from .network import PHASES, Bus, GenLimits, Line, NetworkModel, ResUnit
from .problem import CostModel, GenCost, ResCost

CASE_SCHEMA = "fppopf-case/1"


class CaseError(ValueError):
    """Malformed or unsupported case data; the message names the location."""


# --------------------------------------------------------------------------- MATPOWER

_BUS_COLS = 13
_GEN_COLS = 10
_BRANCH_COLS = 11
_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")
_UNSUPPORTED_BLOCKS = {"dcline": "DC lines", "gencost_q": "reactive-power costs", "areas": None}


def _strip_comment(line: str) -> str:
    cut = line.find("%")
    return line if cut < 0 else line[:cut]


def _read_matrix(name: str, body: list[tuple[int, str]]) -> list[tuple[int, list[float]]]:
    rows: list[tuple[int, list[float]]] = []
    for lineno, text in body:
        for chunk in text.split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                rows.append((lineno, [float(tok) for tok in chunk.replace(",", " ").split()]))
            except ValueError:
                raise CaseError(f"line {lineno}: mpc.{name} row is not numeric: {chunk!r}") from None
    return rows


def _split_blocks(text: str) -> tuple[dict[str, Any], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, Any] = {}
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        m = _ASSIGN.match(raw)
        i += 1
        if not m:
            continue
        name, rhs = m.group(1), m.group(2).strip()
        if rhs.startswith("["):
            body = [(i, rhs[1:])]
            while "]" not in body[-1][1]:
                if i >= len(lines):
                    raise CaseError(f"line {body[0][0]}: mpc.{name} matrix is not closed with ']'")
                body.append((i + 1, _strip_comment(lines[i])))
                i += 1
            last_no, last = body[-1]
            body[-1] = (last_no, last[: last.index("]")])
            matrices[name] = _read_matrix(name, body)
        else:
            scalars[name] = rhs.rstrip(";").strip().strip("'\"")
    return scalars, matrices


def _require_cols(name: str, rows, ncols: int):
    for lineno, row in rows:
        if len(row) < ncols:
            raise CaseError(f"line {lineno}: mpc.{name} row has {len(row)} columns, need at least {ncols}")


def parse_matpower(text: str, name: str = "case") -> tuple[NetworkModel, CostModel]:
    """Parse the bus/gen/branch/gencost subset of a MATPOWER case.

    Supported: polynomial costs of degree <= 2, off-nominal taps, bus shunts,
    branch ratings (RATE_A, 0 meaning unlimited), out-of-service rows.
    Rejected: DC lines, phase shifters, piecewise-linear costs, several
    generators on one bus, isolated buses.
    """
    scalars, mats = _split_blocks(text)
    for block, what in _UNSUPPORTED_BLOCKS.items():
        if block in mats and what is not None:
            raise CaseError(f"unsupported case feature: {what} (mpc.{block})")
    for block in ("bus", "gen", "branch"):
        if block not in mats:
            raise CaseError(f"missing mpc.{block} matrix")
    try:
        base = float(scalars.get("baseMVA", "100"))
    except ValueError:
        raise CaseError(f"mpc.baseMVA is not a number: {scalars['baseMVA']!r}") from None
    if base <= 0:
        raise CaseError("mpc.baseMVA must be positive")
    _require_cols("bus", mats["bus"], _BUS_COLS)
    _require_cols("gen", mats["gen"], _GEN_COLS)
    _require_cols("branch", mats["branch"], _BRANCH_COLS)

    gens: dict[int, tuple[int, GenLimits, int]] = {}
    gen_rows = mats["gen"]
    for k, (lineno, row) in enumerate(gen_rows):
        if row[7] <= 0:
            continue
        bus = int(row[0])
        if bus in gens:
            raise CaseError(f"line {lineno}: several in-service generators on bus {bus} are not supported")
        try:
            lim = GenLimits(row[9] / base, row[8] / base, row[4] / base, row[3] / base)
        except ValueError as exc:
            raise CaseError(f"line {lineno}: generator at bus {bus}: {exc}") from None
        gens[bus] = (k, lim, lineno)

    buses: list[Bus] = []
    for lineno, row in mats["bus"]:
        bid, btype = int(row[0]), int(row[1])
        if btype == 4:
            raise CaseError(f"line {lineno}: isolated bus {bid} (type 4) is not supported")
        load = {"a": complex(row[2], row[3]) / base} if row[2] or row[3] else {}
        shunt = {"a": complex(row[4], row[5]) / base} if row[4] or row[5] else {}
        gen = {"a": gens[bid][1]} if bid in gens else {}
        try:
            buses.append(Bus(bid, ("a",), load, gen, {"a": row[12]}, {"a": row[11]}, shunt,
                             is_reference=btype == 3))
        except ValueError as exc:
            raise CaseError(f"line {lineno}: {exc}") from None
    known = {b.id for b in buses}
    for bus, (_, _, lineno) in gens.items():
        if bus not in known:
            raise CaseError(f"line {lineno}: generator refers to unknown bus {bus}")

    lines: list[Line] = []
    seen: dict[str, int] = {}
    for lineno, row in mats["branch"]:
        if row[10] <= 0:
            continue
        f, t = int(row[0]), int(row[1])
        if len(row) > 9 and row[9] != 0:
            raise CaseError(f"line {lineno}: phase-shifting transformer {f}-{t} is not supported")
        for b in (f, t):
            if b not in known:
                raise CaseError(f"line {lineno}: branch refers to unknown bus {b}")
        lid = f"{f}-{t}"
        seen[lid] = seen.get(lid, 0) + 1
        if seen[lid] > 1:
            lid = f"{lid}#{seen[lid]}"
        tap = row[8] if row[8] != 0 else 1.0
        smax = row[5] / base if row[5] > 0 else None
        try:
            lines.append(Line(lid, f, t, ("a",), [[complex(row[2], row[3])]], [[1j * row[4]]], smax, tap))
        except ValueError as exc:
            raise CaseError(f"line {lineno}: {exc}") from None

    cost = CostModel()
    if "gencost" in mats:
        gc_rows = mats["gencost"]
        if len(gc_rows) < len(gen_rows):
            raise CaseError(f"mpc.gencost has {len(gc_rows)} rows for {len(gen_rows)} generators")
        costs = {}
        for bus, (k, _, _) in gens.items():
            lineno, row = gc_rows[k]
            costs[(bus, "a")] = _gencost(row, lineno, base)
        cost = CostModel(costs)
    try:
        net = NetworkModel(buses, lines, base_mva=base, name=name)
    except ValueError as exc:
        raise CaseError(str(exc)) from None
    return net, cost


def _gencost(row: list[float], lineno: int, base: float) -> GenCost:
    if len(row) < 4:
        raise CaseError(f"line {lineno}: gencost row too short")
    model, ncoef = int(row[0]), int(row[3])
    if model != 2:
        raise CaseError(f"line {lineno}: only polynomial generator costs (model 2) are supported")
    coef = row[4:4 + ncoef]
    if len(coef) != ncoef:
        raise CaseError(f"line {lineno}: gencost declares {ncoef} coefficients, found {len(coef)}")
    if ncoef > 3 and any(coef[: ncoef - 3]):
        raise CaseError(f"line {lineno}: cost polynomials above degree 2 are not supported")
    c2, c1, c0 = ([0.0] * 3 + list(coef))[-3:]
    if c2 < 0:
        raise CaseError(f"line {lineno}: negative quadratic cost coefficient makes the cost nonconvex")
    return GenCost(c2 * base * base, c1 * base, c0)


def dump_matpower(net: NetworkModel, cost: CostModel) -> str:
    if not net.is_single_phase or any(b.phases != ("a",) for b in net.buses):
        raise CaseError("only single-phase (phase 'a') networks can be written as MATPOWER cases")
    if net.res_units:
        raise CaseError("MATPOWER output cannot carry RES units; use the JSON format")
    base = net.base_mva
    out = [f"function mpc = {_ident(net.name)}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(base)};", "",
           "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in net.buses:
        btype = 3 if b.is_reference else (2 if b.has_gen("a") else 1)
        s, y = b.load_at("a") * base, b.shunt.get("a", 0j) * base
        out.append("\t" + "\t".join(_fmt(x) for x in (
            b.id, btype, s.real, s.imag, y.real, y.imag, 1, 1, 0, 0, 1, b.vmax["a"], b.vmin["a"])) + ";")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    gen_buses = [b for b in net.buses if b.has_gen("a")]
    for b in gen_buses:
        g = b.gen_at("a")
        out.append("\t" + "\t".join(_fmt(x) for x in (
            b.id, 0, 0, g.qmax * base, g.qmin * base, 1, base, 1, g.pmax * base, g.pmin * base)) + ";")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status", "mpc.branch = ["]
    for ln in net.lines:
        z, ysh = ln.z[0, 0], ln.y_shunt[0, 0]
        if ysh.real:
            raise CaseError(f"line {ln.id}: shunt conductance cannot be written as a MATPOWER branch")
        rate = ln.smax * base if ln.smax is not None else 0.0
        tap = 0.0 if ln.tap == 1.0 else ln.tap
        out.append("\t" + "\t".join(_fmt(x) for x in (
            ln.from_bus, ln.to_bus, z.real, z.imag, ysh.imag, rate, rate, rate, tap, 0, 1)) + ";")
    out += ["];", "", "%% model startup shutdown n c2 c1 c0", "mpc.gencost = ["]
    for b in gen_buses:
        c = cost.gen.get((b.id, "a"), GenCost())
        out.append("\t" + "\t".join(_fmt(x) for x in (2, 0, 0, 3, c.b2 / base**2, c.b1 / base, c.b0)) + ";")
    out += ["];", ""]
    return "\n".join(out)


def _ident(name: str) -> str:
    s = re.sub(r"\W", "_", name or "case")
    return s if s[:1].isalpha() else "case_" + s


# --------------------------------------------------------------------------- JSON

def _num(x: float) -> float | int:
    """Canonical float: 15 significant digits survive repeated unit conversion."""
    v = float(f"{float(x):.15g}")
    return int(v) if v.is_integer() and abs(v) < 2**53 else v


def _fmt(x: float) -> str:
    return repr(_num(x))


def _cpair(z: complex) -> list:
    return [_num(z.real), _num(z.imag)]


class _Reader:
    """Typed access into a JSON tree that reports the offending path."""

    def __init__(self, data: Any, path: str):
        self.data, self.path = data, path

    def _fail(self, msg: str):
        raise CaseError(f"{self.path}: {msg}")

    def obj(self, allowed: Iterable[str]) -> _Reader:
        if not isinstance(self.data, dict):
            self._fail("expected an object")
        extra = set(self.data) - set(allowed)
        if extra:
            raise CaseError(f"{self.path}.{sorted(extra)[0]}: unknown key")
        return self

    def has(self, key: str) -> bool:
        return key in self.data

    def __getitem__(self, key: str) -> _Reader:
        if key not in self.data:
            self._fail(f"missing key '{key}'")
        return _Reader(self.data[key], f"{self.path}.{key}")

    def get(self, key: str, default: Any) -> _Reader:
        return _Reader(self.data.get(key, default), f"{self.path}.{key}")

    def items(self) -> list[_Reader]:
        if not isinstance(self.data, list):
            self._fail("expected a list")
        return [_Reader(d, f"{self.path}[{i}]") for i, d in enumerate(self.data)]

    def number(self) -> float:
        if isinstance(self.data, bool) or not isinstance(self.data, (int, float)):
            self._fail(f"expected a number, got {self.data!r}")
        return float(self.data)

    def integer(self) -> int:
        if isinstance(self.data, bool) or not isinstance(self.data, int):
            self._fail(f"expected an integer, got {self.data!r}")
        return self.data

    def string(self) -> str:
        if not isinstance(self.data, str):
            self._fail(f"expected a string, got {self.data!r}")
        return self.data

    def complex(self) -> complex:
        if isinstance(self.data, (int, float)) and not isinstance(self.data, bool):
            return complex(self.data)
        if not (isinstance(self.data, list) and len(self.data) == 2):
            self._fail("expected a number or a [re, im] pair")
        re_, im_ = (_Reader(x, f"{self.path}[{i}]").number() for i, x in enumerate(self.data))
        return complex(re_, im_)

    def matrix(self, n: int) -> np.ndarray:
        rows = self.items()
        if len(rows) != n:
            self._fail(f"expected {n} rows for {n} phase(s), got {len(rows)}")
        out = np.zeros((n, n), complex)
        for i, r in enumerate(rows):
            cols = r.items()
            if len(cols) != n:
                r._fail(f"expected {n} entries, got {len(cols)}")
            for j, c in enumerate(cols):
                out[i, j] = c.complex()
        return out

    def phases(self) -> tuple[str, ...]:
        ph = [p.string() for p in self.items()]
        bad = [p for p in ph if p not in PHASES]
        if bad or not ph or len(set(ph)) != len(ph):
            self._fail(f"phases must be a nonempty, duplicate-free subset of {list(PHASES)}")
        return tuple(ph)

    def per_phase(self, phases: tuple[str, ...], conv) -> dict[str, Any]:
        """Either a scalar applied to every phase or a phase -> value object."""
        if isinstance(self.data, dict) and set(self.data) <= set(PHASES):
            self.obj(phases)
            return {p: conv(self[p]) for p in self.data}
        return {p: conv(self) for p in phases}

    def fail(self, msg: str):
        self._fail(msg)


_BUS_KEYS = ("id", "phases", "reference", "loads", "vmin", "vmax", "gen", "shunt")
_LINE_KEYS = ("id", "from", "to", "phases", "Z", "Yshunt", "Smax", "tap")
_RES_KEYS = ("bus", "phase", "Pavail", "Smax", "min_pf")
_GEN_KEYS = ("pmin", "pmax", "qmin", "qmax")


def parse_json_case(data: Mapping[str, Any] | str, name: str | None = None) -> tuple[NetworkModel, CostModel]:
    """Build a model from the multi-phase JSON schema (dict or JSON text)."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise CaseError(f"line {exc.lineno} column {exc.colno}: invalid JSON ({exc.msg})") from None
    root = _Reader(data, "case").obj(("schema", "name", "base_mva", "buses", "lines", "res_units", "costs"))
    if root.has("schema") and root["schema"].string() != CASE_SCHEMA:
        root["schema"].fail(f"unsupported schema {root['schema'].data!r}, expected {CASE_SCHEMA!r}")
    base = root["base_mva"].number()
    if base <= 0:
        root["base_mva"].fail("must be positive")
    case_name = root["name"].string() if root.has("name") else (name or "case")

    buses: list[Bus] = []
    for rb in root["buses"].items():
        rb.obj(_BUS_KEYS)
        ph = rb["phases"].phases()
        loads = rb.get("loads", {}).per_phase(ph, lambda r: r.complex() / base)
        gen = {}
        if rb.has("gen"):
            def limits(r: _Reader) -> GenLimits:
                r.obj(_GEN_KEYS)
                vals = [r[k].number() / base for k in ("pmin", "pmax", "qmin", "qmax")]
                try:
                    return GenLimits(*vals)
                except ValueError as exc:
                    r.fail(str(exc))
            gen = rb["gen"].per_phase(ph, limits)
        shunt = rb.get("shunt", {}).per_phase(ph, lambda r: r.complex() / base)
        vmin = rb.get("vmin", 0.9).per_phase(ph, _Reader.number)
        vmax = rb.get("vmax", 1.1).per_phase(ph, _Reader.number)
        ref = rb.get("reference", False).data
        if not isinstance(ref, bool):
            rb["reference"].fail("expected true or false")
        try:
            buses.append(Bus(rb["id"].integer(), ph, loads, gen, vmin, vmax, shunt, ref))
        except ValueError as exc:
            rb.fail(str(exc))

    lines: list[Line] = []
    for rl in root.get("lines", []).items():
        rl.obj(_LINE_KEYS)
        ph = rl["phases"].phases()
        f, t = rl["from"].integer(), rl["to"].integer()
        z = rl["Z"].matrix(len(ph))
        ysh = rl["Yshunt"].matrix(len(ph)) if rl.has("Yshunt") else None
        smax = rl["Smax"].number() / base if rl.has("Smax") and rl["Smax"].data is not None else None
        tap = rl["tap"].number() if rl.has("tap") else 1.0
        lid = rl["id"].string() if rl.has("id") else f"{f}-{t}"
        try:
            lines.append(Line(lid, f, t, ph, z, ysh, smax, tap))
        except ValueError as exc:
            rl.fail(str(exc))

    res: list[ResUnit] = []
    for rr in root.get("res_units", []).items():
        rr.obj(_RES_KEYS)
        pf = rr["min_pf"].number()
        if not 0 < pf < 1:
            rr["min_pf"].fail("must lie strictly between 0 and 1")
        try:
            res.append(ResUnit.from_power_factor(rr["bus"].integer(), rr["phase"].string(),
                                                 rr["Pavail"].number() / base, rr["Smax"].number() / base, pf))
        except ValueError as exc:
            rr.fail(str(exc))

    gen_cost: dict[tuple[int, str], GenCost] = {}
    res_cost: dict[tuple[int, str], ResCost] = {}
    if root.has("costs"):
        rc = root["costs"].obj(("gen", "res"))
        for g in rc.get("gen", []).items():
            g.obj(("bus", "phase", "b2", "b1", "b0"))
            key = (g["bus"].integer(), g["phase"].string())
            gen_cost[key] = GenCost(g.get("b2", 0.0).number() * base**2, g.get("b1", 0.0).number() * base,
                                    g.get("b0", 0.0).number())
        for r in rc.get("res", []).items():
            r.obj(("bus", "phase", "c2", "c1", "d2", "d1"))
            key = (r["bus"].integer(), r["phase"].string())
            res_cost[key] = ResCost(*(r.get(k, 0.0).number() * s for k, s in
                                      (("c2", base**2), ("c1", base), ("d2", base**2), ("d1", base))))
    try:
        net = NetworkModel(buses, lines, res, base_mva=base, name=case_name)
        cost = CostModel(gen_cost, res_cost)
    except ValueError as exc:
        raise CaseError(f"case: {exc}") from None
    return net, cost


def case_to_json(net: NetworkModel, cost: CostModel) -> dict[str, Any]:
    """Canonical JSON form: fixed key order, buses and lines in model order."""
    base = net.base_mva
    buses = []
    for b in net.buses:
        d: dict[str, Any] = {"id": b.id, "phases": list(b.phases)}
        if b.is_reference:
            d["reference"] = True
        if b.load:
            d["loads"] = {p: _cpair(b.load[p] * base) for p in b.phases if p in b.load}
        d["vmin"] = {p: _num(b.vmin[p]) for p in b.phases}
        d["vmax"] = {p: _num(b.vmax[p]) for p in b.phases}
        if b.gen:
            d["gen"] = {p: {k: _num(getattr(b.gen[p], k) * base) for k in _GEN_KEYS}
                        for p in b.phases if p in b.gen}
        if b.shunt:
            d["shunt"] = {p: _cpair(b.shunt[p] * base) for p in b.phases if p in b.shunt}
        buses.append(d)
    lines = []
    for ln in net.lines:
        d = {"id": ln.id, "from": ln.from_bus, "to": ln.to_bus, "phases": list(ln.phases),
             "Z": [[_cpair(z) for z in row] for row in ln.z]}
        if np.any(ln.y_shunt):
            d["Yshunt"] = [[_cpair(y) for y in row] for row in ln.y_shunt]
        if ln.smax is not None:
            d["Smax"] = _num(ln.smax * base)
        if ln.tap != 1.0:
            d["tap"] = _num(ln.tap)
        lines.append(d)
    res = [{"bus": u.bus, "phase": u.phase, "Pavail": _num(u.available_power * base),
            "Smax": _num(u.inverter_capacity * base), "min_pf": _num(u.min_power_factor)}
           for u in net.res_units]
    costs = {
        "gen": [{"bus": k[0], "phase": k[1], "b2": _num(c.b2 / base**2), "b1": _num(c.b1 / base),
                 "b0": _num(c.b0)} for k, c in sorted(cost.gen.items())],
        "res": [{"bus": k[0], "phase": k[1], "c2": _num(c.c2 / base**2), "c1": _num(c.c1 / base),
                 "d2": _num(c.d2 / base**2), "d1": _num(c.d1 / base)} for k, c in sorted(cost.res.items())],
    }
    return {"schema": CASE_SCHEMA, "name": net.name, "base_mva": _num(base), "buses": buses,
            "lines": lines, "res_units": res, "costs": costs}


def dump_json_case(net: NetworkModel, cost: CostModel) -> str:
    return json.dumps(case_to_json(net, cost), indent=1) + "\n"


# --------------------------------------------------------------------------- entry points

def parse_case(path: str | Path) -> tuple[NetworkModel, CostModel]:
    """Load a ``.m`` or ``.json`` case from disk."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseError(f"{path}: cannot read case file ({exc.strerror})") from None
    suffix = path.suffix.lower()
    try:
        if suffix == ".m":
            return parse_matpower(text, name=path.stem)
        if suffix == ".json":
            return parse_json_case(text, name=path.stem)
    except CaseError as exc:
        raise CaseError(f"{path.name}: {exc}") from None
    raise CaseError(f"{path}: unknown case format (expected .m or .json)")


def convert_case(src: str | Path, dst: str | Path) -> None:
    net, cost = parse_case(src)
    dst = Path(dst)
    if dst.suffix.lower() == ".json":
        dst.write_text(dump_json_case(net, cost))
    elif dst.suffix.lower() == ".m":
        dst.write_text(dump_matpower(net, cost))
    else:
        raise CaseError(f"{dst}: unknown output format (expected .m or .json)")
