"""Regenerate the bundled case files under src/fppopf/data.

Usage: python scripts/make_cases.py [output-dir]
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "fppopf" / "data"

# IEEE 9-bus data (public test case)
CASE9_BUS = [
    [1, 3, 0, 0], [2, 2, 0, 0], [3, 2, 0, 0], [4, 1, 0, 0], [5, 1, 90, 30],
    [6, 1, 0, 0], [7, 1, 100, 35], [8, 1, 0, 0], [9, 1, 125, 50],
]
CASE9_GEN = [[1, 300, -300, 250, 10], [2, 300, -300, 300, 10], [3, 300, -300, 270, 10]]
CASE9_BRANCH = [
    [1, 4, 0, 0.0576, 0, 250], [4, 5, 0.017, 0.092, 0.158, 250], [5, 6, 0.039, 0.17, 0.358, 150],
    [3, 6, 0, 0.0586, 0, 300], [6, 7, 0.0119, 0.1008, 0.209, 150], [7, 8, 0.0085, 0.072, 0.149, 250],
    [8, 2, 0, 0.0625, 0, 250], [8, 9, 0.032, 0.161, 0.306, 250], [9, 4, 0.01, 0.085, 0.176, 250],
]
CASE9_COST = [[0.11, 5, 150], [0.085, 1.2, 600], [0.1225, 1, 335]]

# IEEE 14-bus data (public test case, including its generator reactive limits)
CASE14_BUS = [
    [1, 3, 0, 0, 0], [2, 2, 21.7, 12.7, 0], [3, 2, 94.2, 19, 0], [4, 1, 47.8, -3.9, 0],
    [5, 1, 7.6, 1.6, 0], [6, 2, 11.2, 7.5, 0], [7, 1, 0, 0, 0], [8, 2, 0, 0, 0],
    [9, 1, 29.5, 16.6, 19], [10, 1, 9, 5.8, 0], [11, 1, 3.5, 1.8, 0], [12, 1, 6.1, 1.6, 0],
    [13, 1, 13.5, 5.8, 0], [14, 1, 14.9, 5, 0],
]
CASE14_GEN = [[1, 10, 0, 332.4, 0], [2, 50, -40, 140, 0], [3, 40, 0, 100, 0], [6, 24, -6, 100, 0],
              [8, 24, -6, 100, 0]]
CASE14_BRANCH = [
    [1, 2, 0.01938, 0.05917, 0.0528, 0], [1, 5, 0.05403, 0.22304, 0.0492, 0],
    [2, 3, 0.04699, 0.19797, 0.0438, 0], [2, 4, 0.05811, 0.17632, 0.034, 0],
    [2, 5, 0.05695, 0.17388, 0.0346, 0], [3, 4, 0.06701, 0.17103, 0.0128, 0],
    [4, 5, 0.01335, 0.04211, 0, 0], [4, 7, 0, 0.20912, 0, 0.978], [4, 9, 0, 0.55618, 0, 0.969],
    [5, 6, 0, 0.25202, 0, 0.932], [6, 11, 0.09498, 0.1989, 0, 0], [6, 12, 0.12291, 0.25581, 0, 0],
    [6, 13, 0.06615, 0.13027, 0, 0], [7, 8, 0, 0.17615, 0, 0], [7, 9, 0, 0.11001, 0, 0],
    [9, 10, 0.03181, 0.0845, 0, 0], [9, 14, 0.12711, 0.27038, 0, 0], [10, 11, 0.08205, 0.19207, 0, 0],
    [12, 13, 0.22092, 0.19988, 0, 0], [13, 14, 0.17093, 0.34802, 0, 0],
]
CASE14_COST = [[0.0430293, 20, 0], [0.25, 20, 0], [0.01, 40, 0], [0.01, 40, 0], [0.01, 40, 0]]


def _g(x: float) -> str:
    return f"{x:.10g}"


def write_m(path: Path, name: str, note: str, base: float, bus, gen, branch, cost) -> None:
    """bus rows: id type Pd Qd Gs Bs Vmax Vmin; gen rows: bus Qmax Qmin Pmax Pmin;
    branch rows: f t r x b rateA tap."""
    out = [f"function mpc = {name}", *(f"% {line}" for line in note.splitlines()),
           "mpc.version = '2';", f"mpc.baseMVA = {_g(base)};", "",
           "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in bus:
        out.append("\t" + "\t".join(_g(x) for x in (b[0], b[1], b[2], b[3], b[4], b[5], 1, 1, 0, 0, 1, b[6], b[7])) + ";")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for g in gen:
        out.append("\t" + "\t".join(_g(x) for x in (g[0], 0, 0, g[1], g[2], 1, base, 1, g[3], g[4])) + ";")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status", "mpc.branch = ["]
    for br in branch:
        out.append("\t" + "\t".join(_g(x) for x in (br[0], br[1], br[2], br[3], br[4], br[5], br[5], br[5], br[6], 0, 1)) + ";")
    out += ["];", "", "%% model startup shutdown n c2 c1 c0", "mpc.gencost = ["]
    for c in cost:
        out.append("\t" + "\t".join(_g(x) for x in (2, 0, 0, 3, *c)) + ";")
    out += ["];", ""]
    path.write_text("\n".join(out))


def case9mod(vmin9: float) -> dict:
    bus = []
    for b in CASE9_BUS:
        pd, qd = b[2], b[3]
        if b[0] == 9:
            qd = 130.0
        bus.append([b[0], b[1], pd, qd, 0, 0, 1.05, vmin9 if b[0] == 9 else 0.95])
    gen = [[g[0], g[1], g[2], g[3], g[4]] for g in CASE9_GEN]
    branch = [[*br, 0] for br in CASE9_BRANCH]
    return dict(base=100, bus=bus, gen=gen, branch=branch, cost=CASE9_COST)


def case14q() -> dict:
    bus = [[b[0], b[1], b[2], b[3], 0, b[4], 1.06, 0.94] for b in CASE14_BUS]
    branch = [[br[0], br[1], br[2], br[3], br[4], 0, br[5]] for br in CASE14_BRANCH]
    return dict(base=100, bus=bus, gen=CASE14_GEN, branch=branch, cost=CASE14_COST)


# ---------------------------------------------------------------- synthetic three-phase feeder

FEEDER_PARENT = {
    2: 1, 3: 2, 4: 3, 5: 4, 6: 5, 7: 6, 8: 7, 9: 8, 10: 9, 11: 10, 12: 11,
    13: 3, 14: 13, 15: 14, 16: 15,
    17: 5, 18: 17, 19: 18, 20: 19, 21: 20,
    22: 7, 23: 22, 24: 23,
    25: 9, 26: 25, 27: 26, 28: 27,
    29: 11, 30: 29, 31: 30,
    32: 12, 33: 32, 34: 33,
    35: 14, 36: 35, 37: 36,
}
FEEDER_PHASES = {16: "b", 21: "a", 24: "ac", 31: "a", 34: "c", 37: "c"}
# (bus, phase, available kW): PV placement and sizes of the three-phase study
FEEDER_PV = [(7, "c", 97.86), (10, "a", 97.86), (13, "b", 195.71), (20, "a", 195.71), (22, "c", 195.71),
             (26, "c", 195.71), (28, "c", 97.86), (29, "a", 195.71), (30, "a", 195.71), (32, "c", 97.86),
             (33, "c", 195.71), (35, "b", 195.71), (36, "c", 342.5)]
# phase impedance per mile (ohm), typical 3-wire underground configuration
Z_MILE = np.array([[0.7982 + 0.4463j, 0.3192 + 0.0328j, 0.2849 - 0.0143j],
                   [0.3192 + 0.0328j, 0.7891 + 0.4041j, 0.3192 + 0.0328j],
                   [0.2849 - 0.0143j, 0.3192 + 0.0328j, 0.7982 + 0.4463j]])
FEEDER_KV_LN = 4.8 / np.sqrt(3)


def feeder37(seed: int = 37) -> dict:
    rng = np.random.default_rng(seed)
    base_mva = 1.0  # per-phase power base
    zbase = FEEDER_KV_LN**2 / base_mva
    idx = {"a": 0, "b": 1, "c": 2}
    phases = {k: FEEDER_PHASES.get(k, "abc") for k in range(1, 38)}
    buses = []
    for k in range(1, 38):
        ph = list(phases[k])
        d = {"id": k, "phases": ph}
        if k == 1:
            d["reference"] = True
            d["gen"] = {p: {"pmin": -5, "pmax": 5, "qmin": -5, "qmax": 5} for p in ph}
        else:
            kw = rng.uniform(10, 60, len(ph))
            d["loads"] = {p: [round(w / 1e3, 5), round(0.48 * w / 1e3, 5)] for p, w in zip(ph, kw)}
        d["vmin"] = 0.95
        d["vmax"] = 1.05
        buses.append(d)
    lines = []
    for child, parent in FEEDER_PARENT.items():
        ph = [p for p in "abc" if p in phases[child]]
        miles = rng.uniform(0.05, 0.2)
        sel = [idx[p] for p in ph]
        z = Z_MILE[np.ix_(sel, sel)] * miles / zbase
        lines.append({"id": f"{parent}-{child}", "from": parent, "to": child, "phases": ph,
                      "Z": [[[round(e.real, 8), round(e.imag, 8)] for e in row] for row in z]})
    res = [{"bus": b, "phase": p, "Pavail": kw / 1e3, "Smax": 2 * kw / 1e3, "min_pf": 0.7} for b, p, kw in FEEDER_PV]
    costs = {"gen": [{"bus": 1, "phase": p, "b2": 0.1, "b1": 0, "b0": 0} for p in "abc"],
             "res": [{"bus": b, "phase": p, "c2": 1, "c1": 0, "d2": 0.5, "d1": 0} for b, p, _ in FEEDER_PV]}
    return {"schema": "fppopf-case/1", "name": "feeder37_synthetic", "base_mva": base_mva,
            "buses": buses, "lines": lines, "res_units": res, "costs": costs}


def tiny_cases() -> dict[str, dict]:
    def two_bus(name: str, load: tuple[float, float], vmin: float = 0.95, vmax: float = 1.05) -> dict:
        return {"schema": "fppopf-case/1", "name": name, "base_mva": 100,
                "buses": [{"id": 1, "phases": ["a"], "reference": True, "vmin": vmin, "vmax": vmax,
                           "gen": {"pmin": 0, "pmax": 500, "qmin": -500, "qmax": 500}},
                          {"id": 2, "phases": ["a"], "loads": [load[0], load[1]], "vmin": vmin, "vmax": vmax}],
                "lines": [{"id": "1-2", "from": 1, "to": 2, "phases": ["a"], "Z": [[[0.01, 0.1]]]}],
                "costs": {"gen": [{"bus": 1, "phase": "a", "b2": 0.01, "b1": 10}]}}
    return {
        "two_bus.json": two_bus("two_bus", (80, 20)),
        "two_bus_noload.json": two_bus("two_bus_noload", (0, 0)),
        "two_bus_infeasible.json": two_bus("two_bus_infeasible", (600, 300), 0.98, 1.02),
        "one_bus.json": {"schema": "fppopf-case/1", "name": "one_bus", "base_mva": 1,
                         "buses": [{"id": 1, "phases": ["a"], "reference": True}]},
    }


def main(out: Path = OUT) -> None:
    out.mkdir(parents=True, exist_ok=True)
    note9 = ("9-bus case with voltage limits narrowed to [0.95, 1.05] and the reactive demand at bus 9\n"
             "raised to 130 MVAr; the bus-9 lower voltage limit cannot be met.")
    write_m(out / "case9mod.m", "case9mod", note9, **case9mod(0.95))
    write_m(out / "case9mod_relaxed.m", "case9mod_relaxed",
            "case9mod with the bus-9 lower voltage limit relaxed to 0.94", **case9mod(0.94))
    write_m(out / "case14Q.m", "case14Q",
            "IEEE 14-bus case with its tight generator reactive limits (Qmax = 10 MVAr at bus 1)", **case14q())
    (out / "feeder37_synthetic.json").write_text(json.dumps(feeder37(), indent=1) + "\n")
    for name, data in tiny_cases().items():
        (out / name).write_text(json.dumps(data, indent=1) + "\n")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else OUT)
