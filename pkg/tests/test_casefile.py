import json

import pytest

from fppopf import bundled_case
from fppopf.casefile import (
    CaseError,
    case_to_json,
    convert_case,
    dump_json_case,
    dump_matpower,
    parse_case,
    parse_json_case,
    parse_matpower,
)
from fppopf.pipeline import solve

MINI = """function mpc = mini
mpc.baseMVA = 100;
mpc.bus = [
 1 3 0 0 0 0 1 1 0 230 1 1.05 0.95;
 2 1 50 10 0 0 1 1 0 230 1 1.05 0.95;
];
mpc.gen = [
 1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
 1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
 2 0 0 3 0.01 10 5;
];
"""


def test_wb5_parse(wb5):
    net, cost, _ = wb5
    b1, b4 = net.bus(1), net.bus(4)
    g = b1.gen_at("a")
    assert (g.pmax * 100, g.qmax * 100, g.qmin * 100) == pytest.approx((350, 300, -30))
    assert b4.load_at("a") * 100 == pytest.approx(75 + 10j)
    assert net.bus(2).load_at("a") * 100 == pytest.approx(150 + 20j)


def test_wb5_mod_only_changes_node2_reactive_load():
    a, _ = parse_case(bundled_case("wb5.m"))
    b, _ = parse_case(bundled_case("wb5_mod.m"))
    assert b.bus(2).load_at("a") * 100 == pytest.approx(150 + 70j)
    for x, y in zip(a.buses, b.buses):
        if x.id != 2:
            assert x == y


def test_case9mod_relaxed_differs_in_bus9_lower_limit():
    a, _ = parse_case(bundled_case("case9mod.m"))
    b, _ = parse_case(bundled_case("case9mod_relaxed.m"))
    assert a.bus(9).vmin["a"] == 0.95 and b.bus(9).vmin["a"] == 0.94
    assert all(a.bus(k).vmin == b.bus(k).vmin for k in range(1, 9))


def test_matpower_units_and_costs():
    net, cost = parse_matpower(MINI)
    assert net.base_mva == 100
    assert net.bus(2).load_at("a") == pytest.approx(0.5 + 0.1j)
    line = net.lines[0]
    assert line.y_shunt[0, 0] == pytest.approx(0.02j)
    assert line.smax is None
    c = cost.gen[(1, "a")]
    # 0.01 $/MW^2 * 100^2, 10 $/MW * 100
    assert (c.b2, c.b1, c.b0) == pytest.approx((100.0, 1000.0, 5.0))


def test_one_bus_json_solves():
    net, cost = parse_case(bundled_case("one_bus.json"))
    assert len(net.lines) == 0
    report = solve(net, cost)
    assert report.status == "optimal"
    assert report.cost["total"] == 0.0


def test_malformed_json_names_the_key():
    case = json.loads(bundled_case("two_bus.json").read_text())
    case["buses"][1]["vmin"] = "low"
    with pytest.raises(CaseError, match=r"case\.buses\[1\]\.vmin"):
        parse_json_case(case)
    case = json.loads(bundled_case("two_bus.json").read_text())
    case["lines"][0]["impedance"] = case["lines"][0].pop("Z")
    with pytest.raises(CaseError, match=r"case\.lines\[0\]\.impedance: unknown key"):
        parse_json_case(case)
    with pytest.raises(CaseError, match="line 1"):
        parse_json_case('{"base_mva": 1,')


def test_missing_key_reported():
    with pytest.raises(CaseError, match="missing key 'buses'"):
        parse_json_case({"base_mva": 1})


@pytest.mark.parametrize("extra, match", [
    ("mpc.dcline = [\n 1 2 1 0 0 0 0 1 1 0 0 0 0 0 0 0 0;\n];\n", "DC lines"),
    ("mpc.gencost_q = [\n 2 0 0 1 0;\n];\n", "reactive-power costs"),
])
def test_unsupported_features_rejected(extra, match):
    with pytest.raises(CaseError, match=match):
        parse_matpower(MINI + extra)


def test_several_generators_on_a_bus_rejected():
    text = MINI.replace(" 1 0 0 100 -100 1 100 1 200 0;\n", " 1 0 0 100 -100 1 100 1 200 0;\n 1 0 0 10 -10 1 100 1 20 0;\n")
    with pytest.raises(CaseError, match="several in-service generators"):
        parse_matpower(text)


def test_matpower_errors_name_line():
    with pytest.raises(CaseError, match="line 4: mpc.bus row has 12 columns"):
        parse_matpower(MINI.replace("1 1.05 0.95;\n 2", "1 1.05;\n 2", 1))
    with pytest.raises(CaseError, match="missing mpc.branch"):
        parse_matpower(MINI.split("mpc.branch")[0])


@pytest.mark.parametrize("name", ["wb5.m", "case14Q.m", "feeder37_synthetic.json", "two_bus.json"])
def test_json_round_trip_is_idempotent(name):
    net, cost = parse_case(bundled_case(name))
    text = dump_json_case(net, cost)
    net2, cost2 = parse_json_case(text)
    assert dump_json_case(net2, cost2) == text
    assert case_to_json(net2, cost2) == json.loads(text)


def test_matpower_round_trip(wb5):
    net, cost, _ = wb5
    net2, cost2 = parse_matpower(dump_matpower(net, cost), name="wb5")
    assert dump_json_case(net2, cost2) == dump_json_case(net, cost)


def test_convert(tmp_path):
    convert_case(bundled_case("wb5.m"), tmp_path / "wb5.json")
    convert_case(tmp_path / "wb5.json", tmp_path / "wb5.m")
    a, ca = parse_case(bundled_case("wb5.m"))
    b, cb = parse_case(tmp_path / "wb5.m")
    assert dump_json_case(a, ca) == dump_json_case(b, cb)
    with pytest.raises(CaseError, match="unknown output format"):
        convert_case(bundled_case("wb5.m"), tmp_path / "wb5.txt")


def test_unreadable_file(tmp_path):
    with pytest.raises(CaseError, match="cannot read"):
        parse_case(tmp_path / "missing.m")


def test_feeder_is_three_phase():
    net, _ = parse_case(bundled_case("feeder37_synthetic.json"))
    assert len(net.buses) == 37
    assert any(len(b.phases) == 3 for b in net.buses)
    assert any(len(b.phases) < 3 for b in net.buses)
    assert net.res_units
