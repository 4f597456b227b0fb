import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fppopf.network import Bus, GenLimits, Line, NetworkModel, ResUnit, flat_voltage
from fppopf.problem import (
    BUS_KINDS,
    GEN_EPIGRAPH,
    CostModel,
    GenCost,
    ResCost,
    assemble,
    count_constraints,
    evaluate_cost,
    res_region_contains,
    sync_auxiliaries,
)


def test_wb5_data(wb5):
    net = wb5[0]
    g1 = net.bus(1).gen_at("a")
    assert (g1.pmax, g1.qmax, g1.qmin) == pytest.approx((3.5, 3.0, -0.3))
    assert net.bus(2).load_at("a") == pytest.approx(1.5 + 0.2j)
    assert net.bus(4).load_at("a") == pytest.approx(0.75 + 0.1j)


def test_wb5_constraint_enumeration(wb5):
    net, _, problem = wb5
    # independent enumeration: every (bus, phase) carries the six bus families,
    # every generator phase one epigraph
    expected = {f"{kind}/bus{b.id}/{p}" for b in net.buses for p in b.phases for kind in BUS_KINDS}
    expected |= {f"{GEN_EPIGRAPH}/bus{b.id}/{p}" for b in net.buses for p in b.phases if b.has_gen(p)}
    ids = [c.id for c in problem.constraints]
    assert len(ids) == len(set(ids))
    assert set(ids) == expected
    counts = count_constraints(problem)
    assert sum(counts[k] for k in BUS_KINDS) == 6 * 5
    assert counts[GEN_EPIGRAPH] == 2


def test_bare_bus_has_zero_injection_terms(wb5):
    problem = wb5[2]
    for cid in ("active-balance-upper/bus3/a", "active-balance-lower/bus3/a",
                "reactive-balance-upper/bus3/a", "reactive-balance-lower/bus3/a"):
        rec = problem.constraint(cid)
        assert rec.linear == ()
    # bus 3 carries a load; an empty bus has all-zero right-hand sides
    net = NetworkModel([Bus(1, ("a",), gen={"a": GenLimits(0, 1, -1, 1)}, is_reference=True), Bus(2, ("a",))],
                       [Line("1-2", 1, 2, ("a",), [[0.1j]])])
    prob = assemble(net, CostModel())
    for rec in prob.constraints:
        if rec.bus == 2 and "balance" in rec.kind:
            assert rec.const == 0.0 and rec.linear == ()


def test_assembly_is_deterministic(feeder):
    net, cost, problem = feeder
    again = assemble(net, cost)
    assert [c.id for c in again.constraints] == [c.id for c in problem.constraints]


def test_flow_limits_add_link_records():
    net = NetworkModel([Bus(1, ("a",), gen={"a": GenLimits(0, 1, -1, 1)}, is_reference=True), Bus(2, ("a",))],
                       [Line("1-2", 1, 2, ("a",), [[0.1j]], smax=0.5)])
    counts = count_constraints(assemble(net, CostModel()))
    # two ends x (P and Q links) x (upper and lower)
    assert counts["flow-P-link"] == 4 and counts["flow-Q-link"] == 4


def test_cost_for_undeclared_unit_rejected(wb5):
    net = wb5[0]
    with pytest.raises(ValueError, match="undeclared generator"):
        assemble(net, CostModel({(2, "a"): GenCost(1.0)}))
    with pytest.raises(ValueError, match="undeclared RES"):
        assemble(net, CostModel(res={(2, "a"): ResCost(1.0)}))
    with pytest.raises(ValueError):
        CostModel({(1, "a"): GenCost(-1.0)})


def pv_unit(p_avail=0.0986):
    return ResUnit.from_power_factor(4, "a", p_avail, 2 * p_avail, 0.7)


def test_res_region_examples():
    unit = pv_unit()
    assert res_region_contains(unit, 0.0, 0.0)
    assert res_region_contains(unit, 0.0986 - 0.00582, -0.01146)
    assert not res_region_contains(unit, 0.0986 + 1e-6, 0.0)
    assert not res_region_contains(unit, 0.05, 0.06)  # beyond the power-factor cone


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(-2, 2), st.floats(0.1, 2.0), st.floats(0.5, 0.99))
def test_res_region_definition(p, q, pbar, pf):
    unit = ResUnit.from_power_factor(1, "a", pbar, 1.5 * pbar, pf)
    inside = 0 <= p <= pbar and p * p + q * q <= (1.5 * pbar) ** 2 and abs(q) <= np.tan(np.arccos(pf)) * p
    assert res_region_contains(unit, p, q) == inside


def test_evaluate_cost_examples():
    net = NetworkModel([Bus(1, ("a",), gen={"a": GenLimits(0, 5, -5, 5)}, is_reference=True)],
                       res_units=[ResUnit.from_power_factor(1, "a", 1.0, 2.0, 0.7)])
    cost = CostModel({(1, "a"): GenCost(0.1)}, {(1, "a"): ResCost(1.0, 0.0, 0.5, 0.0)})
    problem = assemble(net, cost)
    out = evaluate_cost(problem, [2.0], [1.0], [0.0])
    assert out.generation == pytest.approx(0.4)
    assert out.curtailment == 0.0 and out.reactive == 0.0
    out = evaluate_cost(problem, [0.0], [0.5], [0.2])
    assert out.curtailment == pytest.approx(0.25)
    assert out.reactive == pytest.approx(0.5 * 0.04)
    assert out.total == pytest.approx(0.27)


def test_recovered_generation_respects_box_when_constraints_hold(wb5_report):
    for g in wb5_report.generation:
        assert g["within_limits"]


def test_sync_auxiliaries_tightens_epigraph(wb5, rng):
    net, _, problem = wb5
    x = problem.stack(flat_voltage(net) * (1 + 0.01 * rng.normal(size=net.total_dim)))
    x = sync_auxiliaries(problem, x)
    v = problem.voltage(x)
    for j, key in enumerate(problem.gen_keys):
        expected = problem.matrices.real_power[key](v) + net.bus(key[0]).load_at("a").real
        assert x[problem.layout.alpha][j] == pytest.approx(expected)
