import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fppopf import bundled_case, parse_case
from fppopf.network import Bus, Line, NetworkModel, build_admittance
from fppopf.quadratics import (
    HermitianForm,
    build_flow_matrices,
    build_injection_matrices,
    eigen_split,
    lift_hermitian,
)
from tests.oracles import random_hermitian


def two_bus(smax=None):
    buses = [Bus(1, ("a",), is_reference=True), Bus(2, ("a",))]
    return NetworkModel(buses, [Line("1-2", 1, 2, ("a",), [[0.1j]], smax=smax)])


def test_two_bus_real_power_form():
    net = two_bus()
    mats = build_injection_matrices(build_admittance(net), net.index)
    np.testing.assert_allclose(mats.real_power[(1, "a")].dense(), [[0, 5j], [-5j, 0]], atol=1e-14)


def test_magnitude_selector():
    net = two_bus()
    mats = build_injection_matrices(build_admittance(net), net.index)
    m = mats.magnitude[(2, "a")].dense()
    np.testing.assert_array_equal(m, [[0, 0], [0, 1]])


def test_injection_forms_match_current_oracle(feeder, rng):
    net = feeder[0]
    y = build_admittance(net)
    mats = build_injection_matrices(y, net.index)
    for _ in range(100):
        v = rng.normal(size=net.total_dim) + 1j * rng.normal(size=net.total_dim)
        s = v * np.conj(y @ v)
        for i, key in enumerate(net.index):
            assert abs(mats.real_power[key](v) - s[i].real) <= 1e-10
            assert abs(mats.reactive_power[key](v) - s[i].imag) <= 1e-10


def test_forms_are_real_valued(feeder, rng):
    problem = feeder[2]
    v = rng.normal(size=problem.dim) + 1j * rng.normal(size=problem.dim)
    for form in list(problem.forms.values())[:200]:
        w = v[form.support]
        assert abs(np.vdot(w, form.block @ w).imag) <= 1e-12 * max(1.0, np.abs(form.block).max())


def test_total_injection_equals_network_losses(wb5, rng):
    net, _, problem = wb5
    y = problem.y
    v = rng.normal(size=net.total_dim) + 1j * rng.normal(size=net.total_dim)
    total = sum(problem.matrices.real_power[k](v) for k in net.index)
    assert total == pytest.approx(np.real(np.vdot(y @ v, v)), abs=1e-9)


def test_flow_forms_two_bus():
    net = two_bus(smax=2.0)
    forms = build_flow_matrices(net, net.index, net.lines[0])
    fp, fq = forms["a"]
    assert fp(np.array([1, 1], complex)) == pytest.approx(0, abs=1e-14)
    assert fq(np.array([1, 1], complex)) == pytest.approx(0, abs=1e-14)
    delta = np.arcsin(0.1)
    v = np.array([1, np.exp(-1j * delta)])
    # oracle: sending-end power from the branch current
    s = v[0] * np.conj((v[0] - v[1]) / 0.1j)
    assert fp(v) == pytest.approx(s.real, abs=1e-12)
    assert fp(v) == pytest.approx(1.0, abs=1e-12)
    assert fq(v) == pytest.approx(s.imag, abs=1e-12)


def test_flow_forms_match_oracle_with_taps_and_shunts(rng):
    buses = [Bus(1, ("a",), is_reference=True), Bus(2, ("a",))]
    line = Line("1-2", 1, 2, ("a",), [[0.02 + 0.1j]], [[0.04j]], smax=1.0, tap=0.97)
    net = NetworkModel(buses, [line])
    from fppopf.analysis import kcl_flows

    fwd = build_flow_matrices(net, net.index, line, "from")["a"]
    back = build_flow_matrices(net, net.index, line, "to")["a"]
    for _ in range(20):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        flows = kcl_flows(net, v)
        assert complex(fwd[0](v), fwd[1](v)) == pytest.approx(flows[("1-2", "from", "a")], abs=1e-12)
        assert complex(back[0](v), back[1](v)) == pytest.approx(flows[("1-2", "to", "a")], abs=1e-12)


def test_flow_forms_hermitian_on_case14():
    net, _ = parse_case(bundled_case("case14Q.m"))
    limited = [Line(l.id, l.from_bus, l.to_bus, l.phases, l.z, l.y_shunt, smax=1.0, tap=l.tap) for l in net.lines]
    net = net.replace(lines=limited)
    for line in net.lines:
        for fp, fq in build_flow_matrices(net, net.index, line).values():
            for f in (fp, fq):
                assert np.abs(f.block - f.block.conj().T).max() <= 1e-12


def test_split_of_psd_form():
    m = HermitianForm(np.array([0]), np.ones((1, 1)), 3)
    sp_ = eigen_split(m)
    np.testing.assert_allclose(sp_.plus.dense(), m.dense())
    assert np.abs(sp_.minus.dense()).max() == 0


def test_split_signature():
    sp_ = eigen_split(HermitianForm.from_dense(np.diag([1.0, -1.0])))
    np.testing.assert_allclose(sp_.plus.dense(), np.diag([1.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(sp_.minus.dense(), np.diag([0.0, -1.0]), atol=1e-15)


def test_split_rejects_non_hermitian():
    with pytest.raises(ValueError):
        HermitianForm.from_dense(np.array([[0, 1], [0, 0]], complex))


def check_split(a):
    form = HermitianForm.from_dense(a)
    split = eigen_split(form)
    plus, minus = split.plus.dense(), split.minus.dense()
    norm = max(np.linalg.norm(a), 1e-300)
    assert np.linalg.norm(plus + minus - a) <= 1e-10 * norm
    assert np.linalg.eigvalsh(plus).min() >= -1e-10 * max(1.0, norm)
    assert np.linalg.eigvalsh(minus).max() <= 1e-10 * max(1.0, norm)
    r = split.plus_factor
    if r.size:
        np.testing.assert_allclose(r.conj().T @ r, split.plus.block, atol=1e-10 * max(1.0, norm))
    return split


def test_random_splits(rng):
    for _ in range(200):
        check_split(random_hermitian(rng, 12))


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_split_property(n, seed, scale):
    rng = np.random.default_rng(seed)
    a = random_hermitian(rng, n, scale)
    # random low-rank deflation mimics the injection forms
    if n > 2:
        u, _ = np.linalg.qr(rng.normal(size=(n, 2)) + 1j * rng.normal(size=(n, 2)))
        a = u @ np.diag(rng.normal(size=2) * scale) @ u.conj().T
    split = check_split(a)
    # idempotent on its own parts
    again = eigen_split(split.plus)
    assert np.abs(again.minus.dense()).max(initial=0.0) <= 1e-10 * max(1.0, scale)


def test_splits_of_problem_forms(wb5):
    problem = wb5[2]
    for key, form in problem.forms.items():
        split = problem.splits[key]
        a = form.dense()
        assert np.linalg.norm(split.plus.dense() + split.minus.dense() - a) <= 1e-10 * max(1.0, np.linalg.norm(a))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_real_lift(n, seed):
    rng = np.random.default_rng(seed)
    a = random_hermitian(rng, n)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    x = np.concatenate([v.real, v.imag])
    assert np.vdot(v, a @ v).real == pytest.approx(x @ lift_hermitian(a) @ x, abs=1e-12 * max(1.0, np.abs(a).max() * n * n))
