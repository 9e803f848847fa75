import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nclab import (ModelParams, Scenario, SolverOptions, analyze, build_chain, rates_coding,
                   rates_no_coding, throughput)
from nclab.analytic import RateLedger
from nclab.errors import ConvergenceError, ModelDomainError, StabilityError

T5 = build_chain(5)


def links(value_fwd, value_bwd=None, k=5):
    p = {(i, i + 1): v for i, v in zip(range(1, k), value_fwd)}
    if value_bwd is not None:
        p.update({(i + 1, i): v for i, v in zip(range(1, k), value_bwd)})
    return p


def two_flow(g, delta=0.0):
    return ModelParams(delta, gamma_1=g, gamma_k=g)


def test_one_flow_rates():
    led = rates_no_coding(T5, Scenario(1), links([0.9, 0.8, 1, 1]), ModelParams(1e-4, gamma_1=10))
    assert led.flow[1, 1:] == pytest.approx([10, 9, 7.2, 7.2, 7.2], abs=1e-12)
    assert throughput(led, Scenario(1)) == pytest.approx(7.2, abs=1e-12)


def test_one_flow_retransmission_closed_form():
    led = rates_no_coding(T5, Scenario(1, True), links([0.8] * 4), ModelParams(1e-4, gamma_1=10))
    assert led.flow[1, 1:] == pytest.approx([12.5, 12.5, 12.5, 12.5, 10], abs=1e-12)


def test_zero_probability_with_retransmission():
    with pytest.raises(ModelDomainError):
        rates_no_coding(T5, Scenario(1, True), links([0.8, 0.0, 1, 1]), ModelParams(1e-4, gamma_1=10))


def test_two_flow_throughput_sum():
    led = RateLedger.empty(5, coding=False)
    led.flow[2, 1] = 3.0
    led.flow[1, 5] = 4.0
    assert throughput(led, Scenario(2)) == 7.0


def test_encoder_split():
    # node 3 decodes 4 pkt/s of flow 1 and 10 of flow 2 when it receives no coded input
    sc = Scenario(2, coding=True, p_mix=0.5)
    led = rates_coding(T5, sc, links([1] * 4, [1] * 4), ModelParams(0.0, gamma_1=4, gamma_k=10))
    assert led.coded_queue[2] == pytest.approx(2.0)
    assert led.native_queue[1, 2] == pytest.approx(2.0)
    assert led.native_queue[2, 2] == pytest.approx(8.0)


@pytest.mark.parametrize("retx", [False, True])
def test_pmix_zero_equals_no_coding(retx):
    for g, delta in [(10, 2.8e-4), (20, 6e-4)]:
        params = two_flow(g, delta)
        a = analyze(T5, Scenario(2, retx, True, p_mix=0.0), params)
        b = analyze(T5, Scenario(2, retx), params)
        assert np.all(a.ledger.coded_queue == 0)
        assert a.theta == pytest.approx(b.theta, rel=1e-9)
        for link in b.p:
            assert a.p[link] == pytest.approx(b.p[link], abs=1e-9)
        np.testing.assert_allclose(a.ledger.flow, b.ledger.flow, rtol=1e-9, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(p=st.lists(st.floats(0.5, 1.0), min_size=8, max_size=8),
       g1=st.floats(0.5, 40), g2=st.floats(0.5, 40), pmix=st.floats(0, 1), retx=st.booleans())
def test_class_conservation_at_relays(p, g1, g2, pmix, retx):
    led = rates_coding(T5, Scenario(2, retx, True, p_mix=pmix), links(p[:4], p[4:]),
                       ModelParams(1e-4, gamma_1=g1, gamma_k=g2))
    for i in range(2, 5):
        lhs = led.native_queue[1, i] + led.native_queue[2, i] + 2 * led.coded_queue[i]
        rhs = led.flow[1, i] + led.flow[2, i]
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs))


@settings(max_examples=40, deadline=None)
@given(p=st.lists(st.floats(0.5, 1.0), min_size=8, max_size=8), retx=st.booleans())
def test_boundary_zeros(p, retx):
    led = rates_coding(T5, Scenario(2, retx, True), links(p[:4], p[4:]), two_flow(12.0, 1e-4))
    # endpoints never code, sources only send their own flow, nobody codes for N1/N2 (flow 1)
    # or N4/N5 (flow 2)
    assert led.coded_queue[1] == 0.0 and led.coded_queue[5] == 0.0
    assert led.native_queue[2, 1] == 0.0 and led.native_queue[1, 5] == 0.0
    assert led.coded_in[1, 1] == 0.0 and led.coded_in[1, 2] == 0.0
    assert led.coded_in[2, 5] == 0.0 and led.coded_in[2, 4] == 0.0
    assert led.native_in[1, 1] == 12.0 and led.native_in[2, 5] == 12.0


def test_boundary_zeros_no_coding():
    led = rates_no_coding(T5, Scenario(2), links([0.9] * 4, [0.9] * 4), two_flow(10, 1e-4))
    assert led.native_out[1, 5] == 0.0 and led.native_out[2, 1] == 0.0
    assert np.all(led.coded_queue == 0)


def test_lossless_chain():
    rep = analyze(T5, Scenario(1), ModelParams(0.0, mu=250, gamma_1=10))
    assert rep.theta == 10.0
    assert rep.utilization[1:5] == pytest.approx([0.04] * 4)
    assert rep.utilization[5] == pytest.approx(0.04)


@pytest.mark.parametrize("sc", [Scenario(1), Scenario(2), Scenario(1, True), Scenario(2, True),
                                Scenario(2, False, True), Scenario(2, True, True)],
                         ids=lambda s: s.label())
def test_zero_delta_delivers_everything(sc):
    params = ModelParams(0.0, gamma_1=13, gamma_k=13 if sc.flows == 2 else 0)
    assert analyze(T5, sc, params).theta == params.gamma_1 + params.gamma_k


@pytest.mark.parametrize("g", [10, 14.286, 20, 25])
@pytest.mark.parametrize("flows", [1, 2])
def test_retransmission_telescopes(flows, g):
    params = ModelParams(6.8e-4, gamma_1=g, gamma_k=g if flows == 2 else 0)
    theta = analyze(T5, Scenario(flows, True), params).theta
    assert theta == pytest.approx(params.gamma_1 + params.gamma_k, rel=1e-9)


def test_coding_retransmission_rows():
    for g, ref in [(10, 20), (14.286, 28.57), (20, 40)]:
        assert analyze(T5, Scenario(2, True, True), two_flow(g, 2.8e-4)).theta == \
            pytest.approx(ref, rel=5e-3)


@settings(max_examples=20, deadline=None)
@given(g=st.floats(1, 30), sc=st.sampled_from([Scenario(1), Scenario(2), Scenario(2, False, True),
                                               Scenario(2, True, True)]))
def test_theta_monotone_in_delta(g, sc):
    params = ModelParams(0.0, gamma_1=g, gamma_k=g if sc.flows == 2 else 0)
    thetas = [analyze(T5, sc, params.with_delta(d)).theta for d in (0, 1e-5, 1e-4, 1e-3)]
    assert all(b <= a + 1e-9 for a, b in zip(thetas, thetas[1:]))
    assert thetas[-1] <= params.gamma_1 + params.gamma_k


def test_beta_raises_coded_throughput():
    thetas = [analyze(T5, Scenario(2, True, True, beta=b), two_flow(25, 2.8e-4)).theta
              for b in range(1, 8)]
    assert all(b >= a - 1e-9 for a, b in zip(thetas, thetas[1:]))
    assert thetas[0] < thetas[-1]


def test_unstable_source():
    with pytest.raises(StabilityError) as e:
        analyze(T5, Scenario(1), ModelParams(0.0, mu=250, gamma_1=300))
    assert e.value.node == 1


def test_non_convergence_raises():
    with pytest.raises(ConvergenceError):
        analyze(T5, Scenario(2), two_flow(10, 5e-4), SolverOptions(max_iterations=1))


def test_native_only_interference_is_weaker():
    params = two_flow(20, 6e-4)
    full = analyze(T5, Scenario(2, False, True), params, interference="total")
    native = analyze(T5, Scenario(2, False, True), params, interference="native_only")
    assert native.theta >= full.theta


def test_longer_chain():
    rep = analyze(build_chain(8), Scenario(2, True, True), two_flow(10, 2.8e-4))
    assert rep.theta == pytest.approx(20, rel=5e-3)
