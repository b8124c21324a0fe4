import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scsg.optimizer import (
    BudgetError,
    ScsgConfig,
    constant_schedule,
    practical_schedule,
    run_scsg,
    run_sgd,
    run_svrg,
    schedule_version1,
    schedule_version2,
    schedule_version3,
    scsg_epoch,
    svrg_schedule,
    version2_batch,
)
from scsg.problems import (
    FiniteSumOracle,
    LogisticModel,
    UnsupportedOperation,
    full_gradient,
    least_squares_oracle,
    make_least_squares,
    make_nonconvex_logistic,
    make_streaming_least_squares,
)
from scsg.sampling import ParameterError, RandomStream


@pytest.fixture(scope="module")
def ls():
    return make_least_squares(RandomStream(2024, ("test", "ls")), 50, 5, condition=4.0)


def trace_bytes(tr):
    rows = [(r.j, r.B, r.b, r.eta, r.N, r.ifo, r.f_value, r.grad_norm_sq) for r in tr.records]
    return repr(rows).encode() + tr.output.tobytes()


# schedules -----------------------------------------------------------------


def test_version1_worked_batch():
    s = schedule_version1(0.1, 1.0, 2.0, 10**6)
    p = s(1)
    assert (p.B, p.b) == (120, 1)
    assert p.eta == pytest.approx(1 / (6 * 2.0 * 120 ** (2 / 3)), rel=1e-15)
    assert s.gamma == pytest.approx(1 / 6)


def test_version1_zero_variance_floor():
    assert schedule_version1(0.1, 0.0, 1.0, 1000)(1).B == 8


def test_version1_saturates_at_n():
    assert schedule_version1(1e-9, 1.0, 1.0, 500)(1).B == 500


def test_version1_constant():
    s = schedule_version1(0.05, 2.0, 1.0, 10**4)
    assert len({(p.B, p.b, p.eta) for p in s.take(10)}) == 1


def test_version2_literal_values():
    assert [p.B for p in schedule_version2(1.0, 10**6, literal=True).take(3)] == [1, 3, 6]


def test_version2_clamped_values():
    s = schedule_version2(1.0, 10**6)
    assert [p.B for p in s.take(5)] == [8, 8, 8, 8, 12]
    assert [p.clamped for p in s.take(5)] == [True, True, True, False, False]


def test_version2_saturates_small_n():
    assert [p.B for p in schedule_version2(1.0, 4, literal=True).take(6)] == [1, 3, 4, 4, 4, 4]


def test_version2_rejects_n_below_floor():
    with pytest.raises(ParameterError):
        schedule_version2(1.0, 4)


def test_version2_log_factor():
    assert version2_batch(1, 0.5) == 1
    j = 10
    assert version2_batch(j, 0.5) == math.ceil(j**1.5 * math.log(j) ** 2.0 - 1e-9)
    assert version2_batch(j, 0.5) > version2_batch(j)


def test_version3_values():
    assert schedule_version3(0.1, 1.0, 1.0, 0.1, 10**6)(1).B == 1200
    assert schedule_version3(0.1, 1.0, 1.0, 1000.0, 10**6)(1).B == 8
    assert schedule_version3(1e-4, 1.0, 1.0, 0.1, 300)(1).B == 300


@pytest.mark.parametrize("mu", [0.0, -1.0])
def test_version3_rejects_mu(mu):
    with pytest.raises(ParameterError):
        schedule_version3(0.1, 1.0, 1.0, mu, 100)


def test_gamma_limit():
    schedule_version1(0.1, 1.0, 1.0, 100, gamma=1 / 3)
    with pytest.raises(ParameterError):
        schedule_version1(0.1, 1.0, 1.0, 100, gamma=0.34)


@pytest.mark.parametrize("bad", [dict(epsilon=0), dict(h_star=-1), dict(L=0), dict(n=0)])
def test_version1_validation(bad):
    args = dict(epsilon=0.1, h_star=1.0, L=1.0, n=100) | bad
    with pytest.raises(ParameterError):
        schedule_version1(**args)


@given(st.floats(min_value=1e-4, max_value=10), st.floats(min_value=0, max_value=100),
       st.floats(min_value=1e-3, max_value=100), st.integers(min_value=8, max_value=10**7),
       st.floats(min_value=0.01, max_value=1 / 3))
@settings(max_examples=100, deadline=None)
def test_theory_schedule_invariants(eps, h, L, n, gamma):
    for sched in (schedule_version1(eps, h, L, n, gamma=gamma), schedule_version2(L, n, gamma=gamma)):
        for p in sched.take(6):
            assert 8 * p.b <= p.B <= n
            assert math.isfinite(p.eta) and p.eta > 0
            assert p.eta * L == pytest.approx(gamma * (p.B / p.b) ** (-2 / 3), rel=1e-12)


def test_schedule_call_validates():
    with pytest.raises(ParameterError):
        constant_schedule(4, 5, 0.1)(1)
    with pytest.raises(ParameterError):
        constant_schedule(4, 1, -0.1)(1)
    with pytest.raises(ParameterError):
        constant_schedule(4, 1, 0.1)(0)


def test_practical_schedule_divisor():
    s = practical_schedule(version2_batch, 0.01, 10**6, divisor=32)
    assert [(p.B, p.b) for p in s.take(3)] == [(1, 1), (3, 1), (6, 1)]
    assert s(100).b == math.ceil(s(100).B / 32)


# one epoch -----------------------------------------------------------------


def test_epoch_zero_inner_steps_returns_anchor(ls):
    anchor = np.ones(ls.d)
    ls.counter.reset()
    x, out = scsg_epoch(ls, anchor, 16, 1, 0.01, RandomStream(1), num_inner=0)
    assert np.array_equal(x, anchor)
    assert out.cost == 16 and ls.counter.count == 16


def test_epoch_identical_components_is_gradient_descent():
    row = np.array([1.0, 2.0, -0.5])
    o = FiniteSumOracle(model=LogisticModel(0.2), d=3, L=2.0, data=(np.tile(row, (10, 1)), np.ones(10)))
    eta, N = 0.05, 7
    x, _ = scsg_epoch(o, np.zeros(3), 8, 1, eta, RandomStream(3), num_inner=N)
    ref = np.zeros(3)
    for _ in range(N):
        ref = ref - eta * full_gradient(o, ref)
    assert np.allclose(x, ref, atol=1e-12, rtol=0)


def test_epoch_first_inner_step_uses_batch_gradient():
    c = np.array([0.3, -1.2, 2.0, 0.8, 1.1, -0.4])
    o = least_squares_oracle(np.ones((6, 1)), c)
    x0, eta, B = np.array([1.5]), 0.1, 4
    stream = RandomStream(4)
    x1, out = scsg_epoch(o, x0, B, 1, eta, stream, num_inner=1)
    batch = o.draw_batch(stream.derive("batch"), B)
    assert np.allclose(out.batch_grad, x0 - c[batch].mean(), atol=1e-15)
    assert np.allclose(x1, x0 - eta * (x0 - c[batch].mean()), atol=1e-15)


def test_epoch_costs(ls):
    for mode, expect in (("geometric", None), ("epoch_pass", 2 * 16)):
        ls.counter.reset()
        _, out = scsg_epoch(ls, np.zeros(ls.d), 16, 2, 0.01, RandomStream(5), inner_mode=mode)
        want = 16 + 2 * out.N if expect is None else expect
        assert out.cost == want == ls.counter.count


def test_epoch_pass_uneven_pieces(ls):
    ls.counter.reset()
    _, out = scsg_epoch(ls, np.zeros(ls.d), 10, 4, 0.01, RandomStream(6), inner_mode="epoch_pass")
    assert out.N == 3 and out.cost == 20


def test_epoch_dimension_mismatch(ls):
    with pytest.raises(ParameterError):
        scsg_epoch(ls, np.zeros(ls.d + 1), 8, 1, 0.01, RandomStream(0))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_conditional_bias_enumeration(n):
    o = make_nonconvex_logistic(RandomStream(30, (n,)), n, 3)
    s = RandomStream(31, (n,))
    x0, xk = s.normal(3), s.normal(3)
    for B in range(1, n + 1):
        for batch in itertools.combinations(range(n), B):
            g = o.batch_gradient(np.array(batch), x0)
            e = g - full_gradient(o, x0)
            nus = [o.batch_gradient(np.array([i]), xk) - o.batch_gradient(np.array([i]), x0) + g for i in range(n)]
            assert np.allclose(np.mean(nus, axis=0), full_gradient(o, xk) + e, atol=1e-12, rtol=0)


def test_full_batch_error_exactly_zero(ls):
    x0 = RandomStream(32).normal(ls.d)
    _, out = scsg_epoch(ls, x0, ls.n, 1, 0.01, RandomStream(33))
    assert np.array_equal(out.batch_grad, full_gradient(ls, x0))


# full runs -----------------------------------------------------------------


def test_single_epoch_output(ls):
    sched = constant_schedule(16, 1, 0.01)
    for rule in ("smooth_sample", "last_iterate"):
        tr = run_scsg(ls, ScsgConfig(sched, epochs=1, output_rule=rule, seed=3))
        assert tr.output_epoch == 1
        assert np.array_equal(tr.output, tr.anchors[0])


@pytest.mark.parametrize("mode", ["geometric", "epoch_pass"])
def test_run_deterministic(ls, mode):
    sched = schedule_version2(ls.L, ls.n)
    a = run_scsg(ls, ScsgConfig(sched, epochs=8, inner_mode=mode, seed=11))
    b = run_scsg(ls, ScsgConfig(sched, epochs=8, inner_mode=mode, seed=11))
    c = run_scsg(ls, ScsgConfig(sched, epochs=8, inner_mode=mode, seed=12))
    assert trace_bytes(a) == trace_bytes(b)
    assert trace_bytes(a) != trace_bytes(c)


@given(st.integers(min_value=0, max_value=2**32), st.integers(min_value=1, max_value=8),
       st.integers(min_value=1, max_value=12))
@settings(max_examples=40, deadline=None)
def test_ifo_accounting_exact(seed, b, T):
    o = make_least_squares(RandomStream(40), 60, 3)
    sched = constant_schedule(8 * b if 8 * b <= 60 else 60, b, 0.01)
    o.counter.reset()
    tr = run_scsg(o, ScsgConfig(sched, epochs=T, seed=seed))
    assert o.counter.count == tr.total_ifo == tr.accounting_total()
    cum = [r.ifo for r in tr.records]
    assert cum == list(np.cumsum([r.B + r.b * r.N for r in tr.records]))
    assert tr.metrics_count == o.counter.metrics_count


def test_epoch_pass_accounting(ls):
    tr = run_scsg(ls, ScsgConfig(constant_schedule(20, 3, 0.01), epochs=4, inner_mode="epoch_pass"))
    assert [r.ifo for r in tr.records] == [40, 80, 120, 160]


@given(st.integers(min_value=0, max_value=2**20), st.integers(min_value=20, max_value=2000))
@settings(max_examples=40, deadline=None)
def test_budget_never_exceeded(seed, budget):
    o = make_least_squares(RandomStream(41), 40, 3)
    cfg = ScsgConfig(constant_schedule(16, 1, 0.01), ifo_budget=budget, seed=seed)
    try:
        tr = run_scsg(o, cfg)
    except BudgetError:
        first = run_scsg(o, ScsgConfig(cfg.schedule, epochs=1, seed=seed, diagnostics=False))
        assert first.total_ifo > budget
        return
    assert 16 <= tr.total_ifo <= budget
    nxt = run_scsg(o, ScsgConfig(cfg.schedule, epochs=tr.epochs + 1, seed=seed, diagnostics=False))
    assert nxt.total_ifo > budget


def test_budget_too_small(ls):
    with pytest.raises(BudgetError, match="budget too small"):
        run_scsg(ls, ScsgConfig(constant_schedule(16, 1, 0.01), ifo_budget=10))


def test_config_validation(ls):
    s = constant_schedule(8, 1, 0.1)
    with pytest.raises(ParameterError):
        ScsgConfig(s)
    with pytest.raises(ParameterError):
        ScsgConfig(s, epochs=1, ifo_budget=10)
    with pytest.raises(ParameterError):
        ScsgConfig(s, epochs=1, inner_mode="other")


def test_n_cap_records_warning(ls):
    tr = run_scsg(ls, ScsgConfig(constant_schedule(50, 1, 0.001), epochs=5, n_cap=3, seed=1))
    assert all(r.N <= 3 for r in tr.records)
    assert any("capped" in w for w in tr.warnings)


def test_clamp_recorded(ls):
    tr = run_scsg(ls, ScsgConfig(schedule_version2(ls.L, ls.n), epochs=5))
    assert [r.clamped for r in tr.records] == [True, True, True, False, False]
    assert len(tr.warnings) == 3


def test_streaming_run():
    o = make_streaming_least_squares(RandomStream(42), 4, condition=3.0, holdout=500)
    sched = schedule_version2(o.L, None)
    tr = run_scsg(o, ScsgConfig(sched, epochs=15, replacement="streaming", output_rule="last_iterate", seed=2))
    assert tr.total_ifo == tr.accounting_total()
    assert tr.records[-1].f_value < tr.initial_f
    with pytest.raises(ParameterError):
        run_scsg(o, ScsgConfig(sched, epochs=2))


def test_scsg_decreases_objective(ls):
    tr = run_scsg(ls, ScsgConfig(schedule_version2(ls.L, ls.n), epochs=40, output_rule="last_iterate"))
    assert tr.records[-1].f_value < tr.initial_f


# sgd / svrg ----------------------------------------------------------------


def test_sgd_full_batch_is_gradient_descent(ls):
    tr = run_sgd(ls, ls.n, 0.05, steps=6)
    ref = np.zeros(ls.d)
    for _ in range(6):
        ref = ref - 0.05 * full_gradient(ls, ref)
    assert np.allclose(tr.output, ref, atol=1e-12, rtol=0)


def test_sgd_single_step_closed_form():
    o = least_squares_oracle([[1.0]], [0.0])
    tr = run_sgd(o, 1, 0.1, steps=1, x0=[1.0])
    assert tr.output[0] == pytest.approx(0.9, abs=1e-15)


@pytest.mark.parametrize("steps,batch", [(1, 1), (7, 5), (13, 50)])
def test_sgd_ifo(ls, steps, batch):
    ls.counter.reset()
    tr = run_sgd(ls, batch, 0.01, steps=steps)
    assert ls.counter.count == tr.total_ifo == steps * batch


def test_sgd_thinning(ls):
    tr = run_sgd(ls, 4, 0.01, steps=10, thin=3)
    assert [r.j for r in tr.records] == [3, 6, 9, 10]


def test_sgd_budget(ls):
    tr = run_sgd(ls, 8, 0.01, ifo_budget=100)
    assert tr.total_ifo == 96
    with pytest.raises(BudgetError):
        run_sgd(ls, 8, 0.01, ifo_budget=5)


def test_svrg_matches_scsg_corner(ls):
    a = run_svrg(ls, 1 / 6, seed=9, epochs=6)
    b = run_scsg(ls, ScsgConfig(svrg_schedule(ls, 1 / 6), epochs=6, seed=9))
    assert trace_bytes(a) == trace_bytes(b)
    assert all(r.batch_error_sq == 0.0 for r in a.records)


def test_svrg_expected_epoch_cost(ls):
    costs = []
    for seed in range(400):
        tr = run_svrg(ls, 1 / 6, seed=seed, epochs=1)
        costs.append(tr.total_ifo)
    costs = np.array(costs)
    assert abs(costs.mean() - 2 * ls.n) <= 3 * costs.std(ddof=1) / math.sqrt(len(costs))


def test_svrg_streaming_unsupported():
    o = make_streaming_least_squares(RandomStream(43), 3)
    with pytest.raises(UnsupportedOperation):
        run_svrg(o, 1 / 6, epochs=1)
