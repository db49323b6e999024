import math

import numpy as np
import pytest

from bregopt.optim import (
    AdaBreg,
    Adam,
    ConstantStep,
    LinBreg,
    LinBregMomentum,
    PowerDecay,
    ProxGd,
    Sgd,
    make_optimizer,
    step_size,
)
from bregopt.regularizers import GroupBlock, GroupLayout, L1, GroupL12, Zero, shrink


def quad_grad(theta):
    """Gradient of 0.5*(theta - 2)^2, the 1-d hand-trace loss."""
    return theta - 2.0


def test_linbreg_hand_trace_1d():
    layout = GroupLayout.entrywise(1)
    opt = LinBreg(L1(1.0, layout), np.zeros(1), ConstantStep(1.0), delta=1.0)
    theta = np.zeros(1)
    expected = [(2.0, 1.0), (3.0, 2.0), (3.0, 2.0)]  # (v, theta) after each step
    for v_want, t_want in expected:
        theta = opt.step(theta, quad_grad(theta))
        assert opt.v[0] == pytest.approx(v_want, abs=1e-15)
        assert theta[0] == pytest.approx(t_want, abs=1e-15)


def test_linbreg_dual_init_reproduces_theta0():
    # v0 = subgradient + theta0/delta makes the very first prox return theta0
    layout = GroupLayout.entrywise(3)
    theta0 = np.array([1.0, -2.0, 0.0])
    opt = LinBreg(L1(0.5, layout), theta0, ConstantStep(0.1), delta=2.0)
    np.testing.assert_allclose(opt.v, [1.0, -1.5, 0.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(
        opt.reg.prox(opt.delta, opt.delta * opt.v), theta0, rtol=0, atol=1e-15
    )


def test_linbreg_momentum_hand_trace():
    layout = GroupLayout.entrywise(1)
    opt = LinBregMomentum(L1(1.0, layout), np.zeros(1), ConstantStep(1.0), beta=0.5)
    theta = np.zeros(1)
    theta = opt.step(theta, quad_grad(theta))  # g=-2: m=-1, v=1, theta=shrink(1;1)=0
    assert opt.m[0] == pytest.approx(-1.0, abs=1e-15)
    assert opt.v[0] == pytest.approx(1.0, abs=1e-15)
    assert theta[0] == 0.0
    theta = opt.step(theta, quad_grad(theta))  # g=-2: m=-1.5, v=2.5, theta=1.5
    assert opt.m[0] == pytest.approx(-1.5, abs=1e-15)
    assert opt.v[0] == pytest.approx(2.5, abs=1e-15)
    assert theta[0] == pytest.approx(1.5, abs=1e-15)


def test_adabreg_hand_trace_matches_scalar_recompute():
    beta1, beta2, eps, tau = 0.9, 0.999, 1e-8, 0.1
    layout = GroupLayout.entrywise(1)
    opt = AdaBreg(L1(1.0, layout), np.zeros(1), ConstantStep(tau))
    # independent scalar replay of the update rule
    v = m1 = m2 = 0.0
    theta = np.zeros(1)
    for k in range(1, 4):
        g = float(theta[0]) - 2.0
        m1 = beta1 * m1 + (1 - beta1) * g
        m2 = beta2 * m2 + (1 - beta2) * g * g
        m1_hat = m1 / (1 - beta1**k)
        m2_hat = m2 / (1 - beta2**k)
        v = v - tau * m1_hat / (math.sqrt(m2_hat) + eps)
        theta_scalar = shrink(np.float64(v), 1.0)
        theta = opt.step(theta, quad_grad(theta))
        assert opt.v[0] == pytest.approx(v, abs=1e-15)
        assert theta[0] == pytest.approx(float(theta_scalar), abs=1e-15)
    # bias correction makes the first debiased moment the raw gradient
    assert opt.v[0] == pytest.approx(0.3, abs=1e-7)  # three ~0.1 moves toward the dual
    assert np.all(theta == 0.0)  # |v| < lam: support has not opened yet


def test_momentum_beta_zero_is_linbreg():
    rng = np.random.default_rng(0)
    layout = GroupLayout.entrywise(8)
    theta0 = rng.normal(size=8)
    a = LinBreg(L1(0.1, layout), theta0, ConstantStep(0.05))
    b = LinBregMomentum(L1(0.1, layout), theta0, ConstantStep(0.05), beta=0.0)
    ta, tb = theta0.copy(), theta0.copy()
    for _ in range(50):
        g = rng.normal(size=8)
        ta, tb = a.step(ta, g), b.step(tb, g)
        assert np.max(np.abs(ta - tb)) <= 1e-12


def test_linbreg_reduces_to_sgd():
    rng = np.random.default_rng(1)
    d = 10
    theta0 = rng.normal(size=d)
    a = LinBreg(Zero(), theta0, ConstantStep(0.07), delta=1.0)
    b = Sgd(ConstantStep(0.07))
    ta, tb = theta0.copy(), theta0.copy()
    for _ in range(100):
        g = rng.normal(size=d)
        ta, tb = a.step(ta, g), b.step(tb, g)
        assert np.max(np.abs(ta - tb)) <= 1e-12


def test_adabreg_reduces_to_adam():
    rng = np.random.default_rng(2)
    d = 10
    theta0 = rng.normal(size=d)
    a = AdaBreg(Zero(), theta0, ConstantStep(0.01), delta=1.0)
    b = Adam(ConstantStep(0.01))
    ta, tb = theta0.copy(), theta0.copy()
    for _ in range(100):
        g = rng.normal(size=d)
        ta, tb = a.step(ta, g), b.step(tb, g)
        assert np.max(np.abs(ta - tb)) <= 1e-12


def test_sgd_hand_step():
    opt = Sgd(ConstantStep(0.1))
    out = opt.step(np.array([1.0]), np.array([2.0]))
    assert out[0] == pytest.approx(0.8, abs=1e-15)


def test_adam_first_step_is_signlike():
    # bias correction cancels at k=1, so the move is ~ -tau * sign(g)
    opt = Adam(ConstantStep(0.1))
    out = opt.step(np.zeros(1), np.array([3.0]))
    assert out[0] == pytest.approx(-0.1, abs=1e-8)


def test_proxgd_lasso_fixed_point():
    # min 0.5*(t-2)^2 + 0.5*|t| has the closed-form solution shrink(2, 0.5) = 1.5
    layout = GroupLayout.entrywise(1)
    reg = L1(0.5, layout)
    opt = ProxGd(reg, ConstantStep(0.5))
    theta = np.zeros(1)
    for _ in range(200):
        theta = opt.step(theta, theta - 2.0)
    assert theta[0] == pytest.approx(1.5, abs=1e-12)
    assert opt.step(theta, theta - 2.0)[0] == theta[0]  # exact fixed point


def test_proxgd_thresholds_at_tau_not_delta():
    layout = GroupLayout.entrywise(2)
    reg = L1(1.0, layout)
    theta = np.array([2.0, 0.0])
    g = np.zeros(2)
    prox_out = ProxGd(reg, ConstantStep(0.1)).step(theta, g)
    assert prox_out[0] == pytest.approx(1.9, abs=1e-15)  # shrink by tau*lam = 0.1
    breg_out = LinBreg(reg, theta, ConstantStep(0.1), delta=1.0).step(theta, g)
    np.testing.assert_allclose(breg_out, theta, rtol=0, atol=1e-15)  # zero grad: no move


def test_constant_schedule():
    sched = ConstantStep(0.2)
    assert [sched(k) for k in (0, 5, 1000)] == [0.2, 0.2, 0.2]
    assert sched.nonincreasing and not sched.square_summable
    sched.scale = 0.5
    assert sched(0) == 0.1


def test_power_decay_schedule():
    sched = PowerDecay(1.0, 0.75)
    assert sched(0) == 1.0
    assert sched(3) == pytest.approx(4.0**-0.75, rel=1e-15)
    assert sched.nonincreasing and sched.square_summable
    assert not PowerDecay(1.0, 0.5).square_summable
    sched.scale = 0.5
    assert sched(0) == 0.5


def test_power_decay_sum_behavior():
    # p in (1/2, 1]: partial sums of tau diverge while sums of tau^2 settle
    k = np.arange(1, 1_000_001, dtype=np.float64)
    tau = k**-0.75
    sums = np.cumsum(tau)
    assert sums[-1] > 2.0 * sums[9_999]  # still growing by 1e6 steps
    sq = np.cumsum(tau**2)
    tail_share = (sq[-1] - sq[99_999]) / sq[-1]
    assert tail_share < 0.01
    # contrast: p = 1/2 keeps a fat squared tail
    sq_half = np.cumsum(1.0 / k)
    assert (sq_half[-1] - sq_half[99_999]) / sq_half[-1] > 0.1


def test_step_size_guards():
    sched = ConstantStep(0.1)
    assert step_size(sched, 0) == 0.1
    with pytest.raises(ValueError):
        step_size(sched, -1)
    with pytest.raises(ValueError):
        step_size(lambda k: -0.1, 3)


def test_hyperparameter_validation():
    layout = GroupLayout.entrywise(2)
    reg = L1(0.1, layout)
    t0 = np.zeros(2)
    sched = ConstantStep(0.1)
    with pytest.raises(ValueError):
        ConstantStep(0.0)
    with pytest.raises(ValueError):
        PowerDecay(-1.0, 0.75)
    with pytest.raises(ValueError):
        PowerDecay(1.0, 0.0)
    with pytest.raises(ValueError):
        PowerDecay(1.0, 1.5)
    with pytest.raises(ValueError):
        LinBreg(reg, t0, sched, delta=0.0)
    with pytest.raises(ValueError):
        LinBregMomentum(reg, t0, sched, beta=1.0)
    with pytest.raises(ValueError):
        AdaBreg(reg, t0, sched, beta2=1.0)
    with pytest.raises(ValueError):
        AdaBreg(reg, t0, sched, eps=0.0)
    with pytest.raises(ValueError):
        Adam(sched, beta1=-0.1)
    with pytest.raises(ValueError):
        make_optimizer("newton", reg, t0, sched)


def test_gradient_shape_mismatch_rejected():
    opt = Sgd(ConstantStep(0.1))
    with pytest.raises(ValueError):
        opt.step(np.zeros(3), np.zeros(4))


def test_stacked_runs_match_individual_runs():
    # a leading seed axis must behave like independent copies of the optimizer
    rng = np.random.default_rng(3)
    layout = GroupLayout(4, (GroupBlock(0, 4, "row", rows=2),))
    reg = GroupL12(0.3, layout)
    theta0 = rng.normal(size=(3, 4))
    grads = rng.normal(size=(20, 3, 4))
    stacked = LinBreg(reg, theta0, ConstantStep(0.1))
    ts = theta0.copy()
    singles = [LinBreg(reg, theta0[i], ConstantStep(0.1)) for i in range(3)]
    tss = [theta0[i].copy() for i in range(3)]
    for g in grads:
        ts = stacked.step(ts, g)
        for i in range(3):
            tss[i] = singles[i].step(tss[i], g[i])
            np.testing.assert_array_equal(ts[i], tss[i])
