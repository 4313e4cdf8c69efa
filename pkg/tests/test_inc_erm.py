import math

import numpy as np
import pytest

from oracles import finite_difference_grad
from privinc import dp
from privinc import geometry as G
from privinc.dp import BudgetLedger, PrivacyBudget
from privinc.errors import InvalidInput, NumericalFailure
from privinc.inc_erm import (LossSpec, batch_solver_gradient_perturbation, choose_tau,
                             exact_batch_solver, inc_erm_run)
from privinc.optimizer import exact_minimizer


def _stream(seed, T, d):
    rng = np.random.default_rng(seed)
    X = G.DomainSpec("unit_l2", d).sample(rng, T)
    y = np.clip(X @ (rng.standard_normal(d) * 0.5) + 0.1 * rng.standard_normal(T), -1, 1)
    return X, y


def test_choose_tau_examples():
    assert choose_tau("convex", 1000, d=8, eps=1.0) == 20
    assert choose_tau("convex", 5, d=1000, eps=0.1) == 5
    assert choose_tau("strongly_convex", 100, d=1, eps=100.0, L=1.0, nu=1.0, diam=1.0) == 1
    # strongly convex rule keeps L under the square root
    assert choose_tau("strongly_convex", 10 ** 6, d=16, eps=1.0, L=4.0, nu=1.0, diam=1.0) == 8
    val = choose_tau("low_width", 10 ** 4, eps=1.0, L=1.0, diam=1.0, curvature=1.0, width=1.0)
    assert val == 100
    with pytest.raises(InvalidInput):
        choose_tau("convex", 100, d=3)
    with pytest.raises(InvalidInput):
        choose_tau("other", 100, d=3, eps=1)


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((12, 4)) / 3
    y = np.sign(rng.standard_normal(12))
    th = rng.standard_normal(4) * 0.3
    for kind in ("squared", "logistic"):
        loss = LossSpec(kind, ridge=0.1)
        fd = finite_difference_grad(lambda t: loss.risk(t, X, y), th)
        assert np.allclose(loss.grad(th, X, y), fd, atol=1e-5)


def test_never_triggering_outputs_zero():
    X, y = _stream(1, 50, 3)
    C = G.L2Ball(1, 3)
    loss = LossSpec("squared")
    res = inc_erm_run(X, y, C, loss, PrivacyBudget(1, 1e-5), tau=51)
    assert not res.thetas.any() and res.checkpoints == []
    for t in range(1, 51):
        gap = float(np.sum(y[:t] ** 2)) - exact_minimizer(C, X[:t], y[:t]).value
        assert gap <= 2 * t * loss.lipschitz * 1.0


def test_tau_one_exact_solver_tracks_erm_path():
    X, y = _stream(2, 40, 3)
    C = G.L2Ball(1, 3)
    with dp.noise_disabled():
        res = inc_erm_run(X, y, C, LossSpec("squared"), PrivacyBudget(1, 1e-5), tau=1,
                          solver=exact_batch_solver)
    for t in range(1, 41):
        opt = exact_minimizer(C, X[:t], y[:t]).value
        val = float(np.sum((y[:t] - X[:t] @ res.thetas[t - 1]) ** 2))
        assert val - opt <= 1e-6 * max(1.0, opt)


@pytest.mark.parametrize("tau", [1, 3, 7, 16])
def test_piecewise_constant_breakpoints(tau):
    X, y = _stream(3, 48, 2)
    res = inc_erm_run(X, y, G.L2Ball(1, 2), LossSpec("squared"), PrivacyBudget(1, 1e-5), tau,
                      seed=5, batch=None)
    assert res.checkpoints == list(range(tau, 49, tau))
    changes = [t for t in range(2, 49) if not np.array_equal(res.thetas[t - 1], res.thetas[t - 2])]
    assert set(changes) <= set(res.checkpoints)
    assert not res.thetas[: tau - 1].any()


def test_staleness_bound():
    C = G.L2Ball(1, 3)
    loss = LossSpec("squared")
    for seed in range(10):
        X, y = _stream(seed, 64, 3)
        tau = 8
        with dp.noise_disabled():
            res = inc_erm_run(X, y, C, loss, PrivacyBudget(1, 1e-5), tau, solver=exact_batch_solver)
        for t in range(1, 65):
            opt = exact_minimizer(C, X[:t], y[:t]).value
            val = float(np.sum((y[:t] - X[:t] @ res.thetas[t - 1]) ** 2))
            assert val - opt <= tau * loss.lipschitz * 1.0 * 2 + 1e-9


def test_batch_solver_noise_free_converges():
    rng = np.random.default_rng(4)
    for _ in range(20):
        d, n = int(rng.integers(1, 9)), int(rng.integers(5, 129))
        X, y = _stream(int(rng.integers(1 << 30)), n, d)
        C = G.L2Ball(1, d)
        with dp.noise_disabled():
            th = batch_solver_gradient_perturbation(X, y, C, LossSpec("squared"), 0.1, 1e-6,
                                                    np.random.default_rng(0), iterations=2000)
        opt = exact_minimizer(C, X, y).value
        val = float(np.sum((y - X @ th) ** 2))
        assert val - opt <= 1e-4 * max(opt, 1.0)


def test_batch_solver_single_point():
    with dp.noise_disabled():
        th = batch_solver_gradient_perturbation(np.array([[1.0, 0.0]]), np.array([1.0]),
                                                G.L2Ball(1, 2), LossSpec("squared"), 0.5, 1e-6,
                                                np.random.default_rng(0), iterations=500)
    assert np.allclose(th, [1.0, 0.0], atol=1e-6)


def test_batch_solver_charges_exactly_once():
    X, y = _stream(5, 20, 2)
    led = BudgetLedger(mode="advanced", delta_star=5e-6)
    batch_solver_gradient_perturbation(X, y, G.L2Ball(1, 2), LossSpec("squared"), 0.03, 2e-7,
                                       np.random.default_rng(0), iterations=50, ledger=led)
    assert led.interactions == [(0.03, 2e-7)]


def test_batch_solver_deterministic():
    X, y = _stream(6, 30, 3)
    outs = [batch_solver_gradient_perturbation(X, y, G.L1Ball(1, 3), LossSpec("logistic"), 0.1,
                                               1e-6, dp.substream(1, 2, 3), iterations=40)
            for _ in range(2)]
    assert np.array_equal(*outs)


def test_failure_keeps_previous_and_charges():
    X, y = _stream(7, 12, 2)
    calls = []

    def flaky(X_, y_, C, loss, e, d, rng, ledger=None, **kw):
        calls.append(len(X_))
        if len(X_) == 8:
            raise NumericalFailure("boom")
        ledger.charge(e, d)
        return np.full(2, len(X_) / 100)

    res = inc_erm_run(X, y, G.L2Ball(1, 2), LossSpec("squared"), PrivacyBudget(1, 1e-5), 4,
                      solver=flaky)
    assert res.failures == [8]
    assert len(res.ledger.interactions) == 3
    assert np.allclose(res.thetas[8], [0.04, 0.04])
    assert np.allclose(res.thetas[11], [0.12, 0.12])


def test_budget_within_on_grid():
    X, y = _stream(8, 64, 2)
    for T in (16, 64):
        for tau in (1, 4, T):
            for eps, delta in ((0.5, 1e-6), (2.0, 1e-3)):
                res = inc_erm_run(X[:T], y[:T], G.L2Ball(1, 2), LossSpec("squared"),
                                  PrivacyBudget(eps, delta), tau, solver=exact_batch_solver)
                assert res.ledger.within(PrivacyBudget(eps, delta))


def test_hinge_and_logistic_runs_feasible():
    X, y = _stream(9, 30, 3)
    y = np.sign(y + 1e-9)
    for kind in ("hinge", "logistic"):
        res = inc_erm_run(X, y, G.L1Ball(1, 3), LossSpec(kind, ridge=0.1), PrivacyBudget(1, 1e-5),
                          5, seed=1)
        assert all(G.gauge(G.L1Ball(1, 3), th) <= 1 + 1e-9 for th in res.thetas)
