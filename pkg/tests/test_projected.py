import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from oracles import squared_risk
from privinc import dp
from privinc import geometry as G
from privinc.dp import PrivacyBudget
from privinc.errors import DegenerateProjection, InvalidInput
from privinc.optimizer import exact_minimizer
from privinc.projected import (LiftProblem, ProjPrivIncReg, ProjRegConfig, distortion,
                               embedding_check, gaussian_projection, lift, make_projection,
                               membership_filter, proj_priv_inc_reg_run, projected_loss,
                               sample_constraint_points, sandwich_bound, scale_covariate,
                               sparse_oracle, target_dimension)
from privinc.regression import priv_inc_reg_run

B = PrivacyBudget(1.0, 1e-5)


def test_formula_example():
    g = distortion(4.0, 1000)
    assert g == pytest.approx(0.1587, abs=1e-4)
    assert target_dimension(4.0, 1000, 0.05) == 635
    assert max(16, math.log(20000)) == 16


def test_projection_entries():
    Phi = gaussian_projection(200, 300, seed=1)
    assert Phi.std() == pytest.approx(1 / math.sqrt(200), rel=0.02)
    assert np.array_equal(Phi, gaussian_projection(200, 300, seed=1))
    spec = make_projection(50, 4.0, 1000, 0.05, m_max=50)
    assert spec.m == 50 and spec.d == 50


def test_scale_covariate():
    Q = ortho_group.rvs(6, random_state=0)
    x = np.array([0.3, -0.1, 0.2, 0.0, 0.4, 0.1])
    assert np.allclose(scale_covariate(x, Q), x)
    Phi = gaussian_projection(4, 6, seed=2)
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.standard_normal(6)
        xt = scale_covariate(x, Phi)
        assert np.linalg.norm(Phi @ xt) / np.linalg.norm(x) == pytest.approx(1, abs=1e-12)
        assert np.allclose(xt / np.linalg.norm(xt), x / np.linalg.norm(x))
    Phi0 = np.zeros((2, 3))
    Phi0[0, 0] = 1
    with pytest.raises(DegenerateProjection):
        scale_covariate(np.array([0.0, 1.0, 0.0]), Phi0)
    with pytest.raises(InvalidInput):
        scale_covariate(np.zeros(3), Phi)


def test_sketch_sensitivity():
    d, m, n = 30, 8, 10 ** 5
    Phi = gaussian_projection(m, d, seed=3)
    rng = np.random.default_rng(1)
    Xa = G.DomainSpec("unit_l2", d).sample(rng, n) * rng.uniform(0.01, 1, (n, 1))
    Xb = G.DomainSpec("unit_l2", d).sample(rng, n) * rng.uniform(0.01, 1, (n, 1))

    def sketch(X):
        PX = X @ Phi.T
        return PX * (np.linalg.norm(X, axis=1) / np.linalg.norm(PX, axis=1))[:, None]

    A, Bs = sketch(Xa), sketch(Xb)
    na, nb = (A ** 2).sum(1), (Bs ** 2).sum(1)
    fro = np.sqrt(np.maximum(na ** 2 + nb ** 2 - 2 * (A * Bs).sum(1) ** 2, 0))
    assert fro.max() <= 2 + 1e-12


def test_embedding_check_examples():
    rng = np.random.default_rng(2)
    Q = ortho_group.rvs(20, random_state=1)
    pts = rng.standard_normal((50, 20))
    assert embedding_check(Q, pts, gamma=1e-9)["violation_fraction"] == 0.0
    d = 256
    g, m = distortion(4.0, 1000), target_dimension(4.0, 1000, 0.05)
    Phi = gaussian_projection(m, d, seed=5)
    xs = G.DomainSpec("k_sparse", d, 4).sample(rng, 500)
    cs = sample_constraint_points(G.L1Ball(1, d), 500, rng)
    rep = embedding_check(Phi, xs, cs, gamma=g)
    assert rep["pairs"] == 250_000 and rep["violation_fraction"] <= 0.05
    # a huge gamma accepts any sketch
    loose = embedding_check(gaussian_projection(1, 10, seed=0), rng.standard_normal((40, 10)),
                            gamma=1e6)
    assert loose["violation_fraction"] == 0.0


def test_lift_examples():
    Phi = gaussian_projection(5, 12, seed=1)
    assert not lift(LiftProblem(np.zeros(5), G.L1Ball(1, 12), Phi)).any()
    Sq = gaussian_projection(6, 6, seed=2)
    th = G.project(G.L2Ball(1, 6), np.random.default_rng(0).standard_normal(6)) * 0.5
    for C in (G.L2Ball(1, 6), G.L1Ball(3, 6), G.LpBall(1.5, 2, 6)):
        out = lift(LiftProblem(Sq @ th, C, Sq))
        assert np.allclose(out, np.linalg.solve(Sq, Sq @ th), atol=1e-6)
    with pytest.raises(InvalidInput):
        lift(LiftProblem(np.ones(2), G.Simplex(3), np.ones((2, 3))))


def test_lift_planted_recovery_l1():
    d, m = 128, 40
    ok = 0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        Phi = gaussian_projection(m, d, seed=1000 + trial)
        th0 = np.zeros(d)
        th0[rng.integers(d)] = 0.8 * rng.choice([-1, 1])
        C = G.L1Ball(1, d)
        out = lift(LiftProblem(Phi @ th0, C, Phi))
        assert np.linalg.norm(Phi @ out - Phi @ th0) <= 1e-6
        assert G.gauge(C, out) <= 1 + 1e-6
        ok += np.linalg.norm(out - th0) <= 0.1
    assert ok >= 90


@pytest.mark.parametrize("C", [G.LpBall(1.5, 1.0, 40), G.GroupL12(4, 1.0, 40)])
def test_lift_alternating_postconditions(C):
    rng = np.random.default_rng(3)
    Phi = gaussian_projection(20, 40, seed=4)
    for _ in range(5):
        th = G.project(C, rng.standard_normal(40)) * 0.7
        out = lift(LiftProblem(Phi @ th, C, Phi, hint=th))
        assert np.linalg.norm(Phi @ out - Phi @ th) <= 1e-6
        assert G.gauge(C, out) <= G.gauge(C, th) + 1e-6


def test_membership_filter():
    orc = sparse_oracle(2)
    x, y = membership_filter(np.array([0.1, 0.2, 0.3]), 0.5, orc)
    assert not x.any() and y == 0.0
    x, y = membership_filter(np.array([0.1, 0.0, 0.3]), 0.5, orc)
    assert np.allclose(x, [0.1, 0.0, 0.3]) and y == 0.5


def test_orthogonal_full_sketch_matches_plain_run():
    d, T = 4, 40
    rng = np.random.default_rng(5)
    X = G.DomainSpec("unit_l2", d).sample(rng, T)
    y = np.clip(X @ np.array([0.3, -0.2, 0.1, 0.2]) + 0.05 * rng.standard_normal(T), -1, 1)
    Q = ortho_group.rvs(d, random_state=3)
    C = G.L2Ball(1, d)
    with dp.noise_disabled():
        a = priv_inc_reg_run(X, y, C, B, seed=0)
        b = proj_priv_inc_reg_run(X, y, C, B, W=3.0, seed=0, config=ProjRegConfig(Phi=Q))
    for t in range(1, T + 1):
        ra = squared_risk(a.thetas[t - 1], X[:t], y[:t])
        rb = squared_risk(b.thetas[t - 1], X[:t], y[:t])
        assert abs(ra - rb) <= 1e-6


def test_run_budget_feasibility_and_columns():
    d, T = 64, 60
    rng = np.random.default_rng(6)
    X = G.DomainSpec("k_sparse", d, 3).sample(rng, T)
    th = np.zeros(d)
    th[:3] = 0.3
    y = X @ th
    C = G.L1Ball(1, d)
    res = proj_priv_inc_reg_run(X, y, C, B, domain=G.DomainSpec("k_sparse", d, 3), seed=1,
                                config=ProjRegConfig(lift_every=7))
    assert res.ledger.labels == ["q_tree", "Q_tree"]
    assert res.ledger.total() == pytest.approx((1.0, 1e-5))
    assert all(G.gauge(C, t) <= 1 + 1e-6 for t in res.thetas)
    lifted = res.extra["lifted"]
    assert lifted[-1] and lifted[6] and not lifted[0]
    assert np.nanmax(res.extra["lift_residual"]) <= 1e-6
    assert res.params["m"] <= d


def test_rejects_simplex():
    with pytest.raises(InvalidInput):
        ProjPrivIncReg(10, G.Simplex(4), B, W=2.0)


def test_sandwich_bound_noise_free():
    d, T = 200, 400
    rng = np.random.default_rng(7)
    C = G.L1Ball(1, d)
    X = G.DomainSpec("k_sparse", d, 3).sample(rng, T)
    y = np.clip(X @ G.project(C, rng.standard_normal(d) * 0.1) + 0.1 * rng.standard_normal(T), -1, 1)
    W = G.gaussian_width(G.DomainSpec("k_sparse", d, 3), 5000, seed=0) + \
        G.gaussian_width(C, 5000, seed=1)
    gamma = distortion(W, T)
    Phi = gaussian_projection(min(target_dimension(W, T, 0.05), d), d, seed=2)
    ok = 0
    for _ in range(100):
        t = int(rng.integers(1, T + 1))
        theta = sample_constraint_points(C, 1, rng)[0]
        full = squared_risk(theta, X[:t], y[:t])
        proj = projected_loss(theta, X[:t], y[:t], Phi)
        # stated with T on the right-hand side
        ok += abs(proj - full) <= sandwich_bound(full, T, gamma, 1.0)
    assert ok >= 95


def _sketch_excess(m, seeds=5, d=256, T=256):
    C = G.L1Ball(1, d)
    dom = G.DomainSpec("k_sparse", d, 4)
    out = []
    for s in range(seeds):
        rng = np.random.default_rng(s)
        X = dom.sample(rng, T)
        th = np.zeros(d)
        th[:4] = 0.2
        y = X @ th
        est = ProjPrivIncReg(T, C, B, W=5.0, seed=s, config=ProjRegConfig(m=m, lift_every=10 ** 9))
        for i in range(T - 1):
            est.update(X[i], y[i])
        est.cfg.lift_every = 10 ** 9
        est.T += 1  # keep the last step a mirror step; no lift needed for the sketch-space value
        est.update(X[T - 1], y[T - 1])
        Phi = est.Phi
        PX = X @ Phi.T
        Z = ((np.linalg.norm(X, axis=1) / np.linalg.norm(PX, axis=1))[:, None] * PX) @ Phi
        out.append((projected_loss(est.mirror, X, y, Phi) - exact_minimizer(C, Z, y).value,
                    est.kappa))
    return out


def test_sketch_excess_within_bound_shape():
    consts = []
    for m in (16, 64, 256):
        vals = _sketch_excess(m)
        consts.append(max(e / (k * math.sqrt(m)) for e, k in vals))
    print("sketch excess / (kappa sqrt(m))", consts)
    assert all(np.isfinite(consts)) and max(consts) < 1.0


@pytest.mark.xfail(strict=True, reason="at desk scale the per-step movement is noise-limited; "
                                       "measured excess falls with m instead of growing like sqrt(m)")
def test_sketch_excess_grows_like_sqrt_m():
    med = {m: np.median([e for e, _ in _sketch_excess(m)]) for m in (16, 256)}
    print("median sketch-space excess", med)
    assert 2 <= med[256] / med[16] <= 12


def test_mixed_stream_membership_tracks_member_oracle():
    d, T, k = 128, 400, 2
    rng = np.random.default_rng(9)
    C = G.L1Ball(1, d)
    members = G.DomainSpec("k_sparse", d, k).sample(rng, T)
    outsiders = G.DomainSpec("k_sparse", d, 8).sample(rng, T)
    mask = rng.random(T) < 0.5
    X = np.where(mask[:, None], members, outsiders)
    th = np.zeros(d)
    th[:2] = 0.45
    y = X @ th
    W = G.gaussian_width(G.DomainSpec("k_sparse", d, k), 5000, seed=0) + \
        G.gaussian_width(C, 5000, seed=1)
    res = proj_priv_inc_reg_run(X, y, C, B, W=W, seed=3, member=sparse_oracle(k),
                                config=ProjRegConfig(lift_every=T))
    Xg, yg = X[mask], y[mask]
    opt = exact_minimizer(C, Xg, yg).value
    excess = squared_risk(res.thetas[-1], Xg, yg) - opt
    gamma, Tg = distortion(W, T), len(yg)
    shape = (T ** (1 / 3) * W ** (2 / 3) * math.sqrt(math.log(1 / B.delta)) / B.epsilon
             + T ** (1 / 6) * W ** (1 / 3) * math.sqrt(opt) + T ** 0.25 * W ** 0.5 * opt ** 0.25)
    print("member-only excess", excess, "shape", shape)
    assert 0 <= excess + 1e-9 and excess <= shape
    # outsiders never reach the trees
    assert Tg < T
