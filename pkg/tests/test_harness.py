import csv
import io
import json

import numpy as np
import pytest

from oracles import squared_risk
from privinc import geometry as G
from privinc import harness as H
from privinc.errors import InvalidInput
from privinc.optimizer import exact_minimizer

BASE = {"algorithm": "priv_inc_reg", "T": 40, "d": 3, "generator": {"sigma_w": 0.1}}


def _spec(**kw):
    d = kw.pop("d", 4)
    args = dict(T=50, C=G.L1Ball(1, d), domain=G.DomainSpec("unit_l2", d))
    args.update(kw)
    return H.StreamSpec(**args)


def test_stream_deterministic_per_seed():
    a, b = H.generate_stream(_spec(sigma_w=0.2), 3), H.generate_stream(_spec(sigma_w=0.2), 3)
    c = H.generate_stream(_spec(sigma_w=0.2), 4)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)
    assert np.all(np.abs(a.y) <= 1) and np.all(np.linalg.norm(a.X, axis=1) <= 1 + 1e-12)


def test_noise_free_planted_stream_has_zero_opt():
    s = H.generate_stream(_spec(sigma_w=0.0, theta_sparsity=2), 1)
    assert np.count_nonzero(s.theta_star) == 2
    assert G.gauge(G.L1Ball(1, 4), s.theta_star) == pytest.approx(0.9)
    assert exact_minimizer(G.L1Ball(1, 4), s.X, s.y).value <= 1e-8
    assert s.clamp_rate == 0.0


def test_k_equal_d_and_theta_outside():
    s = H.generate_stream(_spec(domain=G.DomainSpec("k_sparse", 4, 4)), 0)
    assert np.allclose(np.linalg.norm(s.X, axis=1), 1)
    with pytest.raises(InvalidInput):
        H.generate_stream(_spec(theta_star=np.array([1.0, 1.0, 0, 0])), 0)
    with pytest.raises(InvalidInput):
        H.generate_stream(_spec(domain=G.DomainSpec("unit_l2", 5)), 0)


def test_oracle_points():
    assert H.oracle_points(10) == [1, 2, 4, 8, 10]
    assert H.oracle_points(10, stride=3) == [1, 2, 3, 4, 6, 8, 9, 10]


def test_curve_zero_on_oracle_outputs():
    s = H.generate_stream(_spec(sigma_w=0.3, T=32), 2)
    C = G.L1Ball(1, 4)
    opt = np.array([exact_minimizer(C, s.X[:t], s.y[:t]).theta for t in range(1, 33)])
    cur = H.excess_risk_curve(opt, s.X, s.y, C, stride=1)
    assert cur.exact.all()
    assert np.all(cur.excess <= 1e-6 * np.maximum(1, cur.risk_priv))


def test_curve_zero_outputs_bounded():
    s = H.generate_stream(_spec(sigma_w=0.3, T=64), 5)
    C = G.L1Ball(1, 4)
    cur = H.excess_risk_curve(np.zeros((64, 4)), s.X, s.y, C)
    assert np.allclose(cur.risk_priv, np.cumsum(s.y ** 2))
    # per-sample squared loss is 4-Lipschitz on the unit ball
    assert np.all(cur.excess <= 2 * cur.t * 4 * 1.0)
    assert not cur.exact[2] and cur.exact[3]
    with pytest.raises(InvalidInput):
        H.excess_risk_curve(np.zeros((3, 4)), s.X, s.y, C)


def test_curve_lower_envelope_interpolation():
    s = H.generate_stream(_spec(sigma_w=0.3, T=40), 6)
    C = G.L1Ball(1, 4)
    th = np.tile(s.theta_star, (40, 1))
    cur = H.excess_risk_curve(th, s.X, s.y, C)
    for i in range(40):
        assert cur.risk_priv[i] == pytest.approx(squared_risk(th[i], s.X[: i + 1], s.y[: i + 1]))
        assert cur.risk_opt[i] <= cur.risk_priv[i] + 1e-12
    assert np.all(cur.excess >= 0)


def test_report_csv_and_summary():
    rep = H.run_experiment(dict(BASE, record_theta=True), seed=2)
    text = rep.to_csv()
    assert "\r\n" in text and text.endswith("\r\n")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0][:7] == ["t", "risk_priv", "risk_opt", "excess", "oracle_exact", "eps", "delta"]
    assert rows[0][7:] == ["theta_0", "theta_1", "theta_2"]
    assert len(rows) == 41
    assert float(rows[-1][5]) == pytest.approx(1.0) and float(rows[-1][6]) == pytest.approx(1e-5)
    s = json.loads(rep.summary_json())
    assert s["T"] == 40 and s["algorithm"] == "priv_inc_reg" and s["seed"] == 2
    assert s["excess_at_T"] >= 0 and s["ledger"]["interactions"]
    assert {"kappa", "alpha_prime", "r"} <= set(s["formulas"])
    assert s["config"]["T"] == 40


def test_same_seed_same_bytes():
    a = H.run_experiment(BASE, seed=7)
    b = H.run_experiment(BASE, seed=7)
    assert a.to_csv() == b.to_csv() and a.summary_json() == b.summary_json()


def test_noise_disabled_config_flags_ledger():
    rep = H.run_experiment(dict(BASE, noise_disabled=True, oracle_stride=1), seed=1)
    assert rep.ledger.noise_free and rep.summary()["fitted_constant"] is None
    assert np.all(rep.curve.excess <= 1e-3 * rep.curve.t)


def test_proj_and_inc_erm_reports():
    proj = H.run_experiment({"algorithm": "proj_priv_inc_reg", "T": 30, "d": 16,
                             "constraint": {"kind": "l1"}, "domain": {"kind": "k_sparse", "k": 2},
                             "constants": {"W": 4.0, "lift_every": 10}}, seed=0)
    cols = proj.columns()
    assert cols[-3:] == ["m", "gamma", "lift_residual"]
    assert proj.summary()["formulas"]["m_formula"] >= proj.params["m"]
    erm = H.run_experiment({"algorithm": "inc_erm", "T": 30, "d": 2,
                            "constants": {"tau": 10, "batch_iterations": 50}}, seed=0)
    assert erm.params["tau"] == 10 and erm.summary()["failures"] == []


def test_load_config_errors(tmp_path):
    with pytest.raises(InvalidInput):
        H.load_config({"T": 0, "d": 2})
    with pytest.raises(InvalidInput):
        H.load_config({"T": 5, "d": 2, "bogus": 1})
    with pytest.raises(InvalidInput):
        H.load_config("{not json")
    with pytest.raises(InvalidInput):
        H.load_config(str(tmp_path / "missing.json"))
    p = tmp_path / "c.json"
    p.write_text(json.dumps(BASE))
    assert H.load_config(str(p)).T == 40


def test_overrides_and_sweep():
    cfg = H.load_config(BASE)
    c2 = H.with_overrides(cfg, **{"constants.c_alpha": 3.0, "T": 20})
    assert c2.constants.c_alpha == 3.0 and c2.T == 20 and cfg.T == 40
    rows = H.sweep(cfg, {"epsilon": [0.5, 2.0], "T": [10, 20]}, seeds=[0, 1])
    assert len(rows) == 8
    assert sorted({round(r["epsilon_total"], 9) for r in rows}) == [0.5, 2.0]
    text = H.rows_to_csv(rows)
    assert text.splitlines()[0].startswith("epsilon,T,seed,excess_at_T")


def test_run_seeds_pool_matches_serial():
    cfg = H.load_config(dict(BASE, T=16))
    a = H.run_seeds(cfg, [0, 1, 2])
    b = H.run_seeds(cfg, [0, 1, 2], workers=2)
    assert a == b


def test_self_check_passes():
    checks = H.self_check(quick=True)
    assert len(checks) == 5
    assert all(c.passed for c in checks), [c for c in checks if not c.passed]
