import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import l1_projection_bisection
from privinc import geometry as G
from privinc.errors import InvalidInput, Unsupported


def _sets(d):
    return [G.L2Ball(1.0, d), G.L1Ball(1.5, d), G.Simplex(d), G.LpBall(1.5, 1.0, d),
            G.GroupL12(1, 2.0, d), G.LpBall(1.0, 1.0, d), G.LpBall(2.0, 0.7, d)]


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# --- examples

def test_project_examples():
    assert np.allclose(G.project(G.L2Ball(1, 2), [3, 4]), [0.6, 0.8])
    assert np.allclose(G.project(G.L1Ball(1, 2), [1, 1]), [0.5, 0.5])
    assert np.allclose(G.project(G.L1Ball(1, 2), [0.2, -0.1]), [0.2, -0.1])
    assert np.allclose(G.project(G.Simplex(3), [0.5, 0.5, 0.5]), [1 / 3] * 3)


def test_gauge_examples():
    assert G.gauge(G.L1Ball(1, 2), [0.5, -0.5]) == pytest.approx(1.0)
    assert G.gauge(G.L2Ball(2, 2), [3, 4]) == pytest.approx(2.5)
    for C in _sets(4):
        if C.symmetric:
            assert G.gauge(C, np.zeros(4)) == 0.0


def test_gauge_simplex_unsupported():
    with pytest.raises(Unsupported):
        G.gauge(G.Simplex(3), [1, 0, 0])


def test_diameter_examples():
    assert G.diameter(G.L1Ball(3, 5)) == 3
    assert G.diameter(G.L2Ball(1, 2)) == 1
    assert G.diameter(G.Simplex(4)) == 1


def test_dimension_mismatch():
    with pytest.raises(InvalidInput):
        G.project(G.L2Ball(1, 3), [1.0, 2.0])
    with pytest.raises(InvalidInput):
        G.project(G.L2Ball(1, 2), [np.nan, 0.0])


@pytest.mark.parametrize("bad", [dict(kind="l2", radius=0), dict(kind="lp", p=3.0),
                                 dict(kind="group_l12", k=3, dim=4), dict(kind="cube")])
def test_invalid_sets(bad):
    kw = dict(radius=1.0, dim=4)
    kw.update(bad)
    with pytest.raises(InvalidInput):
        G.ConstraintSet(**kw)


def test_json_roundtrip():
    for C in _sets(4):
        assert G.ConstraintSet.from_dict(C.to_dict()) == C
    D = G.DomainSpec("k_sparse", 10, 3)
    assert G.DomainSpec.from_dict(D.to_dict()) == D
    assert G.ConstraintSet("L1Ball", 1.0, 3).kind == "l1"


# --- projection properties

@given(arrays(float, 5, elements=finite), st.integers(0, 6))
def test_projection_idempotent_and_feasible(v, which):
    C = _sets(5)[which]
    p = G.project(C, v)
    assert G.contains(C, p, tol=1e-9)
    assert np.allclose(G.project(C, p), p, atol=1e-9)


@pytest.mark.parametrize("which", range(7))
def test_variational_inequality(which):
    rng = np.random.default_rng(which)
    C = _sets(6)[which]
    for _ in range(20):
        v = rng.standard_normal(6) * 3
        p = G.project(C, v)
        Z = [G.project(C, rng.standard_normal(6) * 2) for _ in range(100)]
        assert max(float((v - p) @ (z - p)) for z in Z) <= 1e-7


@pytest.mark.parametrize("which", [0, 1, 3, 4, 5, 6])
def test_gauge_membership_duality(which):
    rng = np.random.default_rng(10 + which)
    C = _sets(4)[which]
    for _ in range(1000):
        v = rng.standard_normal(4) * rng.uniform(0.1, 1.5)
        inside = G.gauge(C, v) <= 1
        fixed = np.allclose(G.project(C, v), v, atol=1e-9)
        if abs(G.gauge(C, v) - 1) > 1e-7:
            assert inside == fixed


@given(arrays(float, 4, elements=finite), st.floats(0.01, 5))
def test_gauge_homogeneous(v, a):
    for C in _sets(4):
        if C.symmetric:
            assert G.gauge(C, a * v) == pytest.approx(a * G.gauge(C, v), rel=1e-9, abs=1e-12)
            assert G.gauge(C, -v) == pytest.approx(G.gauge(C, v), rel=1e-12, abs=1e-12)


def test_l1_projection_matches_bisection_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 17))
        r = float(rng.uniform(0.1, 3))
        v = rng.standard_normal(d) * rng.uniform(0.1, 5)
        assert np.allclose(G.project_l1(v, r), l1_projection_bisection(v, r), atol=1e-8)


def test_lp_projection_minimizes_distance():
    # compare with a dense direction scan on the boundary in 2-d
    rng = np.random.default_rng(3)
    C = G.LpBall(1.5, 1.0, 2)
    ang = np.linspace(0, 2 * np.pi, 200_001)
    U = np.stack([np.cos(ang), np.sin(ang)], 1)
    B = U / (np.sum(np.abs(U) ** 1.5, 1) ** (1 / 1.5))[:, None]
    for _ in range(20):
        v = rng.standard_normal(2) * 3
        p = G.project(C, v)
        best = np.min(np.linalg.norm(B - v, axis=1)) if G.gauge(C, v) > 1 else 0.0
        assert np.linalg.norm(p - v) == pytest.approx(best, abs=1e-6)


# --- width

def test_width_closed_forms():
    w2 = G.gaussian_width(G.L2Ball(1, 2), samples=10 ** 6, seed=0)
    assert abs(w2 - math.sqrt(math.pi / 2)) < 0.01
    w1 = G.gaussian_width(G.L1Ball(1, 1), samples=10 ** 6, seed=1)
    assert abs(w1 - math.sqrt(2 / math.pi)) < 0.01
    assert G.width_l2_exact(2) == pytest.approx(math.sqrt(math.pi / 2))
    assert G.width_l2_exact(1) == pytest.approx(math.sqrt(2 / math.pi))


def test_width_single_point():
    assert abs(G.gaussian_width(np.array([[0.3, -0.2, 0.5]]), samples=10 ** 5, seed=2)) < 0.01


def test_width_monotone():
    for d in (4, 32):
        w1, s1 = G.gaussian_width(G.L1Ball(1, d), 20000, seed=3, return_stderr=True)
        w2, s2 = G.gaussian_width(G.L2Ball(1, d), 20000, seed=4, return_stderr=True)
        assert w1 <= w2 + 3 * (s1 + s2)
    ws, ss = G.gaussian_width(G.DomainSpec("k_sparse", 64, 4), 20000, seed=5, return_stderr=True)
    assert ws <= G.width_sparse_bound(64, 4)
    assert ws <= G.gaussian_width(G.DomainSpec("unit_l2", 64), 20000, seed=6) + 3 * ss


def test_width_bounds_are_bounds():
    for d in (8, 128):
        assert G.gaussian_width(G.L1Ball(1, d), 20000, seed=7) <= G.width_l1_bound(d)


def test_domain_samples_in_domain():
    rng = np.random.default_rng(0)
    for D in (G.DomainSpec("unit_l2", 6), G.DomainSpec("k_sparse", 20, 3),
              G.DomainSpec("unit_l1", 5), G.DomainSpec("k_sparse", 5, 5)):
        X = D.sample(rng, 200)
        assert all(D.contains(x) for x in X)
        assert np.all(np.linalg.norm(X, axis=1) <= 1 + 1e-12)
