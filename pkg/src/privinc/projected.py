"""Private incremental regression in a random low-dimensional sketch.

Covariates are rescaled so that ``||Phi x~|| = ||x||`` and the two tree
mechanisms run on the ``m``-dimensional sketches ``Phi x~``, so privacy noise
scales with ``m`` instead of ``d``.  Each step's private estimate
``vartheta`` of ``Phi theta`` is lifted back to ``C`` by minimizing the gauge
of ``C`` over the affine set ``{theta : Phi theta = vartheta}``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog, minimize

from . import geometry
from .dp import BudgetLedger, PrivacyBudget, SensitivityBound, noise_is_disabled, substream
from .errors import DegenerateProjection, InvalidInput, LiftFailure, NumericalFailure
from .geometry import ConstraintSet, DomainSpec
from .optimizer import (GradientOracle, PgdConfig, R_CAP, default_iterations,
                        noisy_projected_gradient, streaming_lipschitz)
from .regression import STREAM_SENSITIVITY, PrivateGradientFn, RunResult, ingest, kappa
from .tree import TreeState

log = logging.getLogger(__name__)

PHI_STREAM = 99


def distortion(W: float, T: int) -> float:
    """``gamma = (W / T)^{1/3}`` with ``W = w(X) + w(C)``."""
    return (W / T) ** (1.0 / 3.0)


def target_dimension(W: float, T: int, beta: float, c_m: float = 1.0) -> int:
    """``m = ceil((c_m / gamma^2) max(W^2, ln(T/beta)))``."""
    g = distortion(W, T)
    return int(math.ceil(round(c_m / g ** 2 * max(W ** 2, math.log(T / beta)), 9)))


@dataclass
class ProjectionSpec:
    Phi: np.ndarray
    gamma: float
    W: float

    @property
    def m(self) -> int:
        return self.Phi.shape[0]

    @property
    def d(self) -> int:
        return self.Phi.shape[1]


def gaussian_projection(m: int, d: int, seed: int = 0) -> np.ndarray:
    """``m x d`` matrix with i.i.d. ``N(0, 1/m)`` entries, from its own seed substream."""
    rng = substream(seed, PHI_STREAM, 0)
    return rng.standard_normal((m, d)) / math.sqrt(m)


def make_projection(d: int, W: float, T: int, beta: float, seed: int = 0, c_m: float = 1.0,
                    m: Optional[int] = None, m_max: Optional[int] = None) -> ProjectionSpec:
    """Draw the run's projection.  ``m`` overrides the formula; ``m_max`` caps it."""
    gamma = distortion(W, T)
    if m is None:
        m = target_dimension(W, T, beta, c_m)
    if m_max is not None:
        m = min(m, m_max)
    return ProjectionSpec(gaussian_projection(max(int(m), 1), d, seed), gamma, W)


def scale_covariate(x, Phi, rel_tol: float = 1e-12) -> np.ndarray:
    """Rescale ``x`` so its sketch has the same norm as ``x``."""
    x = np.asarray(x, dtype=float)
    nx = float(np.linalg.norm(x))
    if nx == 0:
        raise InvalidInput("cannot rescale the zero covariate")
    npx = float(np.linalg.norm(Phi @ x))
    if npx <= rel_tol * nx:
        raise DegenerateProjection(f"||Phi x|| = {npx:.3g} is numerically zero")
    return (nx / npx) * x


def embedding_check(Phi, A, B=None, gamma: float = 0.1) -> dict:
    """Fraction of pairs with ``|<Phi a, Phi b> - <a, b>| > gamma ||a|| ||b||``.

    ``A`` and ``B`` hold points as rows; without ``B`` all pairs within ``A``
    (including each point with itself) are checked.  Uses only public
    geometry, so it has no privacy cost.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    PA, PB = A @ Phi.T, B @ Phi.T
    err = np.abs(PA @ PB.T - A @ B.T)
    scale = np.outer(np.linalg.norm(A, axis=1), np.linalg.norm(B, axis=1))
    if B is A:
        iu = np.triu_indices(len(A))
        err, scale = err[iu], scale[iu]
    bad = err > gamma * scale + 1e-12
    rel = np.divide(err, scale, out=np.zeros_like(err), where=scale > 0)
    return {"pairs": int(bad.size), "violations": int(bad.sum()),
            "violation_fraction": float(bad.mean()) if bad.size else 0.0,
            "max_relative_distortion": float(rel.max()) if rel.size else 0.0,
            "gamma": float(gamma)}


def sample_constraint_points(C: ConstraintSet, n: int, rng) -> np.ndarray:
    """Points of ``C`` for diagnostics: Gaussian directions pushed to the boundary."""
    out = np.empty((n, C.dim))
    for i in range(n):
        g = rng.standard_normal(C.dim)
        if C.kind == "l1":
            # sparse-ish points: project a scaled Gaussian onto the ball
            g = geometry.project_l1(g * 3.0, C.radius)
        elif C.symmetric:
            g = g / geometry.gauge(C, g)
        else:
            g = geometry.project(C, g)
        out[i] = g * rng.uniform(0.5, 1.0)
    return out


@dataclass
class LiftProblem:
    target: np.ndarray
    C: ConstraintSet
    Phi: np.ndarray
    Phi_pinv: Optional[np.ndarray] = None
    hint: Optional[np.ndarray] = None


def _affine_projector(Phi, Phi_pinv, target):
    def proj(v):
        return v - Phi_pinv @ (Phi @ v - target)
    return proj


def _lift_l1(p: LiftProblem, pinv):
    m, d = p.Phi.shape
    # min sum(u + v) s.t. Phi(u - v) = target, u, v >= 0
    c = np.ones(2 * d)
    A = np.hstack([p.Phi, -p.Phi])
    res = linprog(c, A_eq=A, b_eq=p.target, bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    return res.x[:d] - res.x[d:]


def _lift_lp(p: LiftProblem, pinv):
    # min sum |theta|^p over theta0 + N z; smooth for p > 1
    C = p.C
    theta0 = pinv @ p.target
    N = null_space(p.Phi)
    if N.shape[1] == 0:
        return theta0
    q = C.p
    scale = max(float(np.abs(theta0).max()), 1e-300)

    def f(z):
        v = (theta0 + N @ z) / scale
        a = np.abs(v)
        return float(np.sum(a ** q)), N.T @ (q * a ** (q - 1) * np.sign(v)) / scale

    z0 = np.zeros(N.shape[1]) if p.hint is None else N.T @ (p.hint - theta0)
    res = minimize(f, z0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12})
    return theta0 + N @ res.x


def _lift_alternating(p: LiftProblem, pinv, tol, max_alt=500, bisect=40):
    """Bisection on the gauge level with alternating projections for feasibility."""
    C = p.C
    aff = _affine_projector(p.Phi, pinv, p.target)
    hi_pt = p.hint if p.hint is not None else aff(np.zeros(C.dim))
    hi = geometry.gauge(C, hi_pt)
    if hi == 0:
        return hi_pt
    lo = 0.0
    best = hi_pt
    for _ in range(bisect):
        rho = 0.5 * (lo + hi)
        sub = ConstraintSet(C.kind, C.radius * rho, C.dim, p=C.p, k=C.k)
        proj = geometry.projector(sub)
        z = best.copy()
        ok = False
        for _ in range(max_alt):
            z = proj(aff(z))
            if np.linalg.norm(p.Phi @ z - p.target) <= tol:
                ok = True
                break
        if ok:
            hi, best = rho, z
        else:
            lo = rho
        if hi - lo <= 1e-9:
            break
    return best


def lift(p: LiftProblem, tol_rel: float = 1e-6) -> np.ndarray:
    """``argmin ||theta||_C`` subject to ``Phi theta = target``.

    The l2 ball gives the minimum-norm solution in closed form, the l1 ball
    is a linear program and lp balls with ``p > 1`` are a smooth problem on the
    null space of ``Phi``.  Other symmetric bodies use bisection on the gauge
    level with alternating projections.  The result is polished onto the
    affine set and checked: residual ``<= tol_rel * ||C||`` and gauge
    ``<= 1 + 1e-6``, else :class:`LiftFailure`.
    """
    C = p.C
    if not C.symmetric:
        raise InvalidInput("lifting needs a symmetric constraint set")
    target = np.asarray(p.target, dtype=float)
    if not np.any(target):
        return np.zeros(C.dim)
    pinv = p.Phi_pinv if p.Phi_pinv is not None else np.linalg.pinv(p.Phi)
    tol = tol_rel * geometry.diameter(C)
    if C.kind == "l2":
        theta = pinv @ target
    elif C.kind == "l1":
        theta = _lift_l1(p, pinv)
        if theta is None:
            theta = _lift_alternating(p, pinv, tol)
    elif C.kind == "lp" and C.p > 1:
        theta = _lift_lp(p, pinv)
    else:
        theta = _lift_alternating(p, pinv, tol)
    theta = theta - pinv @ (p.Phi @ theta - target)
    resid = float(np.linalg.norm(p.Phi @ theta - target))
    if p.hint is not None and geometry.gauge(C, p.hint) < geometry.gauge(C, theta) - 1e-12 \
            and np.linalg.norm(p.Phi @ p.hint - target) <= tol:
        theta, resid = p.hint, float(np.linalg.norm(p.Phi @ p.hint - target))
    if resid > tol or geometry.gauge(C, theta) > 1 + 1e-6:
        raise LiftFailure(f"lift residual {resid:.3g}, gauge {geometry.gauge(C, theta):.6g}",
                          best=theta, residual=resid)
    return theta


def projected_loss(theta, X, y, Phi) -> float:
    """Compressed least squares ``sum_i (y_i - (||x_i||/||Phi x_i||) <Phi x_i, Phi theta>)^2``."""
    X = np.asarray(X, dtype=float)
    PX = X @ Phi.T
    nx = np.linalg.norm(X, axis=1)
    npx = np.linalg.norm(PX, axis=1)
    s = np.divide(nx, npx, out=np.zeros_like(nx), where=npx > 0)
    r = np.asarray(y) - s * (PX @ (Phi @ theta))
    return float(r @ r)


def sandwich_bound(loss: float, t: int, gamma: float, diam: float) -> float:
    """``4 g^2 D^2 t + 2 g D sqrt(t L) + 2 sqrt(2) g^{3/2} D^{3/2} t^{3/4} L^{1/4}``."""
    loss = max(loss, 0.0)
    return (4 * gamma ** 2 * diam ** 2 * t + 2 * gamma * diam * math.sqrt(t * loss)
            + 2 * math.sqrt(2) * gamma ** 1.5 * diam ** 1.5 * t ** 0.75 * loss ** 0.25)


def membership_filter(x, y, oracle: Callable[[np.ndarray], bool]):
    """Pass ``(x, y)`` through if ``oracle(x)``, else substitute ``(0, 0)``.

    The trees consume the result either way, so the access pattern does not
    depend on membership.
    """
    x = np.asarray(x, dtype=float)
    if oracle(x):
        return x, float(y)
    return np.zeros_like(x), 0.0


def sparse_oracle(k: int) -> Callable[[np.ndarray], bool]:
    return lambda x: int(np.count_nonzero(x)) <= k


@dataclass
class ProjRegConfig:
    """Constants for the sketched algorithm.

    ``m``/``Phi`` override the formula-driven sketch; ``m_max`` caps ``m``
    (default: ``d``, since a sketch wider than the data cannot compress).
    ``lift_every`` lifts only at every k-th step (and at ``T``); the lift is
    post-processing, so skipping it changes nothing else.  Between lifts the
    emitted estimate is the PGD mirror point, itself a feasible preimage of
    the private sketch estimate.
    """

    c_alpha: float = 2.0
    c_m: float = 1.0
    r_cap: int = R_CAP
    r_exact: int = 1000
    r: Optional[int] = None
    step: str = "auto"
    warm_start: bool = True
    ingest: str = "reject"
    m: Optional[int] = None
    m_max: Optional[int] = -1
    Phi: Optional[np.ndarray] = None
    lift_every: int = 1
    lift_at: Optional[List[int]] = None


class ProjPrivIncReg:
    """Streaming sketched private least squares; see module docstring."""

    def __init__(self, T: int, C: ConstraintSet, budget: PrivacyBudget, W: float,
                 beta: float = 0.05, seed: int = 0, config: ProjRegConfig = None,
                 member: Optional[Callable[[np.ndarray], bool]] = None):
        if not C.symmetric:
            raise InvalidInput("the sketched algorithm lifts through the gauge; use a symmetric set")
        if not 0 < beta < 1:
            raise InvalidInput("beta must lie in (0, 1)")
        self.T, self.C, self.budget, self.beta, self.W = int(T), C, budget, beta, float(W)
        self.d = C.dim
        self.cfg = config or ProjRegConfig()
        self.member = member
        # Phi is fixed from the seed before any data is read.
        if self.cfg.Phi is not None:
            Phi = np.asarray(self.cfg.Phi, dtype=float)
            self.proj = ProjectionSpec(Phi, distortion(self.W, self.T), self.W)
        else:
            m_max = self.d if self.cfg.m_max == -1 else self.cfg.m_max
            self.proj = make_projection(self.d, self.W, self.T, beta, seed=seed, c_m=self.cfg.c_m,
                                        m=self.cfg.m, m_max=m_max)
        self.Phi = self.proj.Phi
        self.m = self.proj.m
        self.Phi_pinv = np.linalg.pinv(self.Phi)
        self.tree_budget = budget.split(2)
        self.ledger = BudgetLedger(mode="basic")
        sens = SensitivityBound(STREAM_SENSITIVITY)
        self.q_tree = TreeState(T, self.m, self.tree_budget, sens, seed=seed, stream_id=20)
        self.Q_tree = TreeState(T, self.m * self.m, self.tree_budget, sens, seed=seed, stream_id=21)
        for name in ("q_tree", "Q_tree"):
            self.ledger.charge(self.tree_budget.epsilon, self.tree_budget.delta, label=name)
        self.noise_free = noise_is_disabled()
        self.diam = geometry.diameter(C)
        self.kappa = 0.0 if self.noise_free else kappa(T, self.tree_budget.epsilon,
                                                         self.tree_budget.delta)
        self.alpha = self.cfg.c_alpha * self.kappa * self.diam * math.sqrt(self.m)
        if self.cfg.r is not None:
            self.r = int(self.cfg.r)
        elif self.alpha > 0:
            self.r = default_iterations(self.alpha, self.T * self.diam, cap=self.cfg.r_cap)
        else:
            self.r = min(self.cfg.r_exact, self.cfg.r_cap)
        self.mirror = np.zeros(self.d)
        self.theta = np.zeros(self.d)
        self.t = 0
        self.flags: List[int] = []
        self.skipped: List[int] = []
        self.lift_residual = 0.0
        self._proj_C = geometry.projector(C)

    def params(self) -> dict:
        return {"kappa": self.kappa, "alpha_prime": self.alpha, "r": self.r, "m": self.m,
                "gamma": self.proj.gamma, "W": self.W, "eps_tree": self.tree_budget.epsilon,
                "delta_tree": self.tree_budget.delta, "sigma2": self.q_tree.sigma2}

    def gradient_fn(self) -> PrivateGradientFn:
        Q = self.Q_tree.release().reshape(self.m, self.m)
        return PrivateGradientFn(0.5 * (Q + Q.T), self.q_tree.release())

    def _sketch(self, x):
        if not np.any(x):
            return np.zeros(self.m)
        try:
            return self.Phi @ scale_covariate(x, self.Phi)
        except DegenerateProjection:
            log.warning("degenerate projection at t=%d; feeding zeros", self.t + 1)
            self.skipped.append(self.t + 1)
            return np.zeros(self.m)

    def step_size(self) -> Optional[float]:
        rule = self.cfg.step
        if rule == "auto":
            rule = "smooth" if self.alpha == 0 else "bound"
        if rule == "smooth":
            return 1.0 / (2.0 * self.t)
        if rule != "bound":
            raise InvalidInput(f"unknown step rule {self.cfg.step!r}")
        return None

    def should_lift(self) -> bool:
        if self.t == self.T:
            return True
        if self.cfg.lift_at is not None:
            return self.t in self.cfg.lift_at
        return self.t % self.cfg.lift_every == 0

    def update(self, x, y) -> np.ndarray:
        p = ingest(x, y, self.cfg.ingest)
        if p.x.shape[0] != self.d:
            raise InvalidInput(f"covariate has length {p.x.shape[0]}, expected {self.d}")
        xv, yv = p.x, p.y
        if self.member is not None:
            xv, yv = membership_filter(xv, yv, self.member)
        z = self._sketch(xv)
        self.q_tree.step(z * yv)
        self.Q_tree.step(np.outer(z, z).reshape(-1))
        self.t += 1
        g = self.gradient_fn()
        Phi, pinv = self.Phi, self.Phi_pinv
        # gradient in sketch space, applied to the theta-space mirror point
        oracle = GradientOracle(lambda th: pinv @ g(Phi @ th), alpha=self.alpha,
                                lipschitz=streaming_lipschitz(self.t, self.diam))
        start = self.mirror if self.cfg.warm_start else np.zeros(self.d)
        try:
            self.mirror = noisy_projected_gradient(
                self.C, oracle, PgdConfig(self.r, eta=self.step_size(), start=start),
                project=self._proj_C)
        except NumericalFailure:
            log.warning("numerical failure at t=%d; repeating previous estimate", self.t)
            self.flags.append(self.t)
            return self.theta.copy()
        if self.should_lift():
            vartheta = Phi @ self.mirror
            try:
                self.theta = lift(LiftProblem(vartheta, self.C, Phi, pinv, hint=self.mirror))
                self.lift_residual = float(np.linalg.norm(Phi @ self.theta - vartheta))
            except LiftFailure as exc:
                log.warning("lift failed at t=%d (%s); keeping previous estimate", self.t, exc)
                self.flags.append(self.t)
        else:
            self.theta = self.mirror.copy()
        return self.theta.copy()


def proj_priv_inc_reg_run(X, y, C: ConstraintSet, budget: PrivacyBudget, W: float = None,
                          domain: DomainSpec = None, beta: float = 0.05, seed: int = 0,
                          config: ProjRegConfig = None, member=None,
                          width_samples: int = 20000) -> RunResult:
    """Run the sketched algorithm over a whole stream.

    ``W = w(X) + w(C)`` may be given directly or estimated by Monte Carlo from
    ``domain`` and ``C`` (public quantities, no privacy cost).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if W is None:
        if domain is None:
            raise InvalidInput("need W or a covariate domain to estimate it")
        W = (geometry.gaussian_width(domain, width_samples, seed=seed)
             + geometry.gaussian_width(C, width_samples, seed=seed + 1))
    est = ProjPrivIncReg(len(X), C, budget, W, beta=beta, seed=seed, config=config, member=member)
    thetas = np.empty((len(X), C.dim))
    residuals = np.full(len(X), np.nan)
    lifted = np.zeros(len(X), dtype=bool)
    for i in range(len(X)):
        thetas[i] = est.update(X[i], y[i])
        if est.should_lift():
            lifted[i] = True
            residuals[i] = est.lift_residual
    return RunResult(thetas, est.ledger, est.params(), est.flags,
                     extra={"lift_residual": residuals, "lifted": lifted, "skipped": est.skipped,
                            "Phi": est.Phi})
