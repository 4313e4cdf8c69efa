"""Private incremental linear regression through private gradient functions.

Two tree mechanisms track ``sum x_i y_i`` and ``sum x_i x_i'`` (the latter
flattened to ``d^2`` entries).  At each step their noisy outputs define the
affine map ``theta -> 2(Q theta - q)``, which stands in for the gradient of
the squared loss.  Evaluating that map is post-processing, so projected
gradient descent may call it as often as it likes.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import geometry
from .dp import BudgetLedger, PrivacyBudget, SensitivityBound, noise_is_disabled
from .errors import InvalidInput, NumericalFailure
from .geometry import ConstraintSet
from .optimizer import (GradientOracle, PgdConfig, R_CAP, default_iterations,
                        noisy_projected_gradient, streaming_lipschitz)
from .tree import TreeState, tree_depth

log = logging.getLogger(__name__)

# The covariate/response streams feeding the trees have L2 sensitivity 2.
STREAM_SENSITIVITY = 2.0


@dataclass
class StreamPoint:
    x: np.ndarray
    y: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).reshape(-1)
        self.y = float(self.y)


def ingest(x, y, policy: str = "reject", tol: float = 1e-9) -> StreamPoint:
    """Check ``||x|| <= 1`` and ``|y| <= 1``.

    ``policy="reject"`` raises on violation; ``policy="clip"`` rescales ``x``
    into the unit ball and clamps ``y``, logging a warning because the privacy
    statement then refers to the clipped stream.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = float(y)
    if not (np.all(np.isfinite(x)) and math.isfinite(y)):
        raise InvalidInput("stream point has non-finite entries")
    nx = float(np.linalg.norm(x))
    if nx <= 1 + tol and abs(y) <= 1 + tol:
        return StreamPoint(x, y)
    if policy == "reject":
        raise InvalidInput(f"stream point out of range: ||x||={nx:.6g}, |y|={abs(y):.6g}")
    if policy != "clip":
        raise InvalidInput(f"unknown ingestion policy {policy!r}")
    log.warning("clipping stream point (||x||=%.4g, |y|=%.4g); privacy refers to the clipped stream",
                nx, abs(y))
    if nx > 1:
        x = x / nx
    return StreamPoint(x, max(-1.0, min(1.0, y)))


def true_gradient(X, y, theta) -> np.ndarray:
    """Gradient ``2(X'X theta - X'y)`` of ``sum_i (y_i - <x_i, theta>)^2``."""
    theta = np.asarray(theta, dtype=float)
    if X is None or len(X) == 0:
        return np.zeros_like(theta)
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    y = np.asarray(y, dtype=float)
    return 2.0 * (X.T @ (X @ theta) - X.T @ y)


def squared_risk(theta, X, y) -> float:
    if X is None or len(X) == 0:
        return 0.0
    r = np.asarray(y, dtype=float) - np.asarray(X, dtype=float) @ np.asarray(theta, dtype=float)
    return float(r @ r)


@dataclass
class PrivateGradientFn:
    """Released pair ``(Q, q)``; evaluates ``2(Q theta - q)`` at no privacy cost."""

    Q: np.ndarray
    q: np.ndarray

    def __call__(self, theta):
        return 2.0 * (self.Q @ theta - self.q)


def kappa(T: int, eps_tree: float, delta_tree: float) -> float:
    """``log2(T)^{3/2} sqrt(ln(1/delta')) / eps'``."""
    return tree_depth(T) ** 1.5 * math.sqrt(math.log(1.0 / delta_tree)) / eps_tree


@dataclass
class RegConfig:
    """Tunable constants.  Defaults follow the algorithm's parameter rules.

    ``c_alpha`` multiplies the gradient-accuracy target, ``r_cap`` bounds the
    PGD iteration count, and ``r_exact`` is the iteration count used when the
    gradient is exact (noise disabled), where the accuracy-driven rule is
    undefined.

    ``step`` picks the PGD step: ``"bound"`` is ``||C|| / (sqrt(r)(alpha+L_t))``;
    ``"smooth"`` is ``1/(2t)``, the inverse of the public smoothness bound of
    the summed loss; ``"auto"`` uses ``smooth`` only for exact gradients.
    """

    c_alpha: float = 2.0
    r_cap: int = R_CAP
    r_exact: int = 1000
    r: Optional[int] = None
    step: str = "auto"
    warm_start: bool = True
    ingest: str = "reject"


class PrivIncReg:
    """Streaming private least-squares estimator over a known horizon ``T``.

    Call :meth:`update` once per arriving point; each call returns the current
    private estimate in ``C``.
    """

    def __init__(self, T: int, C: ConstraintSet, budget: PrivacyBudget, beta: float = 0.05,
                 seed: int = 0, config: RegConfig = None):
        if not 0 < beta < 1:
            raise InvalidInput("beta must lie in (0, 1)")
        self.T, self.C, self.budget, self.beta = int(T), C, budget, beta
        self.d = C.dim
        self.cfg = config or RegConfig()
        self.seed = seed
        self.tree_budget = budget.split(2)
        self.ledger = BudgetLedger(mode="basic")
        sens = SensitivityBound(STREAM_SENSITIVITY)
        self.q_tree = TreeState(T, self.d, self.tree_budget, sens, seed=seed, stream_id=10)
        self.Q_tree = TreeState(T, self.d * self.d, self.tree_budget, sens, seed=seed, stream_id=11)
        for name in ("q_tree", "Q_tree"):
            self.ledger.charge(self.tree_budget.epsilon, self.tree_budget.delta, label=name)
        self.noise_free = noise_is_disabled()
        self.diam = geometry.diameter(C)
        self.kappa = 0.0 if self.noise_free else kappa(T, self.tree_budget.epsilon,
                                                         self.tree_budget.delta)
        self.alpha = self._alpha(self.d)
        if self.cfg.r is not None:
            self.r = int(self.cfg.r)
        elif self.alpha > 0:
            self.r = default_iterations(self.alpha, self.T * self.diam, cap=self.cfg.r_cap)
        else:
            self.r = min(self.cfg.r_exact, self.cfg.r_cap)
        self.theta = np.zeros(self.d)
        self.t = 0
        self.flags: List[int] = []

    def _alpha(self, dim: int) -> float:
        # per-step failure probability beta/T, hence ln(T/beta)
        return self.cfg.c_alpha * self.kappa * self.diam * (
            math.sqrt(dim) + math.sqrt(math.log(self.T / self.beta)))

    def params(self) -> dict:
        return {"kappa": self.kappa, "alpha_prime": self.alpha, "r": self.r,
                "eps_tree": self.tree_budget.epsilon, "delta_tree": self.tree_budget.delta,
                "sigma2": self.q_tree.sigma2}

    def step_size(self) -> Optional[float]:
        """None means the optimizer's default (Lipschitz) step."""
        rule = self.cfg.step
        if rule == "auto":
            rule = "smooth" if self.alpha == 0 else "bound"
        if rule == "smooth":
            return 1.0 / (2.0 * self.t)
        if rule != "bound":
            raise InvalidInput(f"unknown step rule {self.cfg.step!r}")
        return None

    def gradient_fn(self) -> PrivateGradientFn:
        Q = self.Q_tree.release().reshape(self.d, self.d)
        Q = 0.5 * (Q + Q.T)
        return PrivateGradientFn(Q, self.q_tree.release())

    def _feed(self, x, y):
        self.q_tree.step(x * y)
        return self.Q_tree.step(np.outer(x, x).reshape(-1))

    def update(self, x, y) -> np.ndarray:
        p = ingest(x, y, self.cfg.ingest)
        if p.x.shape[0] != self.d:
            raise InvalidInput(f"covariate has length {p.x.shape[0]}, expected {self.d}")
        self._feed(p.x, p.y)
        self.t += 1
        g = self.gradient_fn()
        oracle = GradientOracle(g, alpha=self.alpha,
                                lipschitz=streaming_lipschitz(self.t, self.diam))
        start = self.theta if self.cfg.warm_start else np.zeros(self.d)
        try:
            self.theta = noisy_projected_gradient(
                self.C, oracle, PgdConfig(self.r, eta=self.step_size(), start=start))
        except NumericalFailure:
            log.warning("numerical failure at t=%d; repeating previous estimate", self.t)
            self.flags.append(self.t)
        return self.theta.copy()


@dataclass
class RunResult:
    thetas: np.ndarray
    ledger: BudgetLedger
    params: dict = field(default_factory=dict)
    flags: List[int] = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def priv_inc_reg_run(X, y, C: ConstraintSet, budget: PrivacyBudget, beta: float = 0.05,
                     seed: int = 0, config: RegConfig = None) -> RunResult:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    est = PrivIncReg(len(X), C, budget, beta=beta, seed=seed, config=config)
    out = np.array([est.update(X[i], y[i]) for i in range(len(X))]).reshape(len(X), C.dim)
    return RunResult(out, est.ledger, est.params(), est.flags)
