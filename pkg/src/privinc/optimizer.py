"""Projected gradient descent with exact or approximate gradient oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import geometry
from .errors import InvalidInput, NumericalFailure
from .geometry import ConstraintSet

R_CAP = 10 ** 6


@dataclass
class GradientOracle:
    """Gradient oracle with a claimed uniform error ``alpha`` and Lipschitz constant.

    ``eval`` maps a parameter vector to a gradient estimate.  ``alpha`` and
    ``lipschitz`` are promises made by the caller; nothing here checks them.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    alpha: float = 0.0
    lipschitz: float = 1.0

    def __call__(self, theta):
        return self.eval(theta)


@dataclass
class PgdConfig:
    r: int
    eta: Optional[float] = None
    start: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.r < 1:
            raise InvalidInput("r must be >= 1")
        if self.eta is not None and not self.eta > 0:
            raise InvalidInput("eta must be positive")


def bound_stepsize(C: ConstraintSet, g: GradientOracle, r: int) -> float:
    """Constant step ``||C|| / (sqrt(r) (alpha + L))``."""
    denom = math.sqrt(r) * (g.alpha + g.lipschitz)
    return geometry.diameter(C) / denom if denom > 0 else geometry.diameter(C)


def pgd_bound(C: ConstraintSet, alpha: float, L: float, r: int) -> float:
    """Excess-value guarantee ``(alpha+L)||C||/sqrt(r) + alpha||C||`` of the averaged iterate."""
    D = geometry.diameter(C)
    return (alpha + L) * D / math.sqrt(r) + alpha * D


def noisy_projected_gradient(C: ConstraintSet, g: GradientOracle, cfg: PgdConfig,
                             project: Optional[Callable] = None, return_iterates: bool = False):
    """Run ``r`` steps of ``theta <- P_C(theta - eta g(theta))`` and average.

    The average covers ``theta_1 .. theta_r``, i.e. the start point and the
    first ``r - 1`` updates.  ``project`` overrides the projection onto ``C``
    (used when the iterate lives in a transformed space).
    """
    proj = project or geometry.projector(C)
    theta = np.zeros(C.dim) if cfg.start is None else np.asarray(cfg.start, dtype=float).copy()
    eta = cfg.eta if cfg.eta is not None else bound_stepsize(C, g, cfg.r)
    acc = np.zeros_like(theta)
    iterates = [] if return_iterates else None
    ev = g.eval
    try:
        for k in range(cfg.r):
            acc += theta
            if iterates is not None:
                iterates.append(theta.copy())
            if k == cfg.r - 1:
                break
            theta = proj(theta - eta * ev(theta))
    except (IndexError, ValueError, FloatingPointError) as exc:
        raise NumericalFailure(f"projected descent broke down: {exc}") from exc
    mean = acc / cfg.r
    if not np.all(np.isfinite(mean)):
        raise NumericalFailure("non-finite gradient or iterate during projected descent")
    if return_iterates:
        return mean, np.array(iterates)
    return mean


def default_iterations(alpha_prime: float, L: float, cap: int = R_CAP) -> int:
    """``ceil((1 + L/alpha')^2)``, which makes the guarantee ``2 alpha' ||C||``."""
    if not alpha_prime > 0:
        raise InvalidInput("alpha' must be positive; supply r explicitly for exact gradients")
    ratio = L / alpha_prime
    if ratio > math.sqrt(cap):
        return cap
    # round before ceil so exact integers are not bumped by float noise
    return min(max(math.ceil(round((1 + ratio) ** 2, 9)), 1), cap)


def streaming_lipschitz(t: int, diam: float) -> float:
    """Lipschitz bound ``2t(1 + ||C||)`` of the squared loss summed over ``t`` points."""
    return 2.0 * t * (1.0 + diam)


@dataclass
class MinimizeResult:
    theta: np.ndarray
    value: float
    gap: float
    iterations: int
    converged: bool


def _fw_gap(C, theta, grad):
    # sup_{z in C} <grad, theta - z> bounds f(theta) - min f for convex f.
    return float(grad @ theta + geometry.support(C, -grad))


def minimize_quadratic(C: ConstraintSet, A, b, const: float = 0.0, start=None,
                       tol: float = 1e-8, max_iter: int = R_CAP, rel_gap: float = 1e-10) -> MinimizeResult:
    """Minimize ``theta' A theta - 2 b' theta + const`` over ``C`` (``A`` PSD).

    Accelerated projected gradient with adaptive restart.  Stops when the
    gradient-mapping norm drops below ``tol`` or the Frank-Wolfe gap certifies
    the value to ``rel_gap`` relative accuracy.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    d = C.dim
    lmax = float(np.linalg.eigvalsh(A)[-1]) if d > 0 else 0.0
    f = lambda th: float(th @ A @ th - 2 * b @ th + const)
    grad = lambda th: 2.0 * (A @ th - b)
    x = geometry.project(C, np.zeros(d) if start is None else start)
    if lmax <= 1e-300:
        # linear objective: the minimizer is the support point of 2b
        g = grad(x)
        return MinimizeResult(x, f(x), _fw_gap(C, x, g), 0, True)
    step = 1.0 / (2.0 * lmax)
    y = x.copy()
    tk = 1.0
    fx = f(x)
    gap = math.inf
    for it in range(1, max_iter + 1):
        gy = grad(y)
        x_new = geometry.project(C, y - step * gy)
        gm = np.linalg.norm(x_new - y) / step
        f_new = f(x_new)
        if f_new > fx and tk > 1.0:
            # restart momentum
            y = x.copy()
            tk = 1.0
            continue
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        y = x_new + ((tk - 1) / t_new) * (x_new - x)
        x, fx, tk = x_new, f_new, t_new
        if gm < tol or it % 25 == 0:
            gap = _fw_gap(C, x, grad(x))
            if gm < tol or gap <= rel_gap * max(1.0, abs(fx)):
                return MinimizeResult(x, fx, gap, it, True)
    gap = _fw_gap(C, x, grad(x))
    return MinimizeResult(x, fx, gap, max_iter, gap <= rel_gap * max(1.0, abs(fx)))


def exact_minimizer(C: ConstraintSet, X=None, y=None, loss=None, start=None, **kw) -> MinimizeResult:
    """Non-private constrained empirical risk minimizer over a finite dataset.

    Squared loss (the default) goes through :func:`minimize_quadratic` on the
    sufficient statistics.  Other smooth losses from :mod:`privinc.inc_erm`
    use accelerated projected gradient on their full-batch gradient.
    """
    d = C.dim
    if X is None or len(X) == 0:
        th = geometry.project(C, np.zeros(d) if start is None else start)
        return MinimizeResult(th, 0.0, 0.0, 0, True)
    X = np.asarray(X, dtype=float).reshape(-1, d)
    y = np.asarray(y, dtype=float).reshape(-1)
    if loss is None:
        return minimize_quadratic(C, X.T @ X, X.T @ y, float(y @ y), start=start, **kw)
    quad = loss.quadratic(X, y)
    if quad is not None:
        return minimize_quadratic(C, *quad, start=start, **kw)
    return minimize_smooth(C, lambda th: loss.risk(th, X, y), lambda th: loss.grad(th, X, y),
                           loss.smoothness(X), start=start, **kw)


def minimize_smooth(C: ConstraintSet, f, grad, smooth: float, start=None, tol: float = 1e-8,
                    max_iter: int = 200_000, rel_gap: float = 1e-10) -> MinimizeResult:
    """Accelerated projected gradient for a convex ``smooth``-smooth objective."""
    x = geometry.project(C, np.zeros(C.dim) if start is None else start)
    step = 1.0 / max(smooth, 1e-300)
    y, tk, fx = x.copy(), 1.0, f(x)
    gap = math.inf
    for it in range(1, max_iter + 1):
        gy = grad(y)
        if not np.all(np.isfinite(gy)):
            raise NumericalFailure("non-finite gradient")
        x_new = geometry.project(C, y - step * gy)
        gm = np.linalg.norm(x_new - y) / step
        f_new = f(x_new)
        if f_new > fx and tk > 1.0:
            y, tk = x.copy(), 1.0
            continue
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * tk * tk))
        y = x_new + ((tk - 1) / t_new) * (x_new - x)
        x, fx, tk = x_new, f_new, t_new
        if gm < tol or it % 25 == 0:
            gap = _fw_gap(C, x, grad(x))
            if gm < tol or gap <= rel_gap * max(1.0, abs(fx)):
                return MinimizeResult(x, fx, gap, it, True)
    gap = _fw_gap(C, x, grad(x))
    return MinimizeResult(x, fx, gap, max_iter, gap <= rel_gap * max(1.0, abs(fx)))
