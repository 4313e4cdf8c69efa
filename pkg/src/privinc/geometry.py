"""Convex constraint sets and the geometric primitives the solvers rely on.

Every set here is a scaled copy of a standard body, described by a ``kind``,
a ``radius`` and a dimension.  The operations are pure functions of their
arguments and are safe to call from several threads at once.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.special import gammaln

from .errors import InvalidInput, Unsupported

KINDS = ("l2", "l1", "simplex", "lp", "group_l12")
DOMAIN_KINDS = ("unit_l2", "k_sparse", "unit_l1")

# Feasibility slack, relative to the diameter of the set.
FEAS_TOL = 1e-9

_ALIASES = {
    "l2ball": "l2", "l2": "l2",
    "l1ball": "l1", "l1": "l1",
    "simplex": "simplex",
    "lpball": "lp", "lp": "lp",
    "groupl12": "group_l12", "group_l12": "group_l12",
    "unitl2ball": "unit_l2", "unit_l2": "unit_l2",
    "ksparse": "k_sparse", "k_sparse": "k_sparse",
    "unitl1ball": "unit_l1", "unit_l1": "unit_l1",
}


def _canon(kind: str) -> str:
    key = kind.replace("-", "").replace(" ", "").lower()
    if key not in _ALIASES:
        key = key.replace("_", "")
    try:
        return _ALIASES[key]
    except KeyError:
        raise InvalidInput(f"unknown set kind {kind!r}") from None


@dataclass(frozen=True)
class ConstraintSet:
    """A closed convex body ``radius * B`` in ``dim`` dimensions.

    ``kind`` is one of ``l2``, ``l1``, ``simplex``, ``lp`` (needs ``p`` in
    [1, 2]) or ``group_l12`` (needs a block size ``k`` dividing ``dim``).
    The simplex is ``{z >= 0, sum(z) = radius}``.
    """

    kind: str
    radius: float = 1.0
    dim: int = 1
    p: Optional[float] = None
    k: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _canon(self.kind))
        if self.kind not in KINDS:
            raise InvalidInput(f"{self.kind!r} is a domain kind, not a constraint set")
        if not (self.radius > 0 and math.isfinite(self.radius)):
            raise InvalidInput(f"radius must be positive, got {self.radius}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidInput(f"dim must be a positive integer, got {self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        if self.kind == "lp":
            if self.p is None or not 1.0 <= self.p <= 2.0:
                raise InvalidInput(f"lp ball needs 1 <= p <= 2, got p={self.p}")
        if self.kind == "group_l12":
            if self.k is None or self.k < 1 or self.dim % self.k:
                raise InvalidInput(f"group block size k={self.k} must divide dim={self.dim}")

    @property
    def symmetric(self) -> bool:
        return self.kind != "simplex"

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "radius": self.radius, "dim": self.dim}
        if self.p is not None:
            out["p"] = self.p
        if self.k is not None:
            out["k"] = self.k
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "ConstraintSet":
        try:
            return cls(obj["kind"], float(obj.get("radius", 1.0)), int(obj["dim"]),
                       p=obj.get("p"), k=obj.get("k"))
        except KeyError as exc:
            raise InvalidInput(f"constraint set is missing field {exc}") from None


# Convenience constructors; names follow the usual mathematical ones.
def L2Ball(radius=1.0, dim=1):
    return ConstraintSet("l2", radius, dim)


def L1Ball(radius=1.0, dim=1):
    return ConstraintSet("l1", radius, dim)


def Simplex(dim, radius=1.0):
    return ConstraintSet("simplex", radius, dim)


def LpBall(p, radius=1.0, dim=1):
    return ConstraintSet("lp", radius, dim, p=p)


def GroupL12(k, radius=1.0, dim=1):
    return ConstraintSet("group_l12", radius, dim, k=k)


@dataclass(frozen=True)
class DomainSpec:
    """Covariate domain X: unit L2 ball, k-sparse unit vectors, or unit L1 ball."""

    kind: str
    dim: int
    k: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", _canon(self.kind))
        if self.kind not in DOMAIN_KINDS:
            raise InvalidInput(f"unknown domain kind {self.kind!r}")
        if self.dim < 1:
            raise InvalidInput("dim must be positive")
        if self.kind == "k_sparse":
            if self.k is None or not 1 <= self.k <= self.dim:
                raise InvalidInput(f"k-sparse domain needs 1 <= k <= dim, got k={self.k}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` covariates of unit norm (so always inside the domain)."""
        d = self.dim
        if self.kind == "unit_l2" or (self.kind == "k_sparse" and self.k == d):
            x = rng.standard_normal((n, d))
        elif self.kind == "k_sparse":
            x = np.zeros((n, d))
            for i in range(n):
                idx = rng.choice(d, size=self.k, replace=False)
                x[i, idx] = rng.standard_normal(self.k)
        else:
            # normalized Laplace draws lie on the l1 sphere
            x = rng.laplace(size=(n, d))
            x /= np.abs(x).sum(axis=1, keepdims=True)
            return x
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return x / norms

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "unit_l1":
            return bool(np.abs(x).sum() <= 1 + tol)
        if np.linalg.norm(x) > 1 + tol:
            return False
        if self.kind == "k_sparse":
            return int(np.count_nonzero(x)) <= self.k
        return True

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dim": self.dim}
        if self.k is not None:
            out["k"] = self.k
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "DomainSpec":
        return cls(obj["kind"], int(obj["dim"]), k=obj.get("k"))


def _check_dim(C, v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] != C.dim:
        raise InvalidInput(f"expected a vector of length {C.dim}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInput("vector has non-finite entries")
    return v


def project_simplex(v: np.ndarray, s: float = 1.0) -> np.ndarray:
    """Euclidean projection onto ``{z >= 0, sum(z) = s}`` by sort and threshold."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - s
    ind = np.arange(1, v.shape[0] + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project_l1(v: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Projection onto the l1 ball: soft-threshold at the level found by sorting."""
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    w = project_simplex(a, radius)
    return np.sign(v) * w


def project_l2(v: np.ndarray, radius: float = 1.0) -> np.ndarray:
    n = np.linalg.norm(v)
    if n <= radius:
        return v.copy()
    return v * (radius / n)


def _lp_shrink(a, lam, p, iters=80):
    # Solve u + lam*p*u**(p-1) = a for u in [0, a], elementwise, by bisection
    # polished with Newton.  The left side is increasing in u for p > 1.
    lo = np.zeros_like(a)
    hi = a.copy()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        f = mid + lam * p * mid ** (p - 1) - a
        pos = f > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
        if np.max(hi - lo, initial=0.0) < 1e-15:
            break
    u = 0.5 * (lo + hi)
    for _ in range(3):
        safe = u > 0
        fu = u + lam * p * np.where(safe, u, 1.0) ** (p - 1) - a
        du = 1 + lam * p * (p - 1) * np.where(safe, u, 1.0) ** (p - 2)
        step = np.where(safe, fu / du, 0.0)
        u = np.clip(u - step, lo, hi)
    return u


def project_lp(v: np.ndarray, p: float, radius: float = 1.0, tol: float = 1e-10) -> np.ndarray:
    """Projection onto the lp ball, 1 < p < 2.

    There is no closed form.  The optimality conditions give each coordinate
    as the root of ``u + lam*p*u**(p-1) = |v_i|``; the multiplier ``lam`` is
    found by a safeguarded Newton iteration on ``sum(u**p) = radius**p``.
    """
    if p == 1:
        return project_l1(v, radius)
    if p == 2:
        return project_l2(v, radius)
    a = np.abs(v)
    target = radius ** p
    if np.sum(a ** p) <= target:
        return v.copy()

    def excess(lam):
        u = _lp_shrink(a, lam, p)
        return np.sum(u ** p) - target, u

    lo, hi = 0.0, 1.0
    while excess(hi)[0] > 0:
        hi *= 2.0
    lam = 0.5 * hi
    u = None
    for _ in range(200):
        g, u = excess(lam)
        if abs(g) <= tol * target:
            break
        if g > 0:
            lo = lam
        else:
            hi = lam
        # d/dlam of sum(u^p), with du/dlam from implicit differentiation
        pos = u > 0
        up = np.where(pos, u, 1.0)
        du = -p * up ** (p - 1) / (1 + lam * p * (p - 1) * up ** (p - 2))
        dg = np.sum(np.where(pos, p * up ** (p - 1) * du, 0.0))
        nxt = lam - g / dg if dg < 0 else -1.0
        lam = nxt if lo < nxt < hi else 0.5 * (lo + hi)
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    u = _lp_shrink(a, lam, p)
    # Final radial touch-up absorbs the residual multiplier error.
    norm = np.sum(u ** p) ** (1.0 / p)
    if norm > radius:
        u *= radius / norm
    return np.sign(v) * u


def project_group_l12(v: np.ndarray, k: int, radius: float = 1.0) -> np.ndarray:
    blocks = v.reshape(-1, k)
    norms = np.linalg.norm(blocks, axis=1)
    if norms.sum() <= radius:
        return v.copy()
    new = project_simplex(norms, radius)
    scale = np.divide(new, norms, out=np.zeros_like(norms), where=norms > 0)
    return (blocks * scale[:, None]).reshape(-1)


def project(C: ConstraintSet, v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``C``."""
    v = _check_dim(C, v)
    if C.kind == "l2":
        return project_l2(v, C.radius)
    if C.kind == "l1":
        return project_l1(v, C.radius)
    if C.kind == "simplex":
        return project_simplex(v, C.radius)
    if C.kind == "lp":
        return project_lp(v, C.p, C.radius)
    return project_group_l12(v, C.k, C.radius)


def projector(C: ConstraintSet):
    """Projection onto ``C`` as a closure, skipping input validation (for inner loops)."""
    r = C.radius
    if C.kind == "l2":
        def proj(v):
            n = math.sqrt(float(v @ v))
            return v * (r / n) if n > r else v
        return proj
    if C.kind == "l1":
        return lambda v: project_l1(v, r)
    if C.kind == "simplex":
        return lambda v: project_simplex(v, r)
    if C.kind == "lp":
        return lambda v: project_lp(v, C.p, r)
    return lambda v: project_group_l12(v, C.k, r)


def gauge(C: ConstraintSet, v) -> float:
    """Minkowski functional ``inf{rho >= 0 : v in rho*C}`` of a symmetric body."""
    if not C.symmetric:
        raise Unsupported("the gauge of the simplex is not a norm; lifting needs a symmetric body")
    v = _check_dim(C, v)
    if C.kind == "l2":
        n = np.linalg.norm(v)
    elif C.kind == "l1":
        n = np.abs(v).sum()
    elif C.kind == "lp":
        n = np.sum(np.abs(v) ** C.p) ** (1.0 / C.p)
    else:
        n = np.linalg.norm(v.reshape(-1, C.k), axis=1).sum()
    return float(n / C.radius)


def contains(C: ConstraintSet, v, tol: float = FEAS_TOL) -> bool:
    v = _check_dim(C, v)
    slack = tol * diameter(C)
    if C.kind == "simplex":
        return bool(np.all(v >= -slack) and abs(v.sum() - C.radius) <= slack * C.dim)
    return gauge(C, v) <= 1 + tol


def diameter(C: ConstraintSet) -> float:
    """``sup_{z in C} ||z||``; every kind here attains it at ``radius``."""
    return float(C.radius)


def support(C: ConstraintSet, g) -> float:
    """Support function ``sup_{z in C} <z, g>``."""
    g = np.asarray(g, dtype=float)
    r = C.radius
    if C.kind == "l2":
        return float(r * np.linalg.norm(g))
    if C.kind == "l1":
        return float(r * np.max(np.abs(g)))
    if C.kind == "simplex":
        return float(r * np.max(g))
    if C.kind == "lp":
        if C.p == 1:
            return float(r * np.max(np.abs(g)))
        q = C.p / (C.p - 1)
        return float(r * np.sum(np.abs(g) ** q) ** (1 / q))
    return float(r * np.max(np.linalg.norm(g.reshape(-1, C.k), axis=1)))


def _batched_sup(S, G):
    """``sup_{a in S} <a, g>`` for every row ``g`` of ``G``."""
    if isinstance(S, np.ndarray):
        pts = np.atleast_2d(S)
        return np.max(G @ pts.T, axis=1)
    if isinstance(S, DomainSpec):
        if S.kind == "unit_l2":
            return np.linalg.norm(G, axis=1)
        if S.kind == "unit_l1":
            return np.max(np.abs(G), axis=1)
        top = -np.partition(-(G ** 2), S.k - 1, axis=1)[:, : S.k]
        return np.sqrt(top.sum(axis=1))
    if S.kind == "l2":
        return S.radius * np.linalg.norm(G, axis=1)
    if S.kind == "l1":
        return S.radius * np.max(np.abs(G), axis=1)
    if S.kind == "simplex":
        return S.radius * np.max(G, axis=1)
    return np.array([support(S, g) for g in G])


def gaussian_width(S: Union[ConstraintSet, DomainSpec, np.ndarray], samples: int = 10000,
                   seed=None, chunk: int = 100_000, return_stderr: bool = False):
    """Monte Carlo estimate of ``E sup_{a in S} <a, g>`` with ``g ~ N(0, I)``.

    ``S`` may be a constraint set, a covariate domain, or a finite point set
    given as an ``(n, d)`` array.  With ``return_stderr`` the standard error of
    the estimate is returned as well.
    """
    if samples < 1:
        raise InvalidInput("samples must be >= 1")
    d = S.shape[-1] if isinstance(S, np.ndarray) else S.dim
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        vals = _batched_sup(S, rng.standard_normal((n, d)))
        total += vals.sum()
        total_sq += (vals ** 2).sum()
        done += n
    mean = total / samples
    if not return_stderr:
        return float(mean)
    var = max(total_sq / samples - mean ** 2, 0.0)
    return float(mean), float(math.sqrt(var / samples))


def width_l2_exact(d: int, radius: float = 1.0) -> float:
    """``E||g||`` for ``g ~ N(0, I_d)``, times the radius: sqrt(2)*Gamma((d+1)/2)/Gamma(d/2)."""
    return radius * math.sqrt(2.0) * math.exp(gammaln((d + 1) / 2) - gammaln(d / 2))


def width_l1_bound(d: int, radius: float = 1.0) -> float:
    """Upper bound ``radius * sqrt(2 ln(2d))`` on the l1-ball width (order sqrt(log d))."""
    return radius * math.sqrt(2.0 * math.log(2 * d))


def width_sparse_bound(d: int, k: int) -> float:
    """Order ``sqrt(k log(d/k))`` bound for k-sparse unit vectors.

    Uses ``sqrt(2 k ln(e d / k))``, which dominates the expected root of the
    k largest squared Gaussian coordinates.
    """
    return math.sqrt(2.0 * k * math.log(math.e * d / k))


def gaussian_width_bound(S: Union[ConstraintSet, DomainSpec]) -> float:
    """Closed-form width value or bound for the supported sets."""
    if isinstance(S, DomainSpec):
        if S.kind == "unit_l2":
            return width_l2_exact(S.dim)
        if S.kind == "unit_l1":
            return width_l1_bound(S.dim)
        return width_sparse_bound(S.dim, S.k)
    if S.kind == "l2":
        return width_l2_exact(S.dim, S.radius)
    if S.kind in ("l1", "simplex"):
        return width_l1_bound(S.dim, S.radius)
    if S.kind == "group_l12":
        # max of dim/k block chi norms: sqrt(k) + sqrt(2 ln(dim/k))
        return S.radius * (math.sqrt(S.k) + math.sqrt(2 * math.log(max(S.dim // S.k, 1)) + 1e-300))
    # lp ball with 1 < p <= 2 sits inside the l2 ball of the same radius
    return width_l2_exact(S.dim, S.radius)
