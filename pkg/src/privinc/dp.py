"""Privacy parameters, the Gaussian mechanism and composition accounting.

Randomness contract: every mechanism owns its own ``numpy`` generator.  When
a mechanism needs a fresh stream per timestep it derives one with
:func:`substream`, which keys a ``SeedSequence`` on ``(master seed, stream
id, timestep)``.  Identical seeds therefore reproduce noise bit for bit, and
the noise drawn at step ``t`` does not depend on how many draws happened
earlier.
"""
from __future__ import annotations

import contextlib
import json
import math
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import InvalidInput, OutOfRange

_state = threading.local()
_global_disabled = False


def noise_is_disabled() -> bool:
    return getattr(_state, "disabled", _global_disabled)


def set_noise_disabled(flag: bool) -> None:
    """Process-wide switch that zeroes every privacy noise draw.

    Only meant for oracle-equivalence testing.  While it is on, ledgers report
    an infinite epsilon so nothing produced can be mistaken for a private
    release.
    """
    global _global_disabled
    _global_disabled = bool(flag)
    if hasattr(_state, "disabled"):
        del _state.disabled


@contextlib.contextmanager
def noise_disabled(flag: bool = True):
    """Thread-local version of :func:`set_noise_disabled` for a ``with`` block."""
    prev = getattr(_state, "disabled", None)
    _state.disabled = bool(flag)
    try:
        yield
    finally:
        if prev is None:
            del _state.disabled
        else:
            _state.disabled = prev


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` (e.g. ``(stream_id, t)``) under ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInput(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise InvalidInput(f"delta must lie in (0, 1), got {self.delta}")

    def split(self, parts: int) -> "PrivacyBudget":
        """Equal share for ``parts`` mechanisms combined by basic composition."""
        return PrivacyBudget(self.epsilon / parts, self.delta / parts)


@dataclass(frozen=True)
class SensitivityBound:
    delta2: float

    def __post_init__(self):
        if not self.delta2 >= 0:
            raise InvalidInput(f"sensitivity must be nonnegative, got {self.delta2}")


def gaussian_sigma2(s: SensitivityBound, b: PrivacyBudget) -> float:
    """Per-coordinate variance ``2 * D^2 * ln(2/delta) / eps^2``."""
    return 2.0 * s.delta2 ** 2 * math.log(2.0 / b.delta) / b.epsilon ** 2


def gaussian_mechanism(value, s: SensitivityBound, b: PrivacyBudget,
                       rng: np.random.Generator) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    if not math.isfinite(s.delta2):
        raise InvalidInput("sensitivity must be finite")
    if s.delta2 == 0 or noise_is_disabled():
        return value.copy()
    sigma = math.sqrt(gaussian_sigma2(s, b))
    return value + sigma * rng.standard_normal(value.shape)


def compose_basic(interactions) -> Tuple[float, float]:
    """Summed ``(eps, delta)`` over a sequence of interactions."""
    eps = sum(float(e) for e, _ in interactions)
    dlt = sum(float(d) for _, d in interactions)
    return eps, dlt


def compose_advanced(k: int, eps: float, delta: float, delta_star: float) -> Tuple[float, float]:
    """Total ``(eps, delta)`` for ``k`` adaptive ``(eps, delta)`` interactions.

    Returns ``(eps*sqrt(2k ln(1/delta_star)) + 2k eps^2, k*delta + delta_star)``.
    Requires ``eps <= 1``.
    """
    if eps > 1:
        raise OutOfRange(f"advanced composition needs eps <= 1, got {eps}")
    if not delta_star > 0:
        raise InvalidInput("delta_star must be positive")
    if k < 0:
        raise InvalidInput("k must be nonnegative")
    total = eps * math.sqrt(2 * k * math.log(1 / delta_star)) + 2 * k * eps ** 2
    return total, k * delta + delta_star


def advanced_per_step(k: int, eps: float, delta: float) -> Tuple[float, float]:
    """Largest per-step ``(eps0, delta0)`` whose k-fold advanced composition,
    with half of ``delta`` reserved as the slack term, totals ``(eps, delta)``.

    Solves ``2k x^2 + x sqrt(2k ln(2/delta)) = eps`` for ``x``.  The result is
    also capped at 1, the range where the composition bound applies.
    """
    if k < 1:
        raise InvalidInput("k must be >= 1")
    b = math.sqrt(2 * k * math.log(2 / delta))
    x = (-b + math.sqrt(b * b + 8 * k * eps)) / (4 * k)
    return min(x, 1.0), delta / (2 * k)


def split_for_inc_erm(b: PrivacyBudget, T: int, tau: int) -> Tuple[float, float]:
    """Per-call budget for the batch solver invoked every ``tau`` steps.

    ``eps' = eps / (2 sqrt((2T/tau) ln(2/delta)))`` and ``delta' = delta tau / (2T)``.
    """
    if not 1 <= tau <= T:
        raise InvalidInput(f"need 1 <= tau <= T, got tau={tau}, T={T}")
    eps_p = b.epsilon / (2 * math.sqrt((2 * T / tau) * math.log(2 / b.delta)))
    return eps_p, b.delta * tau / (2 * T)


@dataclass
class BudgetLedger:
    """Record of every private release a run performed.

    ``mode`` names the composition used when the run's guarantee is stated:
    ``"basic"`` or ``"advanced"`` (with ``delta_star``).  Noise-free runs
    mark the ledger so every total reports an infinite epsilon.
    """

    mode: str = "basic"
    delta_star: Optional[float] = None
    interactions: List[Tuple[float, float]] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)
    noise_free: bool = False
    failures: int = 0

    def __post_init__(self):
        if self.mode not in ("basic", "advanced"):
            raise InvalidInput(f"unknown composition mode {self.mode!r}")
        if self.mode == "advanced" and not self.delta_star:
            raise InvalidInput("advanced mode needs delta_star")
        self.noise_free = self.noise_free or noise_is_disabled()

    def charge(self, eps: float, delta: float, label: str = "") -> None:
        if eps < 0 or delta < 0:
            raise InvalidInput("cannot charge a negative budget")
        self.interactions.append((float(eps), float(delta)))
        self.labels.append(label)
        if noise_is_disabled():
            self.noise_free = True

    def basic_total(self) -> Tuple[float, float]:
        eps, dlt = compose_basic(self.interactions)
        return (math.inf if self.noise_free else eps), dlt

    def advanced_total(self, delta_star: Optional[float] = None) -> Tuple[float, float]:
        """Advanced composition over the ledger.

        Entries must be uniform; heterogeneous ledgers are bounded using the
        largest entry.
        """
        ds = delta_star if delta_star is not None else self.delta_star
        if ds is None:
            raise InvalidInput("advanced total needs delta_star")
        if not self.interactions:
            return (math.inf if self.noise_free else 0.0), ds
        eps = max(e for e, _ in self.interactions)
        dlt = max(d for _, d in self.interactions)
        tot_e, tot_d = compose_advanced(len(self.interactions), min(eps, 1.0), dlt, ds)
        if eps > 1:
            tot_e = math.inf
        return (math.inf if self.noise_free else tot_e), tot_d

    def total(self) -> Tuple[float, float]:
        """Total under the ledger's own composition mode."""
        if self.mode == "advanced":
            return self.advanced_total()
        return self.basic_total()

    def within(self, budget: PrivacyBudget, rtol: float = 1e-12) -> bool:
        """Whether the reported total fits in ``budget``.

        ``rtol`` only absorbs float rounding of splits that compose to the
        budget exactly.
        """
        eps, dlt = self.total()
        return eps <= budget.epsilon * (1 + rtol) and dlt <= budget.delta * (1 + rtol)

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "delta_star": self.delta_star,
            "noise_free": self.noise_free,
            "failures": self.failures,
            "interactions": [
                {"epsilon": e, "delta": d, "label": lab}
                for (e, d), lab in zip(self.interactions, self.labels)
            ],
        }
        be, bd = self.basic_total()
        out["basic_total"] = {"epsilon": _jsonable(be), "delta": bd}
        if self.delta_star is not None:
            ae, ad = self.advanced_total()
            out["advanced_total"] = {"epsilon": _jsonable(ae), "delta": ad}
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(x: float):
    return "inf" if math.isinf(x) else x
