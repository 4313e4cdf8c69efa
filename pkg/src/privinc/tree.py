"""Continual release of private prefix sums by binary tree aggregation.

At step ``t`` the mechanism keeps one exact partial sum per set bit of
``t`` (plus the lower levels it is about to merge) and a noised copy of
each.  The released prefix sum is the sum of the noised copies whose bit is
set, so every input lands in at most ``ceil(log2 T) + 1`` noised nodes.
Memory is ``O(d log T)``; the inputs themselves are never stored.
"""
from __future__ import annotations

import io
import math
import struct
from typing import Optional

import numpy as np

from .dp import PrivacyBudget, SensitivityBound, noise_is_disabled, substream
from .errors import InvalidInput, StreamExhausted

_MAGIC = b"PTRE"
_VERSION = 1
_HEADER = struct.Struct("<4sHxxQQQIdQQ?xxxxxxx")


def tree_depth(T: int) -> int:
    """``ceil(log2 T)``, floored at 1 so a single-step stream is still noised."""
    return max(math.ceil(math.log2(T)), 1) if T > 1 else 1


def tree_sigma2(T: int, s: SensitivityBound, b: PrivacyBudget) -> float:
    """Per-coordinate node variance ``2 log2(T)^2 D^2 ln(2/delta) / eps^2``."""
    return 2.0 * tree_depth(T) ** 2 * s.delta2 ** 2 * math.log(2.0 / b.delta) / b.epsilon ** 2


class TreeState:
    """Single-writer state of one tree mechanism over ``T`` steps of ``d``-vectors.

    Node noise at level ``i`` created at step ``t`` is drawn from
    ``substream(seed, stream_id, t)``, so a checkpoint only needs ``t`` and the
    two partial-sum arrays to resume with an identical noise stream.

    ``track_participation`` keeps an ``O(T)`` counter of how many noised nodes
    each input has entered; it exists for verification only.
    """

    def __init__(self, T: int, d: int, budget: PrivacyBudget, sensitivity: SensitivityBound,
                 seed: int = 0, stream_id: int = 0, payload_bound: Optional[float] = None,
                 track_participation: bool = False):
        if T < 1 or d < 1:
            raise InvalidInput(f"need T >= 1 and d >= 1, got T={T}, d={d}")
        self.T = int(T)
        self.d = int(d)
        self.budget = budget
        self.sensitivity = sensitivity
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.payload_bound = payload_bound
        self.levels = (math.ceil(math.log2(T)) if T > 1 else 0) + 1
        self.noise_free = noise_is_disabled()
        self.sigma2 = 0.0 if self.noise_free else tree_sigma2(T, sensitivity, budget)
        self.a = np.zeros((self.levels, self.d))
        self.b = np.zeros((self.levels, self.d))
        self.t = 0
        self.participation = np.zeros(self.T, dtype=np.int64) if track_participation else None

    def _noise(self) -> np.ndarray:
        if self.sigma2 == 0.0:
            return np.zeros(self.d)
        rng = substream(self.seed, self.stream_id, self.t)
        return math.sqrt(self.sigma2) * rng.standard_normal(self.d)

    def step(self, v) -> np.ndarray:
        """Feed ``v_t`` and return the private estimate of ``v_1 + ... + v_t``."""
        if self.t >= self.T:
            raise StreamExhausted(f"tree mechanism already consumed all T={self.T} inputs")
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape[0] != self.d:
            raise InvalidInput(f"payload has length {v.shape[0]}, expected {self.d}")
        if self.payload_bound is not None and np.linalg.norm(v) > self.payload_bound * (1 + 1e-9):
            raise InvalidInput(f"payload norm {np.linalg.norm(v):.6g} exceeds declared bound "
                               f"{self.payload_bound}")
        self.t += 1
        t = self.t
        i = (t & -t).bit_length() - 1  # lowest set bit
        self.a[i] = self.a[:i].sum(axis=0) + v
        self.a[:i] = 0.0
        self.b[:i] = 0.0
        self.b[i] = self.a[i] + self._noise()
        if self.participation is not None:
            self.participation[t - (1 << i):t] += 1
        return self.release()

    def release(self) -> np.ndarray:
        """Current private prefix sum; pure post-processing of the noised nodes."""
        t = self.t
        mask = [(t >> j) & 1 for j in range(self.levels)]
        out = np.zeros(self.d)
        for j, bit in enumerate(mask):
            if bit:
                out += self.b[j]
        return out

    def active_nodes(self):
        """Indices ``j`` whose noised node currently contributes to the release."""
        return [j for j in range(self.levels) if (self.t >> j) & 1]

    # checkpointing

    def to_bytes(self) -> bytes:
        """Little-endian, versioned snapshot: header then ``a`` then ``b`` as float64."""
        buf = io.BytesIO()
        buf.write(_HEADER.pack(_MAGIC, _VERSION, self.T, self.d, self.t, self.levels,
                               self.sigma2, self.seed, self.stream_id, self.noise_free))
        buf.write(self.a.astype("<f8").tobytes())
        buf.write(self.b.astype("<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, raw: bytes, budget: PrivacyBudget,
                   sensitivity: SensitivityBound) -> "TreeState":
        magic, version, T, d, t, levels, sigma2, seed, stream_id, noise_free = \
            _HEADER.unpack_from(raw, 0)
        if magic != _MAGIC:
            raise InvalidInput("not a tree checkpoint")
        if version != _VERSION:
            raise InvalidInput(f"unsupported checkpoint version {version}")
        obj = cls.__new__(cls)
        obj.T, obj.d, obj.t, obj.levels = T, d, t, levels
        obj.budget, obj.sensitivity = budget, sensitivity
        obj.seed, obj.stream_id = seed, stream_id
        obj.sigma2, obj.noise_free = sigma2, noise_free
        obj.payload_bound = None
        obj.participation = None
        off = _HEADER.size
        n = levels * d * 8
        obj.a = np.frombuffer(raw, dtype="<f8", count=levels * d, offset=off).reshape(levels, d).copy()
        obj.b = np.frombuffer(raw, dtype="<f8", count=levels * d, offset=off + n).reshape(levels, d).copy()
        return obj


def tree_new(T: int, d: int, b: PrivacyBudget, s: SensitivityBound, seed: int = 0,
             stream_id: int = 0, **kw) -> TreeState:
    return TreeState(T, d, b, s, seed=seed, stream_id=stream_id, **kw)


def tree_step(state: TreeState, v) -> np.ndarray:
    return state.step(v)


def error_scale(T: int, delta: float, eps: float) -> float:
    """``log2(T)^{3/2} sqrt(ln(1/delta)) / eps``, the shape of the tree's error bound."""
    return tree_depth(T) ** 1.5 * math.sqrt(math.log(1.0 / delta)) / eps
