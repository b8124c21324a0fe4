"""Seeded, path-derived random streams and the samplers built on them.

Every random draw in the package goes through a :class:`RandomStream`.  A
stream is identified by ``(seed, path)``; its generator is a Philox
counter-based bit generator keyed by a hash of that pair, so deriving a child
stream is a pure function and never advances the parent.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

Label = Union[str, int]

_MASK64 = (1 << 64) - 1


class ParameterError(ValueError):
    """Raised when a sampler or constructor receives invalid parameters."""


def _stream_key(seed: int, path: tuple[Label, ...]) -> int:
    parts = [str(seed)]
    for label in path:
        # type tag keeps 1 and "1" apart
        parts.append(("i:" if isinstance(label, int) else "s:") + str(label))
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


@dataclass(eq=False)
class RandomStream:
    """Deterministic random source identified by a seed and a derivation path.

    Two streams with equal ``(seed, path)`` yield identical draw sequences.
    A stream is not safe to share between threads; derive one per consumer.
    """

    seed: int
    path: tuple[Label, ...] = ()
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= int(self.seed) <= _MASK64:
            raise ParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        self.seed = int(self.seed)
        self.path = tuple(self.path)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            key = _stream_key(self.seed, self.path)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def derive(self, label: Label) -> "RandomStream":
        return derive_stream(self, label)

    def uniform(self, size=None):
        """Uniform draws on the half-open interval (0, 1]."""
        return 1.0 - self.generator.random(size)

    def integers(self, high: int, size=None):
        return self.generator.integers(0, high, size=size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RandomStream):
            return NotImplemented
        return self.seed == other.seed and self.path == other.path

    def __hash__(self) -> int:
        return hash((self.seed, self.path))


def derive_stream(parent: RandomStream, label: Label) -> RandomStream:
    """Child stream with ``path = parent.path + (label,)``; the parent is untouched."""
    if not isinstance(label, (str, int)):
        raise ParameterError(f"stream labels must be str or int, got {type(label).__name__}")
    return RandomStream(parent.seed, parent.path + (label,))


@dataclass(frozen=True)
class GeomParam:
    """Ratio ``gamma`` of a geometric law ``P(N = k) = gamma**k * (1 - gamma)``."""

    gamma: float

    def __post_init__(self) -> None:
        g = self.gamma
        if not (isinstance(g, (int, float, np.floating)) and math.isfinite(g)) or not 0.0 <= g < 1.0:
            raise ParameterError(f"geometric ratio must lie in [0, 1), got {g!r}")

    @classmethod
    def from_batch(cls, B: int, b: int) -> "GeomParam":
        return cls(B / (B + b))

    @property
    def mean(self) -> float:
        return self.gamma / (1.0 - self.gamma)


def sample_geometric(stream: RandomStream, p: GeomParam | float, size=None):
    """Inverse-transform draw of ``N ~ Geom(gamma)`` supported on ``{0, 1, 2, ...}``.

    ``N = floor(log U / log gamma)`` with ``U`` uniform on (0, 1], which gives
    ``P(N >= k) = gamma**k`` exactly.
    """
    if not isinstance(p, GeomParam):
        p = GeomParam(p)
    if p.gamma == 0.0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    u = stream.uniform(size)
    n = np.floor(np.log(u) / math.log(p.gamma))
    if size is None:
        return int(n)
    return n.astype(np.int64)


def sample_subset(stream: RandomStream, n: int, m: int) -> np.ndarray:
    """Uniform ``m``-subset of ``range(n)`` without replacement, sorted ascending."""
    if not 1 <= m <= n:
        raise ParameterError(f"subset size must satisfy 1 <= m <= n, got m={m}, n={n}")
    gen = stream.generator
    if m == 1:
        return gen.integers(0, n, size=1)
    if 2 * m > n:
        # dense case: a shuffle costs O(n) = O(m)
        return np.sort(gen.permutation(n)[:m])
    # sparse case: keep the distinct values of repeated uniform draws; the
    # result is permutation-invariant in law, hence uniform over m-subsets
    chosen = np.unique(gen.integers(0, n, size=m))
    while chosen.size < m:
        chosen = np.union1d(chosen, gen.integers(0, n, size=m - chosen.size))
    return chosen


def sample_weighted_index(stream: RandomStream, weights: Sequence[float]) -> int:
    """Draw ``j`` with probability ``weights[j] / sum(weights)``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ParameterError("weights must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ParameterError("weights must be finite and non-negative")
    cum = np.cumsum(w)
    total = cum[-1]
    if not total > 0:
        raise ParameterError("at least one weight must be strictly positive")
    if w.size == 1:
        return 0
    u = stream.generator.random() * total
    j = int(np.searchsorted(cum, u, side="right"))
    if j >= w.size:  # rounding at the top end
        j = int(np.flatnonzero(w > 0)[-1])
    return j
