"""Per-dimension max and standardized central moments over frame sequences.

Batch operators reduce a full T x D frame matrix in one shot; the streaming
``MomentAccumulator`` maintains equivalent state one frame at a time and
supports pairwise merging, so frames can be sharded across workers and the
shards combined afterwards.

Conventions, used everywhere in this package:

* population moments (divide by n, no Bessel correction):
  ``std = sqrt(mean((x - mu)^2))``
* ``skew = m3 / std^3`` and ``kurt = m4 / std^4`` with ``m3``, ``m4`` the
  third and fourth central moments (a normal distribution has kurt 3)
* dimensions whose std is at or below ``eps`` are degenerate: their skew
  and kurt are reported as 0.0 instead of dividing by a vanishing sigma

All arithmetic is float64 internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_EPS = 1e-6


class FrameSequence:
    """Immutable T x D matrix of frame vectors (T frames, D dimensions).

    Construction rejects empty axes and any non-finite entry, so every
    downstream statistic is defined and finite.
    """

    __slots__ = ("data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"frame sequence must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"frame sequence needs T >= 1 and D >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("frame sequence contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("FrameSequence is immutable")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    def __repr__(self) -> str:
        return f"FrameSequence(T={self.T}, D={self.D})"


@dataclass(frozen=True)
class PooledStats:
    """Finalized per-dimension statistics of one frame sequence."""

    max: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    skew: np.ndarray
    kurt: np.ndarray


def _as_array(x) -> np.ndarray:
    if isinstance(x, FrameSequence):
        return x.data
    raise TypeError(f"expected FrameSequence, got {type(x).__name__}")


def _central(data: np.ndarray):
    """Mean, deviations and population sigma shared by the moment ops."""
    mu = np.mean(data, axis=0)
    delta = data - mu
    sigma = np.sqrt(np.mean(delta * delta, axis=0))
    return mu, delta, sigma


def max_pool(x: FrameSequence) -> np.ndarray:
    """Per-dimension maximum over frames."""
    return np.max(_as_array(x), axis=0)


def mean_pool(x: FrameSequence) -> np.ndarray:
    """Per-dimension arithmetic mean over frames."""
    return np.mean(_as_array(x), axis=0)


def std_pool(x: FrameSequence) -> np.ndarray:
    """Per-dimension population standard deviation over frames."""
    _, _, sigma = _central(_as_array(x))
    return sigma


def skew_pool(x: FrameSequence, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-dimension skewness m3 / sigma^3; degenerate dimensions give 0."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, delta, sigma = _central(_as_array(x))
    guarded = np.maximum(sigma, eps)
    m3 = np.mean(delta ** 3, axis=0)
    return np.where(sigma > eps, m3 / guarded ** 3, 0.0)


def kurt_pool(x: FrameSequence, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-dimension kurtosis m4 / sigma^4; degenerate dimensions give 0."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    _, delta, sigma = _central(_as_array(x))
    guarded = np.maximum(sigma, eps)
    m4 = np.mean(delta ** 4, axis=0)
    return np.where(sigma > eps, m4 / guarded ** 4, 0.0)


def pooled_stats(x: FrameSequence, eps: float = DEFAULT_EPS) -> PooledStats:
    """All five statistics at once (identical values to the single ops)."""
    return PooledStats(
        max=max_pool(x),
        mean=mean_pool(x),
        std=std_pool(x),
        skew=skew_pool(x, eps),
        kurt=kurt_pool(x, eps),
    )


class MomentAccumulator:
    """One-pass streaming state for max and the first four central moments.

    Holds, per dimension, the running mean and the central-moment sums
    M2 = sum((x - mean)^2), M3, M4, updated with the shifted one-pass
    recurrences rather than raw power sums (raw fourth-power sums lose
    roughly half the mantissa for offset data). ``merge`` combines two
    accumulators with the pairwise formulas, so sharded accumulation
    agrees with sequential accumulation.

    Single-writer: share by sharding frames across accumulators and
    merging, not by concurrent ``add``.
    """

    __slots__ = ("count", "_mean", "_m2", "_m3", "_m4", "_max")

    def __init__(self, dim: int) -> None:
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.count = 0
        self._mean = np.zeros(dim)
        self._m2 = np.zeros(dim)
        self._m3 = np.zeros(dim)
        self._m4 = np.zeros(dim)
        self._max = np.full(dim, -np.inf)

    @property
    def dim(self) -> int:
        return self._mean.shape[0]

    def copy(self) -> "MomentAccumulator":
        out = MomentAccumulator(self.dim)
        out.count = self.count
        out._mean = self._mean.copy()
        out._m2 = self._m2.copy()
        out._m3 = self._m3.copy()
        out._m4 = self._m4.copy()
        out._max = self._max.copy()
        return out

    def add(self, frame) -> "MomentAccumulator":
        """Fold one frame into the running state. Returns self."""
        vec = np.asarray(frame, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"frame shape {vec.shape} does not match dim {self.dim}")
        if not np.all(np.isfinite(vec)):
            raise ValueError("frame contains NaN or Inf")
        n1 = self.count
        n = n1 + 1
        self.count = n
        delta = vec - self._mean
        delta_n = delta / n
        delta_n2 = delta_n * delta_n
        term1 = delta * delta_n * n1
        self._mean = self._mean + delta_n
        self._m4 = (
            self._m4
            + term1 * delta_n2 * (n * n - 3 * n + 3)
            + 6.0 * delta_n2 * self._m2
            - 4.0 * delta_n * self._m3
        )
        self._m3 = self._m3 + term1 * delta_n * (n - 2) - 3.0 * delta_n * self._m2
        self._m2 = self._m2 + term1
        self._max = np.maximum(self._max, vec)
        return self

    def extend(self, x: FrameSequence) -> "MomentAccumulator":
        """Fold every frame of a sequence, in order. Returns self."""
        for row in _as_array(x):
            self.add(row)
        return self

    @classmethod
    def from_frames(cls, x: FrameSequence) -> "MomentAccumulator":
        return cls(x.D).extend(x)


def accumulate(acc: MomentAccumulator, frame) -> MomentAccumulator:
    """Fold one frame into ``acc`` (mutating) and return it."""
    return acc.add(frame)


def merge(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    """Combine two accumulators into a new one.

    ``finalize(merge(a, b))`` agrees with accumulating the concatenated
    inputs (to ~1e-10 relative); the empty accumulator is the identity.
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.count == 0:
        return b.copy()
    if b.count == 0:
        return a.copy()
    out = MomentAccumulator(a.dim)
    na = float(a.count)
    nb = float(b.count)
    n = na + nb
    delta = b._mean - a._mean
    delta2 = delta * delta
    out.count = a.count + b.count
    out._mean = a._mean + delta * (nb / n)
    out._m2 = a._m2 + b._m2 + delta2 * (na * nb / n)
    out._m3 = (
        a._m3
        + b._m3
        + delta * delta2 * (na * nb * (na - nb) / (n * n))
        + 3.0 * delta * (na * b._m2 - nb * a._m2) / n
    )
    out._m4 = (
        a._m4
        + b._m4
        + delta2 * delta2 * (na * nb * (na * na - na * nb + nb * nb) / (n * n * n))
        + 6.0 * delta2 * (na * na * b._m2 + nb * nb * a._m2) / (n * n)
        + 4.0 * delta * (na * b._m3 - nb * a._m3) / n
    )
    out._max = np.maximum(a._max, b._max)
    return out


def finalize(acc: MomentAccumulator, eps: float = DEFAULT_EPS) -> PooledStats:
    """Convert streaming state into the five statistics.

    Raises on an empty accumulator (count 0 leaves them undefined).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if acc.count == 0:
        raise ValueError("cannot finalize an empty accumulator")
    n = float(acc.count)
    m2 = np.maximum(acc._m2 / n, 0.0)
    sigma = np.sqrt(m2)
    guarded = np.maximum(sigma, eps)
    active = sigma > eps
    skew = np.where(active, (acc._m3 / n) / guarded ** 3, 0.0)
    kurt = np.where(active, (acc._m4 / n) / guarded ** 4, 0.0)
    return PooledStats(
        max=acc._max.copy(),
        mean=acc._mean.copy(),
        std=sigma,
        skew=skew,
        kurt=kurt,
    )
