"""Differentiable statistics pooling: T x D frames -> length k*D vector.

A :class:`PoolingConfig` names an ordered set of statistics; ``forward``
concatenates their pooled vectors in that order and ``backward`` returns
the exact vector-Jacobian product with respect to every input frame, so
the layer can sit inside a hand-rolled training loop.

Gradient formulas, per dimension with mu the mean, sigma the population
std (clamped below at eps), z = (x - mu) / sigma, s the skewness and k
the kurtosis of the same frames:

* mean:  d/dx_i = 1/T
* std:   d/dx_i = (x_i - mu) / (T * sigma)
* skew:  d/dx_i = 3/(T*sigma) * (z_i^2 - 1 - s*z_i)
* kurt:  d/dx_i = 4/(T*sigma) * (z_i^3 - s - k*z_i)
* max:   gradient routes to the argmax frame (lowest index on ties)

Dimensions with sigma <= eps get zero skew/kurt gradient, matching the
zero sentinel of the forward pass.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import moments
from .moments import DEFAULT_EPS, FrameSequence


class Statistic(enum.Enum):
    """One pooled statistic. Config order decides output slice order."""

    MAX = "max"
    MEAN = "mean"
    STD = "std"
    SKEW = "skew"
    KURT = "kurt"

    @property
    def label(self) -> str:
        """Name used in system labels and report tables."""
        return "kurto" if self is Statistic.KURT else self.value

    @classmethod
    def from_name(cls, name: str) -> "Statistic":
        key = name.strip().lower()
        if key == "kurto":
            key = "kurt"
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(s.value for s in cls) + ", kurto"
            raise ValueError(f"unknown statistic {name!r} (expected one of: {valid})") from None


@dataclass(frozen=True)
class PoolingConfig:
    """Ordered, duplicate-free selection of statistics plus the eps guard."""

    stats: tuple
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        stats = tuple(self.stats)
        object.__setattr__(self, "stats", stats)
        if not stats:
            raise ValueError("pooling config needs at least one statistic")
        if len(stats) > len(Statistic):
            raise ValueError("pooling config lists more statistics than exist")
        for s in stats:
            if not isinstance(s, Statistic):
                raise TypeError(f"expected Statistic, got {type(s).__name__}")
        if len(set(stats)) != len(stats):
            raise ValueError("duplicate statistics in pooling config")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @classmethod
    def from_name(cls, name: str, eps: float = DEFAULT_EPS) -> "PoolingConfig":
        """Parse a hyphenated system name such as ``mean-std-skew``."""
        parts = [p for p in name.split("-") if p]
        if not parts:
            raise ValueError(f"empty pooling name {name!r}")
        return cls(tuple(Statistic.from_name(p) for p in parts), eps=eps)

    @property
    def name(self) -> str:
        return "-".join(s.label for s in self.stats)


def output_width(cfg: PoolingConfig, dim: int) -> int:
    """Width of the pooled vector for D-dimensional frames: |stats| * D."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return len(cfg.stats) * dim


_POOL_FN = {
    Statistic.MAX: lambda x, eps: moments.max_pool(x),
    Statistic.MEAN: lambda x, eps: moments.mean_pool(x),
    Statistic.STD: lambda x, eps: moments.std_pool(x),
    Statistic.SKEW: moments.skew_pool,
    Statistic.KURT: moments.kurt_pool,
}


def forward(cfg: PoolingConfig, x: FrameSequence) -> np.ndarray:
    """Concatenated pooled statistics; stat j fills slice [j*D, (j+1)*D)."""
    return np.concatenate([_POOL_FN[s](x, cfg.eps) for s in cfg.stats])


def backward(cfg: PoolingConfig, x: FrameSequence, upstream) -> np.ndarray:
    """Vector-Jacobian product: upstream (k*D,) -> gradient (T, D)."""
    data = x.data
    t, d = data.shape
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != (output_width(cfg, d),):
        raise ValueError(
            f"upstream shape {up.shape} does not match output width {output_width(cfg, d)}"
        )

    mu = np.mean(data, axis=0)
    delta = data - mu
    sigma = np.sqrt(np.mean(delta * delta, axis=0))
    guarded = np.maximum(sigma, cfg.eps)
    active = sigma > cfg.eps
    z = delta / guarded

    need_shape = any(s in (Statistic.SKEW, Statistic.KURT) for s in cfg.stats)
    if need_shape:
        skew = np.where(active, np.mean(delta ** 3, axis=0) / guarded ** 3, 0.0)
    if Statistic.KURT in cfg.stats:
        kurt = np.where(active, np.mean(delta ** 4, axis=0) / guarded ** 4, 0.0)

    grad = np.zeros((t, d))
    for j, stat in enumerate(cfg.stats):
        u = up[j * d : (j + 1) * d]
        if stat is Statistic.MEAN:
            grad += u / t
        elif stat is Statistic.STD:
            grad += u * delta / (t * guarded)
        elif stat is Statistic.SKEW:
            g = (3.0 / (t * guarded)) * (z * z - 1.0 - skew * z)
            grad += np.where(active, u * g, 0.0)
        elif stat is Statistic.KURT:
            g = (4.0 / (t * guarded)) * (z ** 3 - skew - kurt * z)
            grad += np.where(active, u * g, 0.0)
        elif stat is Statistic.MAX:
            idx = np.argmax(data, axis=0)  # first (lowest) index on ties
            np.add.at(grad, (idx, np.arange(d)), u)
    return grad
