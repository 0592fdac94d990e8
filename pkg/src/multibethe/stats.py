"""Small statistics helpers shared by the Monte Carlo estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_BATCHES = 32


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    batches: int = 0

    def __post_init__(self):
        if not self.se >= 0:
            raise ValueError(f"standard error must be non-negative, got {self.se!r}")

    def within(self, target: float, floor: float = 0.0, nse: float = 3.0) -> bool:
        return abs(self.mean - target) <= max(nse * self.se, floor)

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "batches": self.batches}


def batch_means(samples, batches: int = DEFAULT_BATCHES) -> Estimate:
    """Mean of a correlated series with a batch-means standard error.

    Trailing samples that do not fill a batch are dropped from the error
    estimate but kept in the mean.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if len(x) == 0:
        raise ValueError("no samples")
    size = len(x) // batches
    if size == 0:
        # fewer samples than batches: treat each sample as its own batch
        b = len(x)
        se = float(np.std(x, ddof=1) / math.sqrt(b)) if b > 1 else 0.0
        return Estimate(float(x.mean()), se, b)
    bm = x[: size * batches].reshape(batches, size).mean(axis=1)
    return Estimate(float(x.mean()), float(bm.std(ddof=1) / math.sqrt(batches)), batches)


def inverse_variance(estimates) -> Estimate:
    """Combine independent estimates with weights 1/se^2.

    Falls back to the plain average when any error bar is zero (e.g. every
    replica saw a constant series).
    """
    est = list(estimates)
    if not est:
        raise ValueError("nothing to combine")
    if len(est) == 1:
        return est[0]
    se = np.array([e.se for e in est])
    mu = np.array([e.mean for e in est])
    nb = sum(e.batches for e in est)
    if np.any(se == 0):
        return Estimate(float(mu.mean()), float(se.max() / math.sqrt(len(est))), nb)
    w = 1.0 / se**2
    return Estimate(float((w * mu).sum() / w.sum()), float(1.0 / math.sqrt(w.sum())), nb)


def binomial(successes: int, trials: int) -> Estimate:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = successes / trials
    return Estimate(p, math.sqrt(p * (1 - p) / trials), trials)
