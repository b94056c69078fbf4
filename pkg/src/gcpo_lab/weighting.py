"""Map raw per-token divergences of one response to weights in [0, 1]."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from gcpo_lab.numerics import InvalidInputError

KINDS = ("histogram", "softmax", "minmax", "hard_topk", "uniform")


@dataclass(frozen=True)
class NormalizationStrategy:
    kind: str = "histogram"
    temperature: float = 1.0
    fraction: float = 0.4

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown normalization {self.kind!r}; expected one of {KINDS}")
        if not self.temperature > 0:
            raise InvalidInputError(f"softmax temperature must be > 0, got {self.temperature}")
        if not 0.0 < self.fraction <= 1.0:
            raise InvalidInputError(f"topk fraction must lie in (0, 1], got {self.fraction}")


def midranks(values: np.ndarray) -> np.ndarray:
    """0-based ranks where each block of tied values shares the mean rank of the block."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    start = 0
    n = len(values)
    while start < n:
        stop = start + 1
        while stop < n and sorted_vals[stop] == sorted_vals[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop - 1) / 2
        start = stop
    return ranks


def histogram_equalize(eta) -> np.ndarray:
    """Empirical-CDF weights: min -> 0, max -> 1, median -> 0.5; ties get midranks."""
    eta = np.asarray(eta, dtype=np.float64)
    T = len(eta)
    if T == 1:
        return np.array([0.5])
    return midranks(eta) / (T - 1)


def _softmax_weights(eta, temperature):
    z = eta / temperature
    e = np.exp(z - z.max())
    return np.clip(len(eta) * e / e.sum(), 0.0, 1.0)


def _minmax(eta):
    lo, hi = eta.min(), eta.max()
    if hi == lo:
        return np.full(len(eta), 0.5)
    return (eta - lo) / (hi - lo)


def _hard_topk(eta, fraction):
    T = len(eta)
    # Guard against 0.7 * 10 = 7.000000000000001 style round-up.
    k = min(T, math.ceil(fraction * T - 1e-9))
    # Stable descending sort keeps the earliest position first among ties.
    order = np.argsort(-eta, kind="stable")
    out = np.zeros(T)
    out[order[:k]] = 1.0
    return out


def normalize(eta_raw, strategy: NormalizationStrategy | str = "histogram") -> np.ndarray:
    if isinstance(strategy, str):
        strategy = NormalizationStrategy(strategy)
    eta = np.asarray(eta_raw, dtype=np.float64).reshape(-1)
    if eta.size == 0:
        raise InvalidInputError("cannot normalize an empty vector")
    if not np.all(np.isfinite(eta)):
        raise InvalidInputError("eta contains non-finite entries")
    if strategy.kind == "histogram":
        return histogram_equalize(eta)
    if strategy.kind == "softmax":
        return _softmax_weights(eta, strategy.temperature)
    if strategy.kind == "minmax":
        return _minmax(eta)
    if strategy.kind == "hard_topk":
        return _hard_topk(eta, strategy.fraction)
    return np.ones(len(eta))
