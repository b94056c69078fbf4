"""Clipped group-relative surrogate objective with an optional reference-KL penalty.

The objective is maximized. With per-token ratio ``w = exp(logp - logp_old)``::

    J = mean_i mean_t min(w * A, clip(w, 1 - clip_low, 1 + clip_high) * A)
        - kl_beta * mean_i mean_t KL(pi_theta || pi_ref)

GRPO and GCPO share this function; they differ only in the token advantages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from gcpo_lab.numerics import InvalidInputError, kl_divergence

ALGORITHMS = ("grpo", "gcpo", "dapo", "vppo_like")


@dataclass
class ObjectiveConfig:
    clip_low: float = 0.2
    clip_high: float = 0.2
    kl_beta: float = 0.0

    def __post_init__(self):
        for name in ("clip_low", "clip_high"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise InvalidInputError(f"{name} must lie in (0, 1), got {value}")
        if self.kl_beta < 0:
            raise InvalidInputError(f"kl_beta must be >= 0, got {self.kl_beta}")


@dataclass
class SurrogateInput:
    """Per-rollout arrays entering the surrogate.

    ``log_dists``/``ref_log_dists`` are (T, V) full log-distributions and are
    only needed for the KL penalty.
    """

    log_probs: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    log_dists: np.ndarray | None = None
    ref_log_dists: np.ndarray | None = None


def clipped_token_terms(log_probs, old_log_probs, advantages, clip_low, clip_high):
    """Per-token surrogate values, their derivative w.r.t. ``log_probs``, and a clip mask.

    The derivative follows the branch selected by ``min``; outside the clip band
    the clipped branch is constant, so tokens where it wins get zero gradient.
    """
    ratio = np.exp(np.asarray(log_probs) - np.asarray(old_log_probs))
    adv = np.asarray(advantages, dtype=np.float64)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_low, 1.0 + clip_high) * adv
    values = np.minimum(unclipped, clipped)
    in_band = (ratio >= 1.0 - clip_low) & (ratio <= 1.0 + clip_high)
    active = (unclipped <= clipped) | in_band
    dlogp = np.where(active, unclipped, 0.0)
    return values, dlogp, ~active


def _check(item: SurrogateInput) -> int:
    T = len(item.log_probs)
    if T == 0:
        raise InvalidInputError("empty rollout in surrogate batch")
    if len(item.old_log_probs) != T or len(item.advantages) != T:
        raise InvalidInputError(
            f"length mismatch: log_probs {T}, old_log_probs {len(item.old_log_probs)}, "
            f"advantages {len(item.advantages)}"
        )
    return T


def surrogate_value(inputs: Sequence[SurrogateInput], config: ObjectiveConfig) -> float:
    if not inputs:
        raise InvalidInputError("surrogate over an empty batch")
    use_kl = config.kl_beta > 0
    total = 0.0
    for item in inputs:
        _check(item)
        values, _, _ = clipped_token_terms(
            item.log_probs, item.old_log_probs, item.advantages, config.clip_low, config.clip_high
        )
        term = float(np.mean(values))
        if use_kl:
            if item.ref_log_dists is None or item.log_dists is None:
                raise InvalidInputError("kl_beta > 0 needs current and reference distributions")
            term -= config.kl_beta * float(np.mean(kl_divergence(item.log_dists, item.ref_log_dists)))
        total += term
    return total / len(inputs)
