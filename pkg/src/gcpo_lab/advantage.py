"""Group-relative advantages, per-token GCPO scaling, and zero-variance group filtering."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gcpo_lab.numerics import InvalidInputError
from gcpo_lab.policy import Rollout

ESTIMATORS = ("grpo", "dr_grpo")
STD_EPS = 1e-6


@dataclass
class Group:
    prompt_id: int | str
    rollouts: list[Rollout]
    sample_advantages: np.ndarray | None = None
    token_advantages: list[np.ndarray] = field(default_factory=list)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.rollouts], dtype=np.float64)


def group_advantages(rewards, estimator: str = "grpo", eps: float = STD_EPS) -> np.ndarray:
    """``(r - mean) / (std + eps)`` with population std; ``dr_grpo`` skips the division."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or len(r) < 2:
        raise InvalidInputError("group advantages need at least two rewards")
    if estimator not in ESTIMATORS:
        raise InvalidInputError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    centered = r - r.mean()
    if estimator == "dr_grpo":
        return centered
    return centered / (r.std() + eps)


def gcpo_token_advantages(sample_adv: float, eta_norm) -> np.ndarray:
    w = np.asarray(eta_norm, dtype=np.float64)
    if np.any(w < 0) or np.any(w > 1):
        raise InvalidInputError("normalized weights must lie in [0, 1]")
    return w * sample_adv


def dapo_filter(groups: list[Group]) -> list[Group]:
    """Keep only groups whose rewards are not all identical."""
    kept = []
    for g in groups:
        r = g.rewards
        if r.max() != r.min():
            kept.append(g)
    return kept
