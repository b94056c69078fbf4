"""Per-token contrastive guidance: score one response under a positive and a negative prompt."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from gcpo_lab.numerics import InvalidInputError, kl_divergence
from gcpo_lab.policy import PolicyParams, PromptEncoding, Rollout, forward_distributions, token_log_probs

METRICS = ("kl", "info_gain", "abs_diff")


@dataclass
class GuidanceProfile:
    eta_raw: np.ndarray
    metric: str = "kl"
    eta_norm: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.eta_raw)


def divergence_from_dists(pos_dists: np.ndarray, neg_dists: np.ndarray, response, metric: str) -> np.ndarray:
    if metric not in METRICS:
        raise InvalidInputError(f"unknown divergence metric {metric!r}; expected one of {METRICS}")
    if metric == "kl":
        return np.atleast_1d(kl_divergence(pos_dists, neg_dists))
    gain = token_log_probs(pos_dists, response) - token_log_probs(neg_dists, response)
    return gain if metric == "info_gain" else np.abs(gain)


def score_guidance(params: PolicyParams, positive: PromptEncoding, negative: PromptEncoding,
                   rollout: Rollout, metric: str = "kl") -> GuidanceProfile:
    """Teacher-force the same response under both prompts and compare position by position.

    ``kl`` is KL(positive || negative) over the whole vocabulary; ``info_gain`` is the
    signed log-ratio of the sampled token and ``abs_diff`` its magnitude.
    """
    if positive.task_id != negative.task_id:
        raise InvalidInputError(
            f"prompt pair spans different tasks ({positive.task_id!r} vs {negative.task_id!r})"
        )
    if len(rollout.response) == 0:
        raise InvalidInputError("cannot score an empty response")
    pos = forward_distributions(params, positive, rollout.response)
    neg = forward_distributions(params, negative, rollout.response)
    return GuidanceProfile(divergence_from_dists(pos, neg, rollout.response, metric), metric)


def joint_from_conditionals(p_correct: float, given_correct, given_incorrect) -> np.ndarray:
    """Stack ``P(correct, y | x)`` (row 0) and ``P(incorrect, y | x)`` (row 1)."""
    return np.stack([p_correct * np.asarray(given_correct, dtype=np.float64),
                     (1.0 - p_correct) * np.asarray(given_incorrect, dtype=np.float64)])


def bayes_odds_identity_check(joint) -> float:
    """Largest gap between the two sides of the implicit-classifier odds identity.

    ``joint[c, y]`` is ``P(c, y | x)`` with ``c = 0`` correct and ``c = 1`` incorrect.
    Left side: ``P(y | x, correct) / P(y | x, incorrect)``. Right side: posterior odds
    of correctness given ``y`` times the prior odds of incorrectness.
    """
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2 or joint.shape[0] != 2 or joint.shape[1] < 1:
        raise InvalidInputError("joint must have shape (2, num_responses)")
    if np.any(joint <= 0) or not np.all(np.isfinite(joint)):
        raise InvalidInputError("joint must be strictly positive")
    if abs(joint.sum() - 1.0) > 1e-9:
        raise InvalidInputError("joint must sum to 1")
    prior = joint.sum(axis=1)
    likelihood = joint / prior[:, None]
    lhs = likelihood[0] / likelihood[1]
    posterior = joint / joint.sum(axis=0)[None, :]
    rhs = (posterior[0] / posterior[1]) * (prior[1] / prior[0])
    return float(np.max(np.abs(lhs - rhs)))


# --- heatmap export ---

def write_profile_csv(path, profiles: Sequence[GuidanceProfile], rollouts: Sequence[Rollout]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["rollout", "position", "token", "eta_raw", "eta_norm"])
        for i, (prof, r) in enumerate(zip(profiles, rollouts)):
            norm = prof.eta_norm if prof.eta_norm is not None else [float("nan")] * len(prof)
            for t, tok in enumerate(r.response):
                w.writerow([i, t, tok, repr(float(prof.eta_raw[t])), repr(float(norm[t]))])


def heatmap_levels(eta_norm) -> np.ndarray:
    w = np.asarray(eta_norm, dtype=np.float64)
    if np.any(w < 0) or np.any(w > 1):
        raise InvalidInputError("heatmap values must lie in [0, 1]")
    return np.rint(w * 255).astype(np.uint8)


def write_pgm(path, eta_norm, height: int, width: int) -> None:
    """Binary 8-bit PGM with ``eta_norm`` linearly mapped onto 0..255."""
    levels = heatmap_levels(eta_norm)
    if levels.size != height * width:
        raise InvalidInputError(f"need {height * width} values for a {height}x{width} heatmap")
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + levels.reshape(height, width).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise InvalidInputError("not a binary PGM file")
    width, height = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)
