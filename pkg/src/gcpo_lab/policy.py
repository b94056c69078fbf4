"""A small autoregressive categorical policy with hand-written backprop.

Architecture: the summed embeddings of the prompt tokens are concatenated with
the embeddings of the last ``context`` response tokens (a reserved padding row
stands in before the start of the response), fed through one tanh hidden layer
and a linear read-out to ``vocab_size`` logits. Response token 0 is EOS.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from gcpo_lab.numerics import InvalidInputError, kl_divergence, log_softmax
from gcpo_lab.objective import ObjectiveConfig, SurrogateInput, clipped_token_terms, surrogate_value

EOS = 0
PROMPT_KINDS = ("positive", "negative")


@dataclass(frozen=True)
class PolicyShape:
    vocab_size: int
    prompt_vocab_size: int
    context: int = 4
    embed_dim: int = 8
    hidden: int = 32

    def __post_init__(self):
        if self.vocab_size < 2:
            raise InvalidInputError("vocab_size must be >= 2")
        if self.prompt_vocab_size < 1 or self.context < 1 or self.embed_dim < 1 or self.hidden < 1:
            raise InvalidInputError(f"invalid policy shape {self}")

    @property
    def input_dim(self) -> int:
        return self.embed_dim * (self.context + 1)

    def layout(self) -> dict[str, tuple[int, ...]]:
        V, d, H = self.vocab_size, self.embed_dim, self.hidden
        return {
            "response_embed": (V + 1, d),  # row V is the pre-sequence pad
            "prompt_embed": (self.prompt_vocab_size, d),
            "w1": (H, self.input_dim),
            "b1": (H,),
            "w2": (V, H),
            "b2": (V,),
        }

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.layout().values())

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "prompt_vocab_size": self.prompt_vocab_size,
            "context": self.context,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
        }


def _views(shape: PolicyShape, flat: np.ndarray) -> dict[str, np.ndarray]:
    out, start = {}, 0
    for name, dims in shape.layout().items():
        size = int(np.prod(dims))
        out[name] = flat[start:start + size].reshape(dims)
        start += size
    return out


@dataclass
class PolicyParams:
    shape: PolicyShape
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.shape != (self.shape.num_params,):
            raise InvalidInputError(
                f"theta has shape {self.theta.shape}, expected ({self.shape.num_params},)"
            )
        if not np.all(np.isfinite(self.theta)):
            raise InvalidInputError("theta contains non-finite entries")

    def views(self) -> dict[str, np.ndarray]:
        return _views(self.shape, self.theta)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.shape, self.theta.copy())

    def with_theta(self, theta) -> "PolicyParams":
        return PolicyParams(self.shape, theta)


def zero_params(shape: PolicyShape) -> PolicyParams:
    return PolicyParams(shape, np.zeros(shape.num_params))


def init_params(shape: PolicyShape, rng: np.random.Generator, embed_scale: float = 0.5,
                out_scale: float = 0.1) -> PolicyParams:
    theta = np.zeros(shape.num_params)
    v = _views(shape, theta)
    v["response_embed"][:] = rng.normal(0.0, embed_scale, v["response_embed"].shape)
    v["prompt_embed"][:] = rng.normal(0.0, embed_scale, v["prompt_embed"].shape)
    v["w1"][:] = rng.normal(0.0, 1.0 / np.sqrt(shape.input_dim), v["w1"].shape)
    v["w2"][:] = rng.normal(0.0, out_scale, v["w2"].shape)
    return PolicyParams(shape, theta)


@dataclass(frozen=True)
class PromptEncoding:
    """Prompt tokens plus which side of the contrast they encode.

    Only negative prompts may be empty (the unconditional case).
    """

    tokens: tuple[int, ...]
    kind: str = "positive"
    task_id: int | str = 0

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.kind not in PROMPT_KINDS:
            raise InvalidInputError(f"prompt kind must be one of {PROMPT_KINDS}, got {self.kind!r}")
        if self.kind == "positive" and not self.tokens:
            raise InvalidInputError("positive prompts must be non-empty")


@dataclass
class Rollout:
    prompt_id: int | str
    response: tuple[int, ...]
    behavior_log_probs: np.ndarray
    reward: float = 0.0

    def __post_init__(self):
        self.response = tuple(int(t) for t in self.response)
        self.behavior_log_probs = np.asarray(self.behavior_log_probs, dtype=np.float64)
        if not self.response:
            raise InvalidInputError("rollout response must be non-empty")
        if self.behavior_log_probs.shape != (len(self.response),):
            raise InvalidInputError("behavior_log_probs length must match the response")
        if np.any(self.behavior_log_probs > 0):
            raise InvalidInputError("behavior_log_probs must be <= 0")

    def __len__(self) -> int:
        return len(self.response)

    def to_json(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "response": list(self.response),
            "behavior_log_probs": [float(x) for x in self.behavior_log_probs],
            "reward": float(self.reward),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Rollout":
        return cls(obj["prompt_id"], tuple(obj["response"]), np.array(obj["behavior_log_probs"]),
                   float(obj["reward"]))


def dump_rollouts(rollouts: Iterable[Rollout], path, extra: Sequence[dict] | None = None) -> None:
    """Write one JSON object per line; ``extra`` dicts (e.g. advantages) are merged per row."""
    rollouts = list(rollouts)
    with open(path, "w") as f:
        for i, r in enumerate(rollouts):
            row = r.to_json()
            if extra is not None:
                row.update(extra[i])
            f.write(json.dumps(row) + "\n")


def load_rollouts(path) -> list[Rollout]:
    lines = Path(path).read_text().splitlines()
    return [Rollout.from_json(json.loads(line)) for line in lines if line.strip()]


# --- forward pass ---

def _check_prompt(shape: PolicyShape, prompt: PromptEncoding) -> None:
    for tok in prompt.tokens:
        if not 0 <= tok < shape.prompt_vocab_size:
            raise InvalidInputError(f"prompt token {tok} outside prompt vocabulary")


def _check_response(shape: PolicyShape, response: Sequence[int]) -> np.ndarray:
    arr = np.asarray(response, dtype=np.int64).reshape(-1)
    if np.any(arr < 0) or np.any(arr >= shape.vocab_size):
        raise InvalidInputError("response token outside vocabulary")
    return arr


def _context_tokens(shape: PolicyShape, response: np.ndarray, T: int) -> np.ndarray:
    """(T, context) matrix: row t holds y_{t-1}, ..., y_{t-k}, padded before the start."""
    k, pad = shape.context, shape.vocab_size
    ctx = np.full((T, k), pad, dtype=np.int64)
    for j in range(1, k + 1):
        if T - j > 0:
            ctx[j:, j - 1] = response[: T - j]
    return ctx


class _Cache(NamedTuple):
    ctx: np.ndarray
    x: np.ndarray
    h: np.ndarray
    logits: np.ndarray


def _forward(views: dict, shape: PolicyShape, prompt_tokens: tuple[int, ...], ctx: np.ndarray) -> _Cache:
    T = ctx.shape[0]
    if prompt_tokens:
        bag = views["prompt_embed"][list(prompt_tokens)].sum(axis=0)
    else:
        bag = np.zeros(shape.embed_dim)
    emb = views["response_embed"][ctx].reshape(T, shape.context * shape.embed_dim)
    x = np.concatenate([np.broadcast_to(bag, (T, shape.embed_dim)), emb], axis=1)
    h = np.tanh(x @ views["w1"].T + views["b1"])
    logits = h @ views["w2"].T + views["b2"]
    return _Cache(ctx, x, h, logits)


def forward_logits(params: PolicyParams, prompt: PromptEncoding, response: Sequence[int]) -> np.ndarray:
    """Teacher-forced (T, V) logits; row t conditions on the prompt and ``response[:t]``."""
    shape = params.shape
    _check_prompt(shape, prompt)
    arr = _check_response(shape, response)
    ctx = _context_tokens(shape, arr, len(arr))
    return _forward(params.views(), shape, prompt.tokens, ctx).logits


def forward_distributions(params: PolicyParams, prompt: PromptEncoding, response: Sequence[int]) -> np.ndarray:
    """Teacher-forced (T, V) log-distributions."""
    return log_softmax(forward_logits(params, prompt, response))


def token_log_probs(log_dists: np.ndarray, response: Sequence[int]) -> np.ndarray:
    idx = np.asarray(response, dtype=np.int64)
    return log_dists[np.arange(len(idx)), idx]


def _backward(views: dict, shape: PolicyShape, prompt_tokens, cache: _Cache, dlogits: np.ndarray,
              grad_views: dict) -> None:
    """Accumulate d(objective)/d(params) into ``grad_views`` given d/d(logits)."""
    k, d = shape.context, shape.embed_dim
    grad_views["w2"] += dlogits.T @ cache.h
    grad_views["b2"] += dlogits.sum(axis=0)
    da = (dlogits @ views["w2"]) * (1.0 - cache.h ** 2)
    grad_views["w1"] += da.T @ cache.x
    grad_views["b1"] += da.sum(axis=0)
    dx = da @ views["w1"]
    dbag = dx[:, :d].sum(axis=0)
    for tok in prompt_tokens:
        grad_views["prompt_embed"][tok] += dbag
    demb = dx[:, d:].reshape(-1, k, d)
    np.add.at(grad_views["response_embed"], cache.ctx, demb)


# --- sampling ---

def cfg_logits(cond_logits, neg_logits, cfg_scale: float) -> np.ndarray:
    """Classifier-free guidance in logit form: ``l + scale * (l - l_neg)``."""
    l = np.asarray(cond_logits, dtype=np.float64)
    return l + cfg_scale * (l - np.asarray(neg_logits, dtype=np.float64))


def sample_token(log_dist: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(np.exp(log_dist))
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(cdf) - 1)


def sample_rollout(params: PolicyParams, prompt: PromptEncoding, neg_prompt: PromptEncoding | None,
                   cfg_scale: float, max_len: int, rng: np.random.Generator,
                   stop_at_eos: bool = True, prompt_id: int | str | None = None) -> Rollout:
    """Ancestral sampling, optionally from CFG-combined logits.

    ``behavior_log_probs`` record the distribution actually sampled from. With
    ``stop_at_eos=False`` exactly ``max_len`` tokens are drawn (fixed-size grids).
    """
    if cfg_scale < 0:
        raise InvalidInputError(f"cfg_scale must be >= 0, got {cfg_scale}")
    if max_len < 1:
        raise InvalidInputError("max_len must be >= 1")
    shape = params.shape
    _check_prompt(shape, prompt)
    guided = neg_prompt is not None and cfg_scale > 0
    if guided:
        _check_prompt(shape, neg_prompt)
    views = params.views()
    pad = shape.vocab_size
    window = [pad] * shape.context  # most recent first
    tokens: list[int] = []
    log_probs: list[float] = []
    for _ in range(max_len):
        ctx = np.array([window], dtype=np.int64)
        logits = _forward(views, shape, prompt.tokens, ctx).logits[0]
        if guided:
            neg = _forward(views, shape, neg_prompt.tokens, ctx).logits[0]
            logits = cfg_logits(logits, neg, cfg_scale)
        log_dist = log_softmax(logits)
        tok = sample_token(log_dist, rng)
        tokens.append(tok)
        log_probs.append(float(log_dist[tok]))
        if stop_at_eos and tok == EOS:
            break
        window = [tok] + window[:-1]
    pid = prompt.task_id if prompt_id is None else prompt_id
    return Rollout(pid, tuple(tokens), np.array(log_probs))


def greedy_rollout(params: PolicyParams, prompt: PromptEncoding, max_len: int,
                   stop_at_eos: bool = True, prompt_id: int | str | None = None) -> Rollout:
    shape = params.shape
    _check_prompt(shape, prompt)
    views = params.views()
    window = [shape.vocab_size] * shape.context
    tokens, log_probs = [], []
    for _ in range(max_len):
        logits = _forward(views, shape, prompt.tokens, np.array([window])).logits[0]
        log_dist = log_softmax(logits)
        tok = int(np.argmax(log_dist))
        tokens.append(tok)
        log_probs.append(float(log_dist[tok]))
        if stop_at_eos and tok == EOS:
            break
        window = [tok] + window[:-1]
    pid = prompt.task_id if prompt_id is None else prompt_id
    return Rollout(pid, tuple(tokens), np.array(log_probs))


# --- objective and its gradient ---

@dataclass
class BatchItem:
    """One rollout with its per-token advantages.

    ``old_log_probs`` defaults to the rollout's behavior log-probs.
    """

    rollout: Rollout
    advantages: np.ndarray
    prompt: PromptEncoding
    old_log_probs: np.ndarray | None = field(default=None)

    def old(self) -> np.ndarray:
        return self.rollout.behavior_log_probs if self.old_log_probs is None else np.asarray(self.old_log_probs)


class LossGradient(NamedTuple):
    grad: np.ndarray
    value: float
    clip_frac: float


def _validate_item(item: BatchItem) -> None:
    T = len(item.rollout)
    if np.shape(item.advantages) != (T,):
        raise InvalidInputError(f"advantages shape {np.shape(item.advantages)} does not match rollout length {T}")
    if np.shape(item.old()) != (T,):
        raise InvalidInputError("old_log_probs length does not match rollout length")


def surrogate_objective(params: PolicyParams, batch: Sequence[BatchItem], config: ObjectiveConfig,
                        ref_params: PolicyParams | None = None) -> float:
    """Objective value by plain forward passes; the reference for gradient checks."""
    if config.kl_beta > 0 and ref_params is None:
        raise InvalidInputError("kl_beta > 0 needs reference params")
    inputs = []
    for item in batch:
        _validate_item(item)
        dists = forward_distributions(params, item.prompt, item.rollout.response)
        ref = None
        if config.kl_beta > 0:
            ref = forward_distributions(ref_params, item.prompt, item.rollout.response)
        inputs.append(SurrogateInput(token_log_probs(dists, item.rollout.response), item.old(),
                                     np.asarray(item.advantages, dtype=np.float64), dists, ref))
    return surrogate_value(inputs, config)


def loss_gradient(params: PolicyParams, batch: Sequence[BatchItem], config: ObjectiveConfig,
                  ref_params: PolicyParams | None = None) -> LossGradient:
    """Analytic ascent gradient of :func:`surrogate_objective`, with its value."""
    if not batch:
        raise InvalidInputError("empty batch")
    if config.kl_beta > 0 and ref_params is None:
        raise InvalidInputError("kl_beta > 0 needs reference params")
    shape = params.shape
    views = params.views()
    grad = np.zeros_like(params.theta)
    grad_views = _views(shape, grad)
    ref_views = ref_params.views() if config.kl_beta > 0 else None
    n = len(batch)
    inputs = []
    clipped_tokens = total_tokens = 0
    for item in batch:
        _validate_item(item)
        _check_prompt(shape, item.prompt)
        resp = _check_response(shape, item.rollout.response)
        T = len(resp)
        ctx = _context_tokens(shape, resp, T)
        cache = _forward(views, shape, item.prompt.tokens, ctx)
        log_dists = log_softmax(cache.logits)
        probs = np.exp(log_dists)
        lp = log_dists[np.arange(T), resp]
        adv = np.asarray(item.advantages, dtype=np.float64)
        _, dlogp, clipped = clipped_token_terms(lp, item.old(), adv, config.clip_low, config.clip_high)
        clipped_tokens += int(clipped.sum())
        total_tokens += T
        # d log p(y_t) / d logits_t = onehot(y_t) - p_t
        dlogits = -probs * dlogp[:, None]
        dlogits[np.arange(T), resp] += dlogp
        ref_dists = None
        if ref_views is not None:
            ref_dists = log_softmax(_forward(ref_views, shape, item.prompt.tokens, ctx).logits)
            diff = log_dists - ref_dists
            kl = kl_divergence(log_dists, ref_dists)
            # d KL_t / d logits_t = p * (log p - log q - KL_t)
            dlogits -= config.kl_beta * probs * (diff - kl[:, None])
        dlogits /= n * T
        _backward(views, shape, item.prompt.tokens, cache, dlogits, grad_views)
        inputs.append(SurrogateInput(lp, item.old(), adv, log_dists, ref_dists))
    value = surrogate_value(inputs, config)
    return LossGradient(grad, value, clipped_tokens / total_tokens)
