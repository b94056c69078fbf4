"""Training configuration: dataclasses, JSON loading, dotted overrides, and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from gcpo_lab.advantage import ESTIMATORS
from gcpo_lab.guidance import METRICS
from gcpo_lab.numerics import InvalidInputError
from gcpo_lab.objective import ALGORITHMS, ObjectiveConfig
from gcpo_lab.tasks import STRATEGIES
from gcpo_lab.weighting import KINDS as NORMALIZATIONS
from gcpo_lab.weighting import NormalizationStrategy


class ConfigError(InvalidInputError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: str = "constant"


@dataclass
class TrainConfig:
    seed: int = 42
    task: str = "arith"  # "arith", "grid", or a path to a task JSON file
    group_size: int = 8
    groups_per_step: int = 8
    steps: int = 200
    algorithm: str = "gcpo"
    estimator: str = "grpo"
    cfg_scale: float = 0.0
    negative_prompt: str = "wrong_suffix"
    metric: str = "kl"
    normalization: str = "histogram"
    softmax_temperature: float = 1.0
    topk_fraction: float = 0.4
    # None lets the algorithm preset decide.
    dapo_filter: bool | None = None
    clip_low: float = 0.2
    clip_high: float | None = None
    kl_beta: float | None = None
    epochs_per_batch: int = 1
    ratio_source: str = "conditional"
    refresh_guidance: bool = False
    binary_reward: bool = False
    warmup_steps: int = 0
    warmup_lr: float = 1e-2
    warmup_batch: int = 32
    eval_every: int = 10
    eval_samples: int = 8
    eval_greedy: bool = False
    eval_cfg_scale: float | None = None
    hidden: int = 32
    context: int = 4
    embed_dim: int = 8
    init_out_scale: float = 0.1
    threads: int = 1
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def validate(self) -> "TrainConfig":
        checks = [
            ("group_size", self.group_size >= 2, "must be >= 2"),
            ("groups_per_step", self.groups_per_step >= 1, "must be >= 1"),
            ("steps", self.steps >= 1, "must be >= 1"),
            ("algorithm", self.algorithm in ALGORITHMS, f"must be one of {ALGORITHMS}"),
            ("estimator", self.estimator in ESTIMATORS, f"must be one of {ESTIMATORS}"),
            ("cfg_scale", self.cfg_scale >= 0, "must be >= 0"),
            ("negative_prompt", self.negative_prompt in STRATEGIES, f"must be one of {STRATEGIES}"),
            ("metric", self.metric in METRICS, f"must be one of {METRICS}"),
            ("normalization", self.normalization in NORMALIZATIONS, f"must be one of {NORMALIZATIONS}"),
            ("softmax_temperature", self.softmax_temperature > 0, "must be > 0"),
            ("topk_fraction", 0 < self.topk_fraction <= 1, "must lie in (0, 1]"),
            ("clip_low", 0 < self.clip_low < 1, "must lie in (0, 1)"),
            ("clip_high", self.clip_high is None or 0 < self.clip_high < 1, "must lie in (0, 1)"),
            ("kl_beta", self.kl_beta is None or self.kl_beta >= 0, "must be >= 0"),
            ("epochs_per_batch", self.epochs_per_batch >= 1, "must be >= 1"),
            ("ratio_source", self.ratio_source in ("conditional", "behavior"),
             "must be 'conditional' or 'behavior'"),
            ("warmup_steps", self.warmup_steps >= 0, "must be >= 0"),
            ("eval_every", self.eval_every >= 1, "must be >= 1"),
            ("eval_samples", self.eval_samples >= 1, "must be >= 1"),
            ("eval_cfg_scale", self.eval_cfg_scale is None or self.eval_cfg_scale >= 0, "must be >= 0"),
            ("threads", self.threads >= 1, "must be >= 1"),
            ("optimizer.name", self.optimizer.name in ("adam", "sgd"), "must be 'adam' or 'sgd'"),
            ("optimizer.lr", self.optimizer.lr >= 0, "must be >= 0"),
            ("optimizer.schedule", self.optimizer.schedule in ("constant", "cosine"),
             "must be 'constant' or 'cosine'"),
        ]
        for key, ok, msg in checks:
            if not ok:
                raise ConfigError(key, f"{msg} (got {_get(self, key)!r})")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return config_hash(self.to_dict())

    # algorithm presets

    def weighting(self) -> NormalizationStrategy:
        if self.algorithm in ("grpo", "dapo"):
            return NormalizationStrategy("uniform")
        if self.algorithm == "vppo_like":
            return NormalizationStrategy("hard_topk", fraction=self.topk_fraction)
        return NormalizationStrategy(self.normalization, self.softmax_temperature, self.topk_fraction)

    def use_filter(self) -> bool:
        if self.dapo_filter is not None:
            return self.dapo_filter
        return self.algorithm == "dapo"

    def objective(self) -> ObjectiveConfig:
        clip_high = self.clip_high
        if clip_high is None:
            clip_high = 0.28 if self.algorithm == "dapo" else self.clip_low
        return ObjectiveConfig(self.clip_low, clip_high, self.kl_beta or 0.0)


def _get(obj, dotted: str):
    for part in dotted.split("."):
        obj = getattr(obj, part)
    return obj


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(key: str, value, tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(key, value, inner[0])
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(key, f"expected a number, got {value!r}")
    if tp is str:
        if isinstance(value, str):
            return value
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def _build(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        full = prefix + key
        if key not in names:
            raise ConfigError(full, "unknown config key")
        tp = hints[key]
        if dataclasses.is_dataclass(tp):
            kwargs[key] = _build(tp, value, full + ".")
        else:
            kwargs[key] = _coerce(full, value, tp)
    return cls(**kwargs)


def config_from_dict(data: dict) -> TrainConfig:
    return _build(TrainConfig, data).validate()


def parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise ConfigError(text, "overrides must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    out = json.loads(json.dumps(data))
    for text in overrides:
        key, value = parse_override(text)
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "cannot descend into a non-object value")
        node[parts[-1]] = value
    return out


def load_config(path=None, overrides: list[str] | None = None) -> TrainConfig:
    data = {} if path is None else json.loads(Path(path).read_text())
    return config_from_dict(apply_overrides(data, overrides or []))
