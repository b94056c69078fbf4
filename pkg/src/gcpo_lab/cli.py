"""Command-line entry point: ``train``, ``eval``, ``ablate``, ``heatmap``.

Exit codes: 0 success, 1 training aborted, 2 bad configuration, 3 checkpoint problem.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from gcpo_lab.config import ConfigError, TrainConfig, apply_overrides, config_from_dict
from gcpo_lab.guidance import score_guidance, write_pgm, write_profile_csv
from gcpo_lab.numerics import InvalidInputError
from gcpo_lab.policy import PromptEncoding, sample_rollout
from gcpo_lab.tasks import TASK_STRATEGIES, load_tasks
from gcpo_lab.trainer import (
    TrainingDiverged,
    evaluate,
    load_checkpoint,
    load_task_set,
    policy_shape,
    train,
)
from gcpo_lab.weighting import NormalizationStrategy, normalize

log = logging.getLogger("gcpo_lab")

ABLATION_AXES = {
    "metric": ("info_gain", "abs_diff", "kl"),
    "normalization": ("softmax", "minmax", "histogram"),
    "negative_prompt": None,  # depends on the task type
    "algorithm": ("grpo", "dapo", "vppo_like", "gcpo"),
}


class CheckpointMismatch(Exception):
    pass


def _overrides(args) -> list[str]:
    out = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        out.append(f"seed={args.seed}")
    return out


def resolve_config(path, overrides: list[str]) -> TrainConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON ({exc})") from exc
    return config_from_dict(apply_overrides(data, overrides))


def write_manifest(out_dir: Path, command: str, config_path, config: TrainConfig, extra=None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config_path": None if config_path is None else str(config_path),
        "out_dir": str(out_dir),
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "created": dt.datetime.now(dt.timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def cmd_train(args) -> int:
    config = resolve_config(args.config, _overrides(args))
    out = Path(args.out)
    write_manifest(out, "train", args.config, config)
    result = train(config, out)
    print(f"baseline eval {result.baseline_eval:.4f} -> final eval {result.final_eval:.4f}")
    return 0


def cmd_eval(args) -> int:
    config = resolve_config(args.config, _overrides(args))
    task_set = load_task_set(config)
    params, _ = _load_params(args.checkpoint, config, task_set)
    samples = args.samples if args.samples is not None else config.eval_samples
    cfg_scale = config.cfg_scale if config.eval_cfg_scale is None else config.eval_cfg_scale
    score = evaluate(params, task_set, samples, np.random.default_rng([config.seed, 2, 0]),
                     args.greedy or config.eval_greedy, cfg_scale, config.negative_prompt)
    print(f"mean reward {score:.6f}")
    if args.out:
        out = Path(args.out)
        write_manifest(out, "eval", args.config, config, {"checkpoint": str(args.checkpoint)})
        (out / "eval.json").write_text(json.dumps({"mean_reward": score, "samples_per_prompt": samples}) + "\n")
    return 0


def ablation_values(axis: str, config: TrainConfig) -> tuple[str, ...]:
    if axis not in ABLATION_AXES:
        raise ConfigError("axis", f"must be one of {tuple(ABLATION_AXES)}")
    if axis == "negative_prompt":
        return TASK_STRATEGIES[load_task_set(config).task_type]
    return ABLATION_AXES[axis]


def cmd_ablate(args) -> int:
    base = resolve_config(args.config, _overrides(args))
    values = ablation_values(args.axis, base)
    out = Path(args.out)
    write_manifest(out, f"ablate:{args.axis}", args.config, base, {"axis_values": list(values)})
    rows = []
    for value in values:
        overrides = _overrides(args) + [f"{args.axis}={json.dumps(value)}"]
        if args.axis != "algorithm":
            overrides.append('algorithm="gcpo"')
        config = resolve_config(args.config, overrides)
        run_dir = out / f"{args.axis}={value}"
        write_manifest(run_dir, "train", args.config, config)
        result = train(config, run_dir)
        rows.append((value, result.final_eval))
        print(f"{args.axis}={value}: final eval {result.final_eval:.4f}")
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["axis_value", "final_eval_reward"])
        for value, score in rows:
            w.writerow([value, repr(float(score))])
    return 0


def _load_params(path, config: TrainConfig, task_set):
    try:
        blob = load_checkpoint(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointMismatch(f"cannot load checkpoint {path}: {exc}") from exc
    params = blob["params"]
    expected = policy_shape(config, task_set)
    if params.shape != expected:
        raise CheckpointMismatch(f"checkpoint policy shape {params.shape} does not match config/task shape {expected}")
    return params, blob


def cmd_heatmap(args) -> int:
    try:
        blob = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointMismatch(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    if args.config is not None:
        config = resolve_config(args.config, _overrides(args))
    else:
        config = config_from_dict(apply_overrides(blob["config"], _overrides(args)))
    task_set = load_tasks(args.tasks) if args.tasks else load_task_set(config)
    params, _ = _load_params(args.checkpoint, config, task_set)
    if not 0 <= args.prompt < len(task_set):
        raise ConfigError("prompt", f"index {args.prompt} outside task set of size {len(task_set)}")
    task = task_set.tasks[args.prompt]
    if args.same_negative:
        negative = PromptEncoding(task.prompt.tokens, "negative", task.prompt.task_id)
    else:
        negative = task.negative(config.negative_prompt)
    out = Path(args.out)
    write_manifest(out, "heatmap", args.config, config,
                   {"checkpoint": str(args.checkpoint), "prompt_index": args.prompt})
    rng = np.random.default_rng([config.seed, 5])
    guided = negative if config.cfg_scale > 0 else None
    rollout = sample_rollout(params, task.prompt, guided, config.cfg_scale, task_set.max_len, rng,
                             task_set.stop_at_eos, prompt_id=task.task_id)
    rollout.reward = task.reward(rollout.response)
    profile = score_guidance(params, task.prompt, negative, rollout, config.metric)
    strategy = NormalizationStrategy(config.normalization, config.softmax_temperature, config.topk_fraction)
    profile.eta_norm = normalize(profile.eta_raw, strategy)
    write_profile_csv(out / "heatmap.csv", [profile], [rollout])
    if task_set.task_type == "grid":
        write_pgm(out / "heatmap.pgm", profile.eta_norm, task.spec.height, task.spec.width)
    print(f"wrote heatmap for prompt {args.prompt} (reward {rollout.reward:.3f}) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcpo-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--seed", type=int, help="shorthand for --set seed=N")

    sp = sub.add_parser("train", help="run one training job")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--greedy", action="store_true")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="one training run per value of an ablation axis")
    common(sp)
    sp.add_argument("--axis", required=True, choices=sorted(ABLATION_AXES))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("heatmap", help="export per-token guidance for one sampled response")
    common(sp, config_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--prompt", type=int, default=0, help="index into the task set")
    sp.add_argument("--tasks", help="task JSON file to draw the prompt from")
    sp.add_argument("--same-negative", action="store_true", help="score with the positive prompt on both sides")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc} (key: {exc.key})", file=sys.stderr)
        return 2
    except CheckpointMismatch as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 3
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except InvalidInputError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
