"""Group-sampling RL loop: collect, score guidance, weight, compute advantages, update."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gcpo_lab.advantage import Group, dapo_filter, gcpo_token_advantages, group_advantages
from gcpo_lab.config import TrainConfig
from gcpo_lab.guidance import score_guidance
from gcpo_lab.numerics import InvalidInputError
from gcpo_lab.objective import ObjectiveConfig
from gcpo_lab.policy import (
    BatchItem,
    PolicyParams,
    PolicyShape,
    Rollout,
    forward_distributions,
    greedy_rollout,
    init_params,
    loss_gradient,
    sample_rollout,
    token_log_probs,
)
from gcpo_lab.tasks import Task, TaskSet, build_task_set
from gcpo_lab.weighting import normalize

log = logging.getLogger(__name__)

METRICS_HEADER = ["step", "mean_reward", "eval_reward", "objective", "mean_abs_adv",
                  "mean_eta", "clip_frac", "groups_filtered"]
CHECKPOINT_VERSION = 1

# stream tags for seeding
_PICK, _ROLLOUT, _EVAL, _INIT, _WARMUP = range(5)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MetricsRow:
    step: int
    mean_reward: float
    eval_reward: float | None
    objective: float
    mean_abs_adv: float
    mean_eta: float
    clip_frac: float
    groups_filtered: int
    groups_collected: int = 0
    groups_trained: int = 0

    def csv_row(self) -> list[str]:
        def fmt(x):
            return "" if x is None else repr(float(x))
        return [str(self.step), fmt(self.mean_reward), fmt(self.eval_reward), fmt(self.objective),
                fmt(self.mean_abs_adv), fmt(self.mean_eta), fmt(self.clip_frac), str(self.groups_filtered)]


@dataclass
class TrainResult:
    params: PolicyParams
    metrics: list[MetricsRow]
    baseline_eval: float
    final_eval: float
    optimizer: "Optimizer" = None


class Optimizer:
    """Adam or SGD acting as gradient *ascent* on the objective."""

    def __init__(self, name: str, lr: float, size: int, beta1=0.9, beta2=0.999, eps=1e-8,
                 schedule: str = "constant", total_steps: int = 1):
        self.name, self.lr, self.schedule, self.total_steps = name, lr, schedule, max(total_steps, 1)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def current_lr(self) -> float:
        if self.schedule == "cosine":
            frac = min(self.t, self.total_steps) / self.total_steps
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * frac))
        return self.lr

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        lr = self.current_lr()
        self.t += 1
        if self.name == "sgd":
            return theta + lr * grad
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return theta + lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict:
        return {"name": self.name, "t": self.t, "m": self.m.tolist(), "v": self.v.tolist()}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)


def make_optimizer(config: TrainConfig, size: int, lr: float | None = None, steps: int | None = None) -> Optimizer:
    o = config.optimizer
    return Optimizer(o.name, o.lr if lr is None else lr, size, o.beta1, o.beta2, o.eps, o.schedule,
                     config.steps if steps is None else steps)


def policy_shape(config: TrainConfig, task_set: TaskSet) -> PolicyShape:
    return PolicyShape(task_set.vocab_size, task_set.prompt_vocab_size, config.context,
                       config.embed_dim, config.hidden)


def load_task_set(config: TrainConfig) -> TaskSet:
    if config.task == "grid":
        return build_task_set("grid", binary=config.binary_reward)
    return build_task_set(config.task)


def thread_count(config: TrainConfig) -> int:
    cap = os.environ.get("GCPO_LAB_THREADS")
    n = config.threads
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def evaluate(params: PolicyParams, task_set: TaskSet, samples_per_prompt: int = 8,
             rng: np.random.Generator | None = None, greedy: bool = False, cfg_scale: float = 0.0,
             negative_strategy: str | None = None) -> float:
    """Mean verifier reward over every prompt times ``samples_per_prompt`` decodes."""
    if samples_per_prompt < 1:
        raise InvalidInputError("samples_per_prompt must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    total, count = 0.0, 0
    for task in task_set.tasks:
        neg = task.negative(negative_strategy) if (cfg_scale > 0 and negative_strategy) else None
        for _ in range(samples_per_prompt):
            if greedy:
                r = greedy_rollout(params, task.prompt, task_set.max_len, task_set.stop_at_eos)
            else:
                r = sample_rollout(params, task.prompt, neg, cfg_scale, task_set.max_len, rng,
                                   task_set.stop_at_eos)
            total += task.reward(r.response)
            count += 1
    return total / count


def _collect_group(params, task: Task, config: TrainConfig, task_set: TaskSet, rng) -> Group:
    neg = task.negative(config.negative_prompt) if config.cfg_scale > 0 else None
    rollouts = []
    for _ in range(config.group_size):
        r = sample_rollout(params, task.prompt, neg, config.cfg_scale, task_set.max_len, rng,
                           task_set.stop_at_eos, prompt_id=task.task_id)
        r.reward = task.reward(r.response)
        rollouts.append(r)
    return Group(task.task_id, rollouts)


def collect_groups(params: PolicyParams, tasks: list[Task], config: TrainConfig, task_set: TaskSet,
                   step: int) -> list[Group]:
    rngs = [np.random.default_rng([config.seed, _ROLLOUT, step, g]) for g in range(len(tasks))]
    jobs = list(zip(tasks, rngs))
    n = thread_count(config)
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(lambda job: _collect_group(params, job[0], config, task_set, job[1]), jobs))
    return [_collect_group(params, t, config, task_set, r) for t, r in jobs]


def _warmup(params: PolicyParams, task_set: TaskSet, config: TrainConfig) -> PolicyParams:
    """Supervised likelihood on reference answers (arithmetic only)."""
    if config.warmup_steps == 0 or task_set.task_type != "arith":
        return params
    opt = make_optimizer(config, len(params.theta), lr=config.warmup_lr, steps=config.warmup_steps)
    opt.schedule = "constant"
    objective = ObjectiveConfig()
    for step in range(config.warmup_steps):
        rng = np.random.default_rng([config.seed, _WARMUP, step])
        picks = rng.choice(len(task_set), size=config.warmup_batch, replace=True)
        batch = []
        for i in picks:
            task = task_set.tasks[int(i)]
            answer = task.spec.answer_tokens()
            lp = token_log_probs(forward_distributions(params, task.prompt, answer), answer)
            batch.append(BatchItem(Rollout(task.task_id, answer, lp), np.ones(len(answer)), task.prompt))
        grad, _, _ = loss_gradient(params, batch, objective)
        params = params.with_theta(opt.step(params.theta, grad))
    return params


def _eval(params, task_set, config: TrainConfig, step: int) -> float:
    cfg_scale = config.cfg_scale if config.eval_cfg_scale is None else config.eval_cfg_scale
    return evaluate(params, task_set, config.eval_samples, np.random.default_rng([config.seed, _EVAL, step]),
                    config.eval_greedy, cfg_scale, config.negative_prompt)


def build_batch(params: PolicyParams, groups: list[Group], task_by_id: dict, config: TrainConfig):
    """Advantages, guidance weights and ratio baselines for every surviving rollout."""
    strategy = config.weighting()
    broadcast = config.algorithm in ("grpo", "dapo")
    batch, etas = [], []
    for g in groups:
        task = task_by_id[g.prompt_id]
        neg = task.negative(config.negative_prompt)
        g.sample_advantages = group_advantages(g.rewards, config.estimator)
        g.token_advantages = []
        for r, adv in zip(g.rollouts, g.sample_advantages):
            profile = score_guidance(params, task.prompt, neg, r, config.metric)
            profile.eta_norm = normalize(profile.eta_raw, strategy)
            etas.append(profile.eta_raw)
            if broadcast:
                tok_adv = np.full(len(r), adv)
            else:
                tok_adv = gcpo_token_advantages(adv, profile.eta_norm)
            g.token_advantages.append(tok_adv)
            old = None
            if config.ratio_source == "conditional":
                old = token_log_probs(forward_distributions(params, task.prompt, r.response), r.response)
            batch.append(BatchItem(r, tok_adv, task.prompt, old))
    return batch, etas


def _dump_state(out_dir, step, params, opt, config, detail):
    if out_dir is None:
        return
    path = Path(out_dir) / "diverged_state.json"
    path.write_text(json.dumps({"step": step, "detail": detail, "theta": params.theta.tolist(),
                                "optimizer": opt.state(), "config": config.to_dict()}))


def save_checkpoint(path, params: PolicyParams, opt: Optimizer | None, config: TrainConfig, step: int) -> None:
    blob = {
        "format_version": CHECKPOINT_VERSION,
        "step": step,
        "shape": params.shape.to_dict(),
        "theta": params.theta.tolist(),
        "optimizer": opt.state() if opt is not None else None,
        "config": config.to_dict(),
        "config_hash": config.hash(),
    }
    Path(path).write_text(json.dumps(blob))


def load_checkpoint(path) -> dict:
    blob = json.loads(Path(path).read_text())
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {blob.get('format_version')!r}")
    shape = PolicyShape(**blob["shape"])
    blob["params"] = PolicyParams(shape, np.array(blob["theta"]))
    return blob


def write_metrics(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow(row.csv_row())


def train(config: TrainConfig, out_dir=None, task_set: TaskSet | None = None,
          init: PolicyParams | None = None, callback=None) -> TrainResult:
    """Run ``config.steps`` collect/update rounds.

    ``callback(row, params)`` is invoked after every step with the updated params.
    """
    config.validate()
    task_set = load_task_set(config) if task_set is None else task_set
    task_by_id = {t.task_id: t for t in task_set.tasks}
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    if init is None:
        init = init_params(policy_shape(config, task_set), np.random.default_rng([config.seed, _INIT]),
                           out_scale=config.init_out_scale)
    params = _warmup(init, task_set, config)
    ref_params = params.copy()
    objective = config.objective()
    opt = make_optimizer(config, len(params.theta))
    baseline = _eval(params, task_set, config, 0)
    log.info("baseline eval reward %.4f", baseline)
    rows: list[MetricsRow] = []
    final_eval = baseline
    for step in range(1, config.steps + 1):
        pick_rng = np.random.default_rng([config.seed, _PICK, step])
        n_groups = config.groups_per_step
        picks = pick_rng.choice(len(task_set), size=n_groups, replace=n_groups > len(task_set))
        tasks = [task_set.tasks[int(i)] for i in picks]
        collected = collect_groups(params, tasks, config, task_set, step)
        mean_reward = float(np.mean([r.reward for g in collected for r in g.rollouts]))
        groups = dapo_filter(collected) if config.use_filter() else collected
        filtered = len(collected) - len(groups)
        value = clip_frac = mean_abs_adv = mean_eta = float("nan")
        if groups:
            batch, etas = build_batch(params, groups, task_by_id, config)
            all_adv = np.concatenate([item.advantages for item in batch])
            mean_abs_adv = float(np.mean(np.abs(all_adv)))
            mean_eta = float(np.mean(np.concatenate(etas)))
            for epoch in range(config.epochs_per_batch):
                if epoch and config.refresh_guidance:
                    batch, _ = _rescore(params, batch, groups, task_by_id, config)
                grad, j, cf = loss_gradient(params, batch, objective, ref_params)
                if epoch == 0:
                    value = j
                clip_frac = cf
                if not (np.isfinite(j) and np.all(np.isfinite(grad))):
                    _dump_state(out_dir, step, params, opt, config, f"objective={j!r}")
                    raise TrainingDiverged(f"non-finite objective at step {step}, epoch {epoch}: {j!r}")
                new_theta = opt.step(params.theta, grad)
                if not np.all(np.isfinite(new_theta)):
                    _dump_state(out_dir, step, params, opt, config, "non-finite parameters after update")
                    raise TrainingDiverged(f"non-finite parameters after update at step {step}")
                params = params.with_theta(new_theta)
        eval_reward = None
        if step % config.eval_every == 0 or step == config.steps:
            eval_reward = _eval(params, task_set, config, step)
            final_eval = eval_reward
            if out_dir is not None:
                save_checkpoint(out_dir / "checkpoints" / f"step_{step:05d}.json", params, opt, config, step)
                save_checkpoint(out_dir / "checkpoint.json", params, opt, config, step)
        row = MetricsRow(step, mean_reward, eval_reward, value, mean_abs_adv, mean_eta, clip_frac,
                         filtered, len(collected), len(groups))
        rows.append(row)
        if callback is not None:
            callback(row, params)
        log.debug("step %d reward %.4f objective %.5f filtered %d", step, mean_reward, value, filtered)
    if out_dir is not None:
        write_metrics(out_dir / "metrics.csv", rows)
    return TrainResult(params, rows, baseline, final_eval, opt)


def _rescore(params, batch, groups, task_by_id, config):
    """Recompute guidance weights with the current params, keeping ratio baselines fixed."""
    strategy = config.weighting()
    out, etas, k = [], [], 0
    for g in groups:
        task = task_by_id[g.prompt_id]
        neg = task.negative(config.negative_prompt)
        for i, r in enumerate(g.rollouts):
            item = batch[k]
            k += 1
            if config.algorithm in ("grpo", "dapo"):
                out.append(item)
                continue
            profile = score_guidance(params, task.prompt, neg, r, config.metric)
            w = normalize(profile.eta_raw, strategy)
            etas.append(profile.eta_raw)
            out.append(BatchItem(r, gcpo_token_advantages(g.sample_advantages[i], w), item.prompt,
                                 item.old_log_probs))
    return out, etas
