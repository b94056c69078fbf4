import math

import numpy as np
import pytest

from gcpo_lab.config import ConfigError, TrainConfig, config_from_dict, load_config
from gcpo_lab.policy import PolicyShape, PromptEncoding, zero_params
from gcpo_lab.tasks import ARITH_PROMPT_VOCAB, ARITH_VOCAB, ArithSpec, GridSpec, Task, TaskSet, arith_task_set
from gcpo_lab.trainer import Optimizer, evaluate, load_checkpoint, save_checkpoint, train

FAST = {"group_size": 4, "groups_per_step": 3, "eval_samples": 1, "eval_every": 5, "hidden": 8}
GRID = {"task": "grid", "cfg_scale": 5.0, "negative_prompt": "empty"}


def fast_config(**kw):
    return config_from_dict({**FAST, **kw})


def test_zero_learning_rate_keeps_params():
    cfg = fast_config(steps=4, optimizer={"lr": 0.0})
    start = []
    res = train(cfg, callback=lambda row, p: start.append(p.theta.copy()))
    assert all(np.array_equal(start[0], th) for th in start)
    cfg_zero_steps = fast_config(steps=1, optimizer={"lr": 0.0})
    assert np.array_equal(train(cfg_zero_steps).params.theta, res.params.theta)


def test_grpo_equals_gcpo_with_uniform_weights():
    a = train(fast_config(steps=5, algorithm="grpo", **GRID))
    b = train(fast_config(steps=5, algorithm="gcpo", normalization="uniform", **GRID))
    assert np.array_equal(a.params.theta, b.params.theta)
    assert [r.csv_row() for r in a.metrics] == [r.csv_row() for r in b.metrics]


def test_gcpo_weights_change_trajectory():
    a = train(fast_config(steps=3, algorithm="grpo", **GRID))
    b = train(fast_config(steps=3, algorithm="gcpo", **GRID))
    assert not np.array_equal(a.params.theta, b.params.theta)


def test_same_seed_is_deterministic(tmp_path):
    train(fast_config(steps=6, **GRID), tmp_path / "a")
    train(fast_config(steps=6, **GRID), tmp_path / "b")
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()


def test_thread_count_does_not_change_results(monkeypatch):
    a = train(fast_config(steps=3, threads=4, **GRID))
    monkeypatch.setenv("GCPO_LAB_THREADS", "1")
    b = train(fast_config(steps=3, threads=4, **GRID))
    assert np.array_equal(a.params.theta, b.params.theta)


def test_all_filtered_steps_do_not_update(tmp_path):
    path = tmp_path / "tasks.json"
    path.write_text('[{"task_type": "grid", "constraints": [], "prompt_tokens": [0]}]')
    seen = []
    cfg = fast_config(steps=3, task=str(path), algorithm="dapo", negative_prompt="empty")
    res = train(cfg, callback=lambda row, p: seen.append((row, p.theta.copy())))
    first = seen[0][1]
    for row, theta in seen:
        assert row.groups_filtered == row.groups_collected == 3
        assert row.groups_trained == 0
        assert math.isnan(row.objective)
        assert np.array_equal(theta, first)
    assert res.final_eval == 1.0


def test_filter_accounting_on_mixed_rewards():
    rows = train(fast_config(steps=5, algorithm="dapo", warmup_steps=50, group_size=6)).metrics
    for row in rows:
        assert row.groups_collected == row.groups_trained + row.groups_filtered


def test_metrics_csv_header(tmp_path):
    train(fast_config(steps=2), tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,mean_reward,eval_reward,objective,mean_abs_adv,mean_eta,clip_frac,groups_filtered"
    assert len(lines) == 3


def test_multiple_epochs_exercise_clipping():
    rows = train(fast_config(steps=3, epochs_per_batch=4, optimizer={"lr": 0.05}, **GRID)).metrics
    assert any(r.clip_frac > 0 for r in rows)


def test_refresh_guidance_runs():
    rows = train(fast_config(steps=2, epochs_per_batch=2, refresh_guidance=True, **GRID)).metrics
    assert all(np.isfinite(r.objective) for r in rows)


def test_checkpoint_roundtrip(tmp_path):
    res = train(fast_config(steps=2))
    path = tmp_path / "ck.json"
    cfg = fast_config(steps=2)
    save_checkpoint(path, res.params, res.optimizer, cfg, 2)
    blob = load_checkpoint(path)
    assert np.array_equal(blob["params"].theta, res.params.theta)
    assert blob["config_hash"] == cfg.hash()
    opt = Optimizer("adam", 0.1, len(res.params.theta))
    opt.load_state(blob["optimizer"])
    assert opt.t == res.optimizer.t


def test_adam_and_cosine():
    opt = Optimizer("adam", 0.1, 2, schedule="cosine", total_steps=4)
    theta = opt.step(np.zeros(2), np.array([1.0, -2.0]))
    # first Adam step moves each coordinate by lr * sign(grad)
    assert np.allclose(theta, [0.1, -0.1], atol=1e-8)
    lrs = []
    for _ in range(4):
        lrs.append(opt.current_lr())
        opt.step(theta, np.ones(2))
    assert lrs[0] > lrs[1] > lrs[2] > lrs[3] >= 0
    sgd = Optimizer("sgd", 0.5, 1)
    assert sgd.step(np.array([1.0]), np.array([2.0])).tolist() == [2.0]


def _perfect_arith_params(shape):
    """Hand-set weights that always answer "7" then EOS."""
    params = zero_params(shape)
    v = params.views()
    pad, seven = shape.vocab_size, 8
    v["response_embed"][pad, 0] = 1.0
    v["response_embed"][seven, 1] = 1.0
    d = shape.embed_dim
    v["w1"][0, d + 0] = 10.0  # hidden 0 fires at the start of the response
    v["w1"][1, d + 1] = 10.0  # hidden 1 fires right after a "7"
    v["w2"][seven, 0] = 60.0
    v["w2"][0, 1] = 60.0
    return params


def test_evaluate_perfect_policy():
    shape = PolicyShape(ARITH_VOCAB, ARITH_PROMPT_VOCAB, hidden=4)
    params = _perfect_arith_params(shape)
    spec = ArithSpec(3, 4, "+")
    ts = TaskSet("arith", [Task(0, "arith", spec, PromptEncoding(spec.prompt_tokens(), "positive", 0))])
    assert evaluate(params, ts, 8, np.random.default_rng(0)) == 1.0
    assert evaluate(params, ts, 1, greedy=True) == 1.0


def test_evaluate_uniform_policy_chance_rate():
    ts = arith_task_set(ops=("+",), operands=range(5))  # every answer is one digit
    params = zero_params(PolicyShape(ARITH_VOCAB, ARITH_PROMPT_VOCAB))
    n = len(ts) * 400
    chance = (1 / ARITH_VOCAB) ** 2  # the digit, then EOS
    score = evaluate(params, ts, 400, np.random.default_rng(1))
    sigma = math.sqrt(chance * (1 - chance) / n)
    assert abs(score - chance) <= 3 * sigma


def test_config_errors_name_key():
    with pytest.raises(ConfigError) as e:
        config_from_dict({"algorithm": "ppo2"})
    assert e.value.key == "algorithm"
    with pytest.raises(ConfigError) as e:
        config_from_dict({"optimizer": {"momentum": 0.9}})
    assert e.value.key == "optimizer.momentum"
    with pytest.raises(ConfigError) as e:
        config_from_dict({"steps": "many"})
    assert e.value.key == "steps"


def test_overrides_and_hash(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"steps": 3, "optimizer": {"lr": 0.5}}')
    cfg = load_config(path, ["optimizer.lr=0.25", "algorithm=dapo", "clip_high=null"])
    assert cfg.steps == 3 and cfg.optimizer.lr == 0.25 and cfg.algorithm == "dapo"
    assert cfg.objective().clip_high == 0.28 and cfg.use_filter()
    assert cfg.weighting().kind == "uniform"
    reordered = config_from_dict(dict(reversed(list(cfg.to_dict().items()))))
    assert reordered.hash() == cfg.hash()
    assert TrainConfig(algorithm="vppo_like").weighting().kind == "hard_topk"
