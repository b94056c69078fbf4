import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcpo_lab.advantage import Group, dapo_filter, gcpo_token_advantages, group_advantages
from gcpo_lab.numerics import InvalidInputError
from gcpo_lab.policy import Rollout

rewards_st = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=16)


def make_group(pid, rewards):
    rollouts = [Rollout(pid, (1,), np.array([-0.5]), r) for r in rewards]
    return Group(pid, rollouts)


def test_grpo_example():
    rewards = [1.0, 0.0, 0.0, 1.0]
    mean = sum(rewards) / 4
    std = (sum((r - mean) ** 2 for r in rewards) / 4) ** 0.5
    assert (mean, std) == (0.5, 0.5)
    assert group_advantages(rewards, "grpo", eps=0.0).tolist() == [1.0, -1.0, -1.0, 1.0]
    assert np.allclose(group_advantages(rewards), [1, -1, -1, 1], atol=1e-5)


def test_constant_rewards_give_zero():
    assert group_advantages([1.0] * 4).tolist() == [0.0] * 4


def test_dr_grpo_example():
    assert group_advantages([1.0, 0.0], "dr_grpo").tolist() == [0.5, -0.5]


def test_needs_two_rewards():
    with pytest.raises(InvalidInputError):
        group_advantages([1.0])
    with pytest.raises(InvalidInputError):
        group_advantages([1.0, 2.0], "ppo")


@given(rewards_st)
def test_grpo_zero_mean_unit_variance(rewards):
    r = np.array(rewards)
    adv = group_advantages(r, eps=0.0) if r.std() > 1e-6 else group_advantages(r)
    assert abs(adv.mean()) <= 1e-9
    if r.std() > 1e-3:
        assert adv.std() == pytest.approx(1.0, abs=1e-9)


@given(st.lists(st.integers(0, 5), min_size=4, max_size=4).filter(lambda r: len(set(r)) > 1),
       st.integers(-3, 3), st.integers(-10, 10))
def test_grpo_exact_affine_invariance(rewards, log2_scale, shift):
    r = np.array(rewards, dtype=float)
    scaled = (2.0 ** log2_scale) * r + shift
    assert group_advantages(scaled, eps=0.0).tolist() == group_advantages(r, eps=0.0).tolist()


@given(rewards_st.filter(lambda r: np.std(r) > 1e-3), st.floats(0.01, 100), st.floats(-50, 50))
def test_grpo_affine_invariance(rewards, a, b):
    r = np.array(rewards)
    assert np.allclose(group_advantages(a * r + b, eps=0.0), group_advantages(r, eps=0.0), atol=1e-7)


def test_gcpo_token_examples():
    assert gcpo_token_advantages(1.0, [0.0, 0.5, 1.0]).tolist() == [0.0, 0.5, 1.0]
    assert gcpo_token_advantages(-2.0, [0.25, 0.75]).tolist() == [-0.5, -1.5]
    assert gcpo_token_advantages(-0.7, np.ones(5)).tolist() == np.full(5, -0.7).tolist()
    with pytest.raises(InvalidInputError):
        gcpo_token_advantages(1.0, [1.5])


@given(st.floats(-10, 10), st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_token_advantage_bounded(adv, weights):
    out = gcpo_token_advantages(adv, weights)
    assert np.all(np.abs(out) <= abs(adv))


def test_dapo_filter_examples():
    groups = [make_group(0, [1, 1, 1, 1]), make_group(1, [0, 0, 0, 0]), make_group(2, [1, 0, 1, 0]),
              make_group(3, [0.5, 0.5, 0.25, 0.5])]
    kept = dapo_filter(groups)
    assert [g.prompt_id for g in kept] == [2, 3]


@given(st.lists(st.lists(st.integers(0, 1), min_size=2, max_size=8), min_size=1, max_size=10))
def test_dapo_filter_property(reward_lists):
    groups = [make_group(i, r) for i, r in enumerate(reward_lists)]
    kept = dapo_filter(groups)
    expected = [i for i, r in enumerate(reward_lists) if len(set(r)) > 1]
    assert [g.prompt_id for g in kept] == expected
