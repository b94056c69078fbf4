import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gcpo_lab.numerics import InvalidInputError
from gcpo_lab.policy import EOS, PromptEncoding
from gcpo_lab.tasks import (
    ARITH_ANSWER,
    ARITH_EQ,
    ARITH_PLUS,
    ARITH_WRONG,
    GRID_BG,
    GRID_VOCAB,
    STRATEGIES,
    TASK_STRATEGIES,
    ArithSpec,
    GridConstraint,
    GridSpec,
    arith_reward,
    arith_task_set,
    default_grid_specs,
    grid_reward,
    grid_task_set,
    load_tasks,
    make_negative_prompt,
    object_token,
    prompt_pair,
    save_tasks,
)

RS = object_token("red", "square")
BC = object_token("blue", "circle")
GC = object_token("green", "circle")


def digits(text):
    return [int(c) + 1 for c in text] + [EOS]


def test_arith_rewards():
    assert arith_reward(ArithSpec(3, 4, "+"), digits("7")) == 1.0
    assert arith_reward(ArithSpec(3, 4, "+"), digits("8")) == 0.0
    assert arith_reward(ArithSpec(6, 7, "*"), digits(str(6 * 7))) == 1.0


@pytest.mark.parametrize("response", [[], [8], [EOS], [1, 8, EOS], [8, EOS, 3]])
def test_arith_malformed_scores_zero_or_prefix(response):
    # digits must be followed by EOS and carry no leading zero; trailing junk after EOS is ignored
    expected = 1.0 if response == [8, EOS, 3] else 0.0
    assert arith_reward(ArithSpec(3, 4, "+"), response) == expected


def test_arith_answer_tokens():
    for a in range(10):
        for b in range(10):
            for op in "+*":
                spec = ArithSpec(a, b, op)
                assert arith_reward(spec, list(spec.answer_tokens())) == 1.0


def test_grid_empty_constraints_vacuous():
    spec = GridSpec(4, 4, ())
    assert grid_reward(spec, [GRID_BG] * 16) == 1.0


def test_grid_count_exact():
    spec = GridSpec(4, 4, (GridConstraint("count", "square", "red", count=2),))
    grid = [GRID_BG] * 16
    grid[3] = grid[9] = RS
    assert grid_reward(spec, grid) == 1.0
    grid[10] = RS
    assert grid_reward(spec, grid) == 0.0


def test_grid_partial_credit_by_hand():
    # Row-major 4x4 grid: red square at (0, 0), blue circle at (0, 3), green circle at (3, 1).
    grid = [GRID_BG] * 16
    grid[0], grid[3], grid[13] = RS, BC, GC
    cons = (
        GridConstraint("presence", "square", "red"),                                   # yes
        GridConstraint("position", "square", relation="left_of", other_shape="circle"),  # col 0 < mean col 2 -> yes
        GridConstraint("color", "circle", "blue"),                                     # a green circle exists -> no
    )
    assert grid_reward(GridSpec(4, 4, cons), grid) == pytest.approx(2 / 3)
    assert grid_reward(GridSpec(4, 4, cons, binary=True), grid) == 0.0


def test_grid_constraint_kinds():
    grid = np.full((4, 4), GRID_BG)
    grid[0, 0] = RS
    grid[3, 3] = BC
    flat = grid.reshape(-1)
    C = GridConstraint
    checks = {
        C("presence", "circle"): True,
        C("presence", "circle", "green"): False,
        C("count", "circle", count=1): True,
        C("color", "square", "red"): True,
        C("color", "square", "blue"): False,
        C("position", "square", relation="above", other_shape="circle"): True,
        C("position", "square", relation="below", other_shape="circle"): False,
        C("position", "circle", relation="right_of", other_shape="square"): True,
        C("attribution", "square", "red", other_shape="circle", other_color="blue"): True,
        C("attribution", "square", "blue", other_shape="circle", other_color="red"): False,
    }
    for c, ok in checks.items():
        assert grid_reward(GridSpec(4, 4, (c,)), flat) == float(ok), c


def test_grid_wrong_length():
    with pytest.raises(InvalidInputError):
        grid_reward(GridSpec(4, 4, ()), [GRID_BG] * 15)


def test_eos_cells_count_as_empty():
    spec = GridSpec(4, 4, (GridConstraint("presence", "square"),))
    assert grid_reward(spec, [EOS] * 16) == 0.0


@given(st.lists(st.integers(0, GRID_VOCAB - 1), min_size=16, max_size=16), st.randoms())
def test_grid_position_free_constraints_permutation_covariant(cells, rnd):
    C = GridConstraint
    cons = (C("presence", "circle", "green"), C("count", "square", count=2), C("color", "circle", "blue"),
            C("attribution", "square", "red", other_shape="circle", other_color="green"))
    spec = GridSpec(4, 4, cons)
    shuffled = list(cells)
    rnd.shuffle(shuffled)
    assert grid_reward(spec, cells) == grid_reward(spec, shuffled)
    assert grid_reward(spec, cells) == grid_reward(spec, cells)


def test_default_grid_prompts_are_distinct():
    specs = default_grid_specs()
    tokens = [s.prompt_tokens() for s in specs]
    assert len(set(tokens)) == len(tokens)
    kinds = {c.kind for s in specs for c in s.constraints}
    assert kinds == {"presence", "count", "color", "position", "attribution"}


def test_negative_prompt_examples():
    arith = arith_task_set()
    task = next(t for t in arith.tasks if t.spec == ArithSpec(3, 4, "+"))
    assert task.prompt.tokens == (3, ARITH_PLUS, 4, ARITH_EQ)
    assert make_negative_prompt(task.prompt, "wrong_suffix", "arith").tokens == (3, ARITH_PLUS, 4, ARITH_EQ, ARITH_WRONG)
    assert make_negative_prompt(task.prompt, "null_prompt", "arith").tokens == (ARITH_ANSWER,)
    assert make_negative_prompt(task.prompt, "no_context", "arith").tokens == (ARITH_PLUS, ARITH_EQ)
    grid = grid_task_set().tasks[0]
    neg = make_negative_prompt(grid.prompt, "empty", "grid")
    assert neg.tokens == () and neg.kind == "negative" and neg.task_id == grid.task_id


@pytest.mark.parametrize("strategy,task_type", [("empty", "arith"), ("wrong_suffix", "grid"),
                                                ("null_prompt", "grid"), ("bogus", "arith")])
def test_invalid_strategy_pairing(strategy, task_type):
    with pytest.raises(InvalidInputError):
        make_negative_prompt(PromptEncoding((1, 2)), strategy, task_type)


def test_negative_never_equals_positive():
    for ts in (arith_task_set(), grid_task_set()):
        for task in ts.tasks:
            for strategy in TASK_STRATEGIES[ts.task_type]:
                pair = prompt_pair(task, strategy)
                assert pair.negative.tokens != pair.positive.tokens
                assert pair.strategy in STRATEGIES


def test_task_json_roundtrip(tmp_path):
    for ts in (arith_task_set(ops=("*",)), grid_task_set()):
        path = tmp_path / f"{ts.task_type}.json"
        save_tasks(ts, path)
        back = load_tasks(path)
        assert back.task_type == ts.task_type
        assert [t.spec for t in back.tasks] == [t.spec for t in ts.tasks]
        assert [t.prompt for t in back.tasks] == [t.prompt for t in ts.tasks]
