"""Synthetic tasks with programmatic verifiers, and negative-prompt builders.

Two task families:

* ``arith``: single-digit ``a + b`` / ``a * b`` problems. The response is the
  decimal answer followed by EOS.
* ``grid``: an H x W canvas of tokens (background or colored shapes) checked
  against a list of compositional constraints, loosely following the object /
  count / color / position / attribution categories of text-to-image benchmarks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from gcpo_lab.numerics import InvalidInputError
from gcpo_lab.policy import EOS, PromptEncoding

# arithmetic vocabularies
ARITH_VOCAB = 11  # EOS + ten digits; digit d is token d + 1
ARITH_PLUS, ARITH_TIMES, ARITH_EQ, ARITH_ANSWER, ARITH_WRONG = 10, 11, 12, 13, 14
ARITH_PROMPT_VOCAB = 15
ARITH_MAX_LEN = 3
OPERATORS = {"+": ARITH_PLUS, "*": ARITH_TIMES}

# grid vocabularies
COLORS = ("red", "green", "blue")
SHAPES = ("square", "circle")
GRID_BG = 1
GRID_VOCAB = 2 + len(COLORS) * len(SHAPES)
RELATIONS = ("left_of", "right_of", "above", "below")
_GRID_WORDS = [*COLORS, *SHAPES, "1", "2", "3", "4", *RELATIONS, "and", "all"]
GRID_PROMPT_IDS = {w: i for i, w in enumerate(_GRID_WORDS)}
GRID_PROMPT_VOCAB = len(_GRID_WORDS)

CONSTRAINT_KINDS = ("presence", "count", "color", "position", "attribution")
STRATEGIES = ("empty", "null_prompt", "wrong_suffix", "no_context")
TASK_STRATEGIES = {"grid": ("empty",), "arith": ("no_context", "null_prompt", "wrong_suffix")}


def object_token(color: str, shape: str) -> int:
    return 2 + COLORS.index(color) * len(SHAPES) + SHAPES.index(shape)


def decode_cell(token: int) -> tuple[str, str] | None:
    """(color, shape) for an object token; None for background or EOS."""
    if token < 2:
        return None
    idx = token - 2
    return COLORS[idx // len(SHAPES)], SHAPES[idx % len(SHAPES)]


@dataclass(frozen=True)
class ArithSpec:
    a: int
    b: int
    op: str = "+"

    def __post_init__(self):
        if not (0 <= self.a <= 9 and 0 <= self.b <= 9):
            raise InvalidInputError("operands must be single digits")
        if self.op not in OPERATORS:
            raise InvalidInputError(f"operator must be one of {tuple(OPERATORS)}")

    @property
    def answer(self) -> int:
        return self.a + self.b if self.op == "+" else self.a * self.b

    def answer_tokens(self) -> tuple[int, ...]:
        return tuple(int(c) + 1 for c in str(self.answer)) + (EOS,)

    def prompt_tokens(self) -> tuple[int, ...]:
        return (self.a, OPERATORS[self.op], self.b, ARITH_EQ)


@dataclass(frozen=True)
class GridConstraint:
    kind: str
    shape: str
    color: str | None = None
    count: int | None = None
    relation: str | None = None
    other_shape: str | None = None
    other_color: str | None = None

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise InvalidInputError(f"unknown constraint kind {self.kind!r}")
        if self.shape not in SHAPES:
            raise InvalidInputError(f"unknown shape {self.shape!r}")
        for c in (self.color, self.other_color):
            if c is not None and c not in COLORS:
                raise InvalidInputError(f"unknown color {c!r}")
        if self.kind == "count" and (self.count is None or not 1 <= self.count <= 4):
            raise InvalidInputError("count constraints need a count in 1..4")
        if self.kind == "color" and self.color is None:
            raise InvalidInputError("color constraints need a color")
        if self.kind == "position":
            if self.relation not in RELATIONS or self.other_shape not in SHAPES:
                raise InvalidInputError("position constraints need a relation and other_shape")
        if self.kind == "attribution":
            if None in (self.color, self.other_color) or self.other_shape not in SHAPES:
                raise InvalidInputError("attribution constraints need two colored shapes")

    def words(self) -> list[str]:
        col = [self.color] if self.color else []
        if self.kind == "presence":
            return [*col, self.shape]
        if self.kind == "count":
            return [str(self.count), *col, self.shape]
        if self.kind == "color":
            return ["all", self.shape, self.color]
        if self.kind == "position":
            return [self.shape, self.relation, self.other_shape]
        return [self.color, self.shape, self.other_color, self.other_shape]

    def satisfied(self, grid: np.ndarray) -> bool:
        cells = [[decode_cell(int(t)) for t in row] for row in grid]

        def where(shape, color=None):
            return [(i, j) for i, row in enumerate(cells) for j, c in enumerate(row)
                    if c is not None and c[1] == shape and (color is None or c[0] == color)]

        if self.kind == "presence":
            return len(where(self.shape, self.color)) > 0
        if self.kind == "count":
            return len(where(self.shape, self.color)) == self.count
        if self.kind == "color":
            hits = where(self.shape)
            return bool(hits) and all(cells[i][j][0] == self.color for i, j in hits)
        if self.kind == "attribution":
            return bool(where(self.shape, self.color)) and bool(where(self.other_shape, self.other_color))
        a, b = where(self.shape), where(self.other_shape)
        if not a or not b:
            return False
        ra, ca = np.mean(a, axis=0)
        rb, cb = np.mean(b, axis=0)
        return {"left_of": ca < cb, "right_of": ca > cb, "above": ra < rb, "below": ra > rb}[self.relation]


@dataclass(frozen=True)
class GridSpec:
    height: int = 4
    width: int = 4
    constraints: tuple[GridConstraint, ...] = ()
    binary: bool = False

    def prompt_tokens(self) -> tuple[int, ...]:
        words: list[str] = []
        for i, c in enumerate(self.constraints):
            if i:
                words.append("and")
            words.extend(c.words())
        return tuple(GRID_PROMPT_IDS[w] for w in words)


def grid_reward(spec: GridSpec, response) -> float:
    """Fraction of satisfied constraints (or all-or-nothing if ``spec.binary``).

    EOS tokens inside a grid count as empty cells.
    """
    resp = np.asarray(response, dtype=np.int64)
    if resp.shape != (spec.height * spec.width,):
        raise InvalidInputError(f"grid response must have {spec.height * spec.width} tokens, got {resp.size}")
    if not spec.constraints:
        return 1.0
    grid = resp.reshape(spec.height, spec.width)
    hits = sum(c.satisfied(grid) for c in spec.constraints)
    if spec.binary:
        return float(hits == len(spec.constraints))
    return hits / len(spec.constraints)


def parse_arith_response(response) -> int | None:
    tokens = list(response)
    if EOS not in tokens:
        return None
    digits = tokens[: tokens.index(EOS)]
    if not digits or any(not 1 <= t <= 10 for t in digits):
        return None
    text = "".join(str(t - 1) for t in digits)
    if len(text) > 1 and text[0] == "0":
        return None
    return int(text)


def arith_reward(spec: ArithSpec, response) -> float:
    return 1.0 if parse_arith_response(response) == spec.answer else 0.0


def make_negative_prompt(positive: PromptEncoding, strategy: str, task_type: str) -> PromptEncoding:
    if strategy not in STRATEGIES:
        raise InvalidInputError(f"unknown negative-prompt strategy {strategy!r}")
    allowed = TASK_STRATEGIES.get(task_type)
    if allowed is None:
        raise InvalidInputError(f"unknown task type {task_type!r}")
    if strategy not in allowed:
        raise InvalidInputError(f"strategy {strategy!r} is not available for {task_type} tasks; use one of {allowed}")
    if strategy == "empty":
        tokens: tuple[int, ...] = ()
    elif strategy == "null_prompt":
        tokens = (ARITH_ANSWER,)
    elif strategy == "wrong_suffix":
        tokens = positive.tokens + (ARITH_WRONG,)
    else:
        tokens = tuple(t for t in positive.tokens if t > 9)
    return PromptEncoding(tokens, "negative", positive.task_id)


@dataclass(frozen=True)
class Task:
    task_id: int
    task_type: str
    spec: ArithSpec | GridSpec
    prompt: PromptEncoding

    def reward(self, response) -> float:
        if self.task_type == "arith":
            return arith_reward(self.spec, response)
        return grid_reward(self.spec, response)

    def negative(self, strategy: str) -> PromptEncoding:
        return make_negative_prompt(self.prompt, strategy, self.task_type)


@dataclass(frozen=True)
class PromptPair:
    positive: PromptEncoding
    negative: PromptEncoding
    strategy: str

    def __post_init__(self):
        if self.positive.task_id != self.negative.task_id:
            raise InvalidInputError("prompt pair members belong to different tasks")


def prompt_pair(task: Task, strategy: str) -> PromptPair:
    return PromptPair(task.prompt, task.negative(strategy), strategy)


@dataclass
class TaskSet:
    task_type: str
    tasks: list[Task] = field(default_factory=list)

    def __post_init__(self):
        if self.task_type not in TASK_STRATEGIES:
            raise InvalidInputError(f"unknown task type {self.task_type!r}")
        if not self.tasks:
            raise InvalidInputError("task set is empty")
        if any(t.task_type != self.task_type for t in self.tasks):
            raise InvalidInputError("mixed task types in one task set")

    @property
    def vocab_size(self) -> int:
        return ARITH_VOCAB if self.task_type == "arith" else GRID_VOCAB

    @property
    def prompt_vocab_size(self) -> int:
        return ARITH_PROMPT_VOCAB if self.task_type == "arith" else GRID_PROMPT_VOCAB

    @property
    def max_len(self) -> int:
        if self.task_type == "arith":
            return ARITH_MAX_LEN
        spec = self.tasks[0].spec
        return spec.height * spec.width

    @property
    def stop_at_eos(self) -> bool:
        return self.task_type == "arith"

    def __len__(self) -> int:
        return len(self.tasks)


def _make_task(task_id: int, task_type: str, spec, prompt_tokens=None) -> Task:
    tokens = spec.prompt_tokens() if prompt_tokens is None else tuple(prompt_tokens)
    return Task(task_id, task_type, spec, PromptEncoding(tokens, "positive", task_id))


def arith_task_set(ops: tuple[str, ...] = ("+", "*"), operands=range(10)) -> TaskSet:
    tasks = []
    for op in ops:
        for a in operands:
            for b in operands:
                tasks.append(_make_task(len(tasks), "arith", ArithSpec(a, b, op)))
    return TaskSet("arith", tasks)


def default_grid_specs(height: int = 4, width: int = 4, binary: bool = False) -> list[GridSpec]:
    C = GridConstraint
    groups = [
        (C("presence", "square", "red"),),
        (C("count", "circle", count=2),),
        (C("color", "square", "blue"),),
        (C("position", "square", relation="left_of", other_shape="circle"),),
        (C("attribution", "square", "red", other_shape="circle", other_color="blue"),),
        (C("count", "square", "red", count=2), C("presence", "circle", "green"),
         C("position", "circle", relation="above", other_shape="square")),
        (C("count", "square", count=3), C("color", "circle", "green")),
        (C("presence", "circle", "blue"), C("count", "square", "green", count=1)),
    ]
    return [GridSpec(height, width, g, binary) for g in groups]


def grid_task_set(height: int = 4, width: int = 4, binary: bool = False) -> TaskSet:
    specs = default_grid_specs(height, width, binary)
    return TaskSet("grid", [_make_task(i, "grid", s) for i, s in enumerate(specs)])


# --- JSON task files ---

def task_to_json(task: Task) -> dict:
    obj = {"task_id": task.task_id, "task_type": task.task_type, "prompt_tokens": list(task.prompt.tokens)}
    if task.task_type == "arith":
        obj.update(a=task.spec.a, b=task.spec.b, op=task.spec.op)
    else:
        obj.update(height=task.spec.height, width=task.spec.width, binary=task.spec.binary,
                   constraints=[{k: v for k, v in asdict(c).items() if v is not None}
                                for c in task.spec.constraints])
    return obj


def task_from_json(obj: dict, default_id: int = 0) -> Task:
    task_type = obj.get("task_type")
    task_id = obj.get("task_id", default_id)
    if task_type == "arith":
        spec = ArithSpec(int(obj["a"]), int(obj["b"]), obj.get("op", "+"))
    elif task_type == "grid":
        cons = tuple(GridConstraint(**c) for c in obj.get("constraints", []))
        spec = GridSpec(int(obj.get("height", 4)), int(obj.get("width", 4)), cons, bool(obj.get("binary", False)))
    else:
        raise InvalidInputError(f"unknown task_type {task_type!r}")
    return _make_task(task_id, task_type, spec, obj.get("prompt_tokens"))


def save_tasks(task_set: TaskSet, path) -> None:
    Path(path).write_text(json.dumps([task_to_json(t) for t in task_set.tasks], indent=1) + "\n")


def load_tasks(path) -> TaskSet:
    items = json.loads(Path(path).read_text())
    tasks = [task_from_json(obj, i) for i, obj in enumerate(items)]
    types = {t.task_type for t in tasks}
    if len(types) != 1:
        raise InvalidInputError("a task file must contain exactly one task type")
    return TaskSet(types.pop(), tasks)


def build_task_set(task: str, **kwargs) -> TaskSet:
    if task == "arith":
        return arith_task_set(**kwargs)
    if task == "grid":
        return grid_task_set(**kwargs)
    return load_tasks(task)
