import numpy as np
import pytest

from gcpo_lab.policy import PolicyShape, PromptEncoding, init_params


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_shape():
    return PolicyShape(vocab_size=5, prompt_vocab_size=6, context=4, embed_dim=3, hidden=4)


@pytest.fixture
def small_params(small_shape, rng):
    return init_params(small_shape, rng, out_scale=0.5)


@pytest.fixture
def prompt():
    return PromptEncoding((1, 2, 2), "positive", 0)


@pytest.fixture
def neg_prompt():
    return PromptEncoding((3,), "negative", 0)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for name, ok, detail in test_acceptance.RESULTS:
            terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
