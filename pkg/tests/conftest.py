import numpy as np
import pytest
import torch

from wordimportance import testbed
from wordimportance.data import Vocab, make_pair
from wordimportance.seqmodel import LinearTestModel, ModelConfig, ToyModel, TrainConfig, train

torch.set_num_threads(1)


def small_vocab(n_words: int = 12) -> Vocab:
    vocab = Vocab()
    for i in range(n_words):
        vocab.add(f"w{i}", count=n_words - i)
    return vocab


@pytest.fixture(scope="session")
def vocab12() -> Vocab:
    return small_vocab(12)


@pytest.fixture(scope="session")
def untrained_model(vocab12) -> ToyModel:
    model = ToyModel(ModelConfig(len(vocab12), embed_dim=6, hidden_dim=8, seed=3), vocab12)
    model.eval()
    return model


@pytest.fixture(scope="session")
def linear_model(vocab12) -> LinearTestModel:
    return LinearTestModel(len(vocab12), embed_dim=5, seed=1, vocab=vocab12)


@pytest.fixture(scope="session")
def copy_setup():
    """Copy-task model: ~500-word vocabulary, 2000 training pairs, 300 held out."""
    examples = testbed.copy_corpus(2300, vocab_size=496, seed=0)
    vocab = Vocab.build([e.source for e in examples] + [e.target for e in examples])
    pairs = [make_pair(e.source, e.target, vocab) for e in examples]
    model = train(pairs[:2000], TrainConfig(steps=1500, seed=0), vocab)
    return model, vocab, examples[2000:], pairs[2000:]


@pytest.fixture(scope="session")
def toy_setup():
    """Toy-language model and its held-out test examples."""
    examples = testbed.toy_language(2300, seed=0)
    vocab = Vocab.build([e.source for e in examples] + [e.target for e in examples])
    pairs = [make_pair(e.source, e.target, vocab) for e in examples]
    model = train(pairs[:2000], TrainConfig(steps=1500, seed=0), vocab)
    return model, vocab, examples[2000:], pairs[2000:]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; lines are echoed in the terminal summary."""
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
