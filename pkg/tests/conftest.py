import numpy as np
import pytest

from app.ml.data import Conversation
from app.ml.mathcore import Rng
from app.schemas import Dims


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests marked slow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def desk_dims():
    return Dims(word_embed=6, sentence=6, knowledge=6, conversation=6)


def make_conversations(count, turns=4, seed=0):
    """Conversations with unique responses so negatives are always available."""
    gen = np.random.default_rng(seed)
    words = [f"w{n}" for n in range(30)]
    convs = []
    for n in range(count):
        utterances = [[words[k] for k in gen.integers(0, len(words), 3)] for _ in range(turns - 1)]
        utterances.append([f"reply{n}", words[n % len(words)]])
        convs.append(Conversation(utterances))
    return convs


@pytest.fixture
def conversations():
    return make_conversations(100)


@pytest.fixture(autouse=True)
def no_ledger(monkeypatch):
    monkeypatch.setenv("RECALLCHAT_RUN_LEDGER_URL", "")
