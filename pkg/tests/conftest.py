import numpy as np
import pytest

from dirnet.model import LSTM, VANILLA, init_network
from dirnet.rnnrt import bundled_corpus


@pytest.fixture(scope="session")
def corpus():
    return bundled_corpus()


@pytest.fixture(scope="session")
def small_corpus(corpus):
    return corpus[:4000]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=[VANILLA, LSTM])
def kind(request):
    return request.param


def tiny_model(kind=LSTM, widths=(8, 8), vocab=b"abcdefgh", seed=0, embed_dim=None):
    return init_network(vocab, list(widths), kind, seed, embed_dim or widths[0])


_CRITERIA = pytest.StashKey[dict]()
N_CRITERIA = 11


@pytest.fixture
def criterion(request):
    """``record(num, ok, detail)`` logs one acceptance line for the summary."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def record(num: int, ok: bool, detail: str):
        store[num] = (bool(ok), detail)
        print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, None)
    if not store:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in range(1, N_CRITERIA + 1):
        if num in store:
            ok, detail = store[num]
            terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {num:2d}: NOT RUN")
