import numpy as np
import pytest

from helpers import ACCEPTANCE_LINES, TINY_SYNTH
from sdbdetect.corpus import SynthConfig, synth_corpus


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny_corpus")
    return synth_corpus(SynthConfig(**TINY_SYNTH), 11, out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
