import numpy as np
import pytest

from ubsc.synth import SynthSpec, synth_corpus

# Filled by test_acceptance.py; printed at the end of the session.
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(SynthSpec(speakers=6, utts=10, frames=60, dim=5,
                                  between=1.0, within=1.0, channel=0.1, seed=3))
