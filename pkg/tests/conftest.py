import json
import pathlib
import warnings

import numpy as np
import pytest

from epsel import PriorSpec

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    # keep trial execution in-process so monkeypatching and timing are predictable
    monkeypatch.setenv("EPSEL_THREADS", "1")


@pytest.fixture(scope="session")
def mmse_oracle():
    return json.loads((FIXTURES / "mmse_oracle.json").read_text())


@pytest.fixture(scope="session")
def sparse_prior():
    return PriorSpec(0.1, 10.0)


@pytest.fixture(scope="session")
def gaussian_prior():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return PriorSpec(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def verdict(capsys):
    """Record and print a one-line PASS/FAIL verdict for an acceptance criterion."""

    def emit(name, passed, detail):
        line = f"{name} {'PASS' if passed else 'FAIL'}: {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
