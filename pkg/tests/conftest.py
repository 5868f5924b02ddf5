import warnings

import numpy as np
import pytest

from curse_lab.envgen import EnvironmentConfig, build_causal_model, sample_history

SMALL_ENV = dict(n_fit=3000, rf_trees=20)


@pytest.fixture(scope="session")
def small_env():
    return EnvironmentConfig(**SMALL_ENV)


@pytest.fixture(scope="session")
def causal(small_env):
    return build_causal_model(small_env, 11)


@pytest.fixture(scope="session")
def train(causal, small_env):
    return sample_history(causal, small_env, 3000, 12).dataset


@pytest.fixture(scope="session")
def test_set(causal, small_env):
    return sample_history(causal, small_env, 300, 13, restriction="free-only").dataset


@pytest.fixture(autouse=True)
def _quiet_numba():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", category=DeprecationWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(str(k).split("-")[0]), str(k))):
        ok, detail = results[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
