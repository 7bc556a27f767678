import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def ssf():
    from unobs import hsio
    from unobs.spectral_core import split_ssf

    return split_ssf(hsio.shipped_ssf())


@pytest.fixture(scope="session")
def bench_run(tmp_path_factory):
    """Benchmark workspace; training runs are created on first use and cached."""
    import harness

    work = tmp_path_factory.mktemp("bench")
    return harness.Bench(work)


def pytest_terminal_summary(terminalreporter):
    harness = sys.modules.get("harness")
    if not harness or not harness.REPORTED:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(harness.REPORTED):
        res = harness.REPORTED[k]
        terminalreporter.write_line(res.line)
        for note in res.notes:
            terminalreporter.write_line("    note: " + note)
