import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# (criterion id, passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(20241019)


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the end-of-run summary.

    Usage: ``with criterion("A1", limit_s=10) as note: ... note("detail")``.
    The runtime limit is checked after the body finishes.
    """

    @contextmanager
    def record(name, limit_s=None):
        details = []
        start = time.perf_counter()
        try:
            yield details.append
            elapsed = time.perf_counter() - start
            details.append(f"{elapsed:.1f}s")
            if limit_s is not None:
                assert elapsed < limit_s, f"{name} took {elapsed:.1f}s, limit {limit_s}s"
        except BaseException as exc:
            ACCEPTANCE.append((name, False, "; ".join(details + [str(exc).splitlines()[0] if str(exc) else type(exc).__name__])))
            raise
        ACCEPTANCE.append((name, True, "; ".join(details)))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{name} {'PASS' if ok else 'FAIL'}  {detail}")
