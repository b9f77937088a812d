import numpy as np
import pytest

from rise.core import MaskedSeries

_ACCEPTANCE = pytest.StashKey[list]()


def random_series(rng, n=12, p_obs=0.6, series_id="s", low=20.0, high=80.0, irregular=True):
    """Series with at least two observed values, random gaps and random missingness."""
    t = np.cumsum(rng.uniform(0.5, 1.5, n)) if irregular else np.arange(n, dtype=float)
    x = np.round(rng.uniform(low, high, n), 2)
    m = (rng.random(n) < p_obs).astype(int)
    m[0] = 1
    m[n // 2] = 1
    return MaskedSeries(t, x, m, series_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion: int, ok: bool, detail: str) -> bool:
        lines.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(lines[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
