import numpy as np
import pytest

from fairmatch import dataio


def make_dataset(n=200, d=4, seed=0, bias=1.0, name="toy"):
    """Scaled synthetic dataset whose label depends on the features and (by ``bias``) on PA."""
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    pa = (rng.random(n) < 0.5).astype(int)
    pa[:2] = [0, 1]
    logit = 3 * (X[:, 0] - 0.5) + bias * (pa - 0.5) + rng.normal(0, 0.5, n)
    y = (logit > 0).astype(int)
    y[:2] = [0, 1]
    schema = dataio.DatasetSchema(name, (), "pa", 1, "y", 1, pa_name="pa")
    return dataio.Dataset(np.column_stack([X, pa]), y, pa, np.arange(n), schema)


@pytest.fixture
def toy():
    return make_dataset()


def ensure_dataset(name):
    """Path of a dataset CSV, fetching it on first use; skips the test when offline."""
    from fairmatch import fetch

    schema = dataio.load_schema(name)
    try:
        return dataio.dataset_path(schema)
    except FileNotFoundError:
        pass
    try:
        return fetch.fetch(name)
    except Exception as exc:  # network failures
        pytest.skip(f"{name} unavailable: {exc}")


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
