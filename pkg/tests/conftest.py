import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vesselgrow import synthetic  # noqa: E402
from vesselgrow.forest import ForestParams, train  # noqa: E402
from vesselgrow.featureset import LabeledDataset, build_training_rows  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_images(n, size=16, seed=0, levels=256):
    """Integer-valued random images; ``levels`` < 256 produces many ties."""
    gen = np.random.default_rng(seed)
    step = 255 // (levels - 1)
    return [gen.integers(0, levels, (size, size)).astype(np.float64) * step for _ in range(n)]


@pytest.fixture(scope="session")
def small_entries():
    return synthetic.synthetic_dataset(3, 48, seed=5)


@pytest.fixture(scope="session")
def small_model(small_entries):
    ds = LabeledDataset.concat(
        build_training_rows(e, 0.5, seed=1, conn_dropout=0.25) for e in small_entries[:2]
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return train(ds, ForestParams(n_trees=8, seed=4))


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: (len(s.split()[1]), s)):
        terminalreporter.write_line(line)
