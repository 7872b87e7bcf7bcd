import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from toolsense.core import Source  # noqa: E402
from toolsense.features import featurize_runs  # noqa: E402
from toolsense.synth import DatasetSpec, generate_dataset  # noqa: E402

# fixed example sequence so every run of the suite checks the same inputs
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

CRITERIA: list[str] = []


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Log one acceptance criterion outcome; printed again in the terminal summary."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {title}" + (f" ({detail})" if detail else "")
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_spec():
    """Two human subjects and one robot, three 60 s runs per task each."""
    return DatasetSpec.uniform(human_subjects=2, human_runs_per_task=3, robot_subjects=1,
                               robot_runs_per_task=3, duration=60.0)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate_dataset(small_spec, seed=7)


@pytest.fixture(scope="session")
def small_table(small_dataset):
    runs, _ = small_dataset
    table, _ = featurize_runs(runs)
    return table


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def human_runs(small_dataset):
    return [r for r in small_dataset[0] if r.source is Source.HUMAN]
