import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fusionkit.data_model import BlockSpec, stack
from fusionkit.simulate import sample_generator

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES = {}


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def split_files(w, n_a, spec):
    """Stack the first n_a joint rows as file A and the rest as file B."""
    a = np.hstack([w[:n_a, spec.sx], w[:n_a, spec.sy]])
    b = np.hstack([w[n_a:, spec.sx], w[n_a:, spec.sz]])
    return stack(a, b, spec)


def make_dataset(gen, n_a, n_b, seed):
    """Matching problem drawn from a generator; returns (dataset, labels)."""
    spec = BlockSpec.default(*gen.dims)
    w, labels = sample_generator(gen, n_a + n_b, np.random.default_rng(seed))
    return split_files(w, n_a, spec), labels


@pytest.fixture
def spec111():
    return BlockSpec.default()
