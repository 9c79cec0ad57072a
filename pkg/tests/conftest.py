import numpy as np
import pytest

from morphfit.model import generate_synthetic_model
from morphfit.synthetic import face_texture
from morphfit.texture import compute_isomap


@pytest.fixture(scope="session")
def small_model():
    return generate_synthetic_model(7, 500, 20)


@pytest.fixture(scope="session")
def head_model():
    return generate_synthetic_model(1, 1200, 20)


@pytest.fixture(scope="session")
def head_chart(head_model):
    return compute_isomap(head_model)


@pytest.fixture(scope="session")
def head_texture(head_model, head_chart):
    return face_texture(head_model, head_chart, 256)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance report ------------------------------------------------------

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
