import numpy as np
import pytest

from collabfs.synthetic import PlantedSpec, make_planted


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_planted():
    spec = PlantedSpec(n_items=120, n_features=80, n_planted=12, n_users=400,
                       interactions_per_user=10)
    return make_planted(spec, seed=5)


def random_pd_blend(rng, n, alpha):
    """(1 - alpha) I + alpha * cosine Gram of a random nonnegative matrix."""
    X = rng.random((3 * n, n)) * (rng.random((3 * n, n)) < 0.3)
    norms = np.linalg.norm(X, axis=0)
    norms[norms == 0] = 1.0
    Xn = X / norms
    sim = Xn.T @ Xn
    np.fill_diagonal(sim, 1.0)
    return (1 - alpha) * np.eye(n) + alpha * sim


# one (criterion, passed, detail) entry per acceptance check, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
