import numpy as np
import pytest

from cfustmix import CfustParams, MixtureModel, load_geyser, load_iris

VERSICOLOR_PUBLISHED = CfustParams(
    mu=np.array([3.415878, 4.886890]),
    sigma=np.array([[0.006138577, -0.007283746], [-0.007283746, 0.020649780]]),
    delta=np.array([[-0.4901844, -0.37242352], [-0.9067630, 0.03643873]]),
    dof=87.47343,
)


@pytest.fixture(scope="session")
def versicolor():
    values, _ = load_iris(["Sepal.Width", "Petal.Length"], species="versicolor")
    return values


@pytest.fixture(scope="session")
def iris():
    return load_iris()


@pytest.fixture(scope="session")
def geyser():
    return load_geyser()


def random_params(rng, p, q, dof_range=(3.0, 20.0), delta_scale=1.0):
    A = rng.normal(size=(p, p))
    sigma = A @ A.T + 0.5 * np.eye(p)
    return CfustParams(rng.normal(size=p), sigma, delta_scale * rng.normal(size=(p, q)), rng.uniform(*dof_range))


def three_component_model():
    """Three-component bivariate mixture with pro (0.25, 0.25, 0.5)."""
    comps = (
        CfustParams(np.array([17.0, 19.0]), np.eye(2), np.array([[3.0, 2.0], [0.0, 1.5]]), 1.0),
        CfustParams(np.array([5.0, 22.0]), np.diag([2.0, 1.0]), np.diag([5.0, 10.0]), 2.0),
        CfustParams(np.array([6.0, 10.0]), np.array([[3.0, 7.0], [7.0, 24.0]]), np.array([[2.0, 5.0], [0.0, 0.0]]), 3.0),
    )
    return MixtureModel(comps, np.array([0.25, 0.25, 0.5]))


ACCEPTANCE = {}


def record_criterion(number, ok, detail):
    """Store a pass/fail line for the acceptance summary and print it."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
