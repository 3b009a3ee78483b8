import numpy as np
import pytest

from hypodiff.model import ThetaBlocks, get_model
from hypodiff.quasilik import eval_Gn
from hypodiff.simulate import SamplePath, SamplingDesign, simulate_path

TRUTH_LINEAR = ThetaBlocks([1.0], [1.0, 1.0], [1.0])
TRUTH_FHN = ThetaBlocks([0.3], [1.5, 0.8], [0.1, 0.0])


@pytest.fixture(scope="session")
def linear():
    return get_model("linear")


@pytest.fixture(scope="session")
def fhn():
    return get_model("fhn")


@pytest.fixture(scope="session")
def linear_path(linear):
    """One stationary-start linear path with n = 1000, h = 0.1."""
    return simulate_path(linear, TRUTH_LINEAR, SamplingDesign(n=1000, h=0.1, seed=11))


def exact_fit_path(model, theta, z0, h, n):
    """Path whose increments are exactly h A and h G_n, so every D_j vanishes."""
    z = np.empty((n + 1, model.dims.d_Z))
    z[0] = z0
    dx = model.dims.d_X
    for j in range(n):
        zj = z[j : j + 1]
        z[j + 1, :dx] = z[j, :dx] + h * model.A(zj, theta.theta2)[0]
        z[j + 1, dx:] = z[j, dx:] + h * eval_Gn(model, zj, h, theta.theta1, theta.theta2, theta.theta3)[0]
    return SamplePath(h=h, states=z, d_X=dx)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
