import math
import sys

import pytest

from peumlab.family import PeumFamily, tent


def quadratic_family():
    """Nonlinear branches 1.2 t x - 0.4 t x^2 and 0.8 t - 0.4 t x - 0.4 t x^2."""
    return PeumFamily(c=0.5, left_table=[[0, 0, 0], [0, 1.2, -0.4]],
                      right_table=[[0, 0, 0], [0.8, -0.4, -0.4]], lam=1.2, t_range=(1.5, 2.0),
                      name="quadratic")


def skew_tent_family():
    """Affine, asymmetric: 1.25 t x on [0, 0.4], t (1 - x) / 1.2 on [0.4, 1]."""
    return PeumFamily(c=0.4, left_table=[[0, 0], [0, 1.25]],
                      right_table=[[0, 0], [1 / 1.2, -1 / 1.2]], lam=1.2,
                      t_range=(1.5, 1.6), name="skew-tent")


def frozen_family():
    """f_t = 2x / 2(1-x) for every t: no parameter dependence."""
    return PeumFamily(c=0.5, left_table=[[0, 2]], right_table=[[2, -2]], lam=2.0,
                      t_range=(1.0, 2.0), name="frozen")


@pytest.fixture
def tent_family():
    return tent()


@pytest.fixture
def quad():
    return quadratic_family()


@pytest.fixture
def skew():
    return skew_tent_family()


@pytest.fixture
def frozen():
    return frozen_family()


SQRT2 = math.sqrt(2.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
