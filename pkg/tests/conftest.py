import sys
from functools import lru_cache

import numpy as np
import pytest

from anosovlab.geometry import ConstantCurvature, Perturbed, default_group


@pytest.fixture(scope="session")
def group():
    return default_group()


@pytest.fixture(scope="session")
def hyp(group):
    return ConstantCurvature(1.0, group)


@lru_cache(maxsize=None)
def perturbed(eps=0.05):
    """Shared perturbed model; hypothesis tests cannot take fixtures."""
    return Perturbed(default_group(), eps)


@pytest.fixture(scope="session")
def pert():
    return perturbed()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_disk_points(rng, n, radius):
    """Points with hyperbolic distance <= radius from 0, uniform in (r, angle)."""
    r = radius * rng.random(n)
    return np.tanh(r / 2.0) * np.exp(2j * np.pi * rng.random(n))


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in order, when the suite ran."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
