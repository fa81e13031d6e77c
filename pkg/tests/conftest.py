import json
from importlib import resources

import pytest

from sharpflow.coefficients import parse_config


def shipped(name):
    with (resources.files("sharpflow") / "configs" / f"{name}.json").open() as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def affine_cfg():
    return shipped("fractional_affine")


@pytest.fixture(scope="session")
def affine(affine_cfg):
    """Tied set n = 2 + u, a_tilde = 1, m_tilde = 1, i = 1."""
    return parse_config(affine_cfg)


@pytest.fixture(scope="session")
def quadratic():
    """Tied set n = 2 + u + 0.2 u^2."""
    return parse_config(shipped("fractional_quadratic"))


@pytest.fixture(scope="session")
def isd():
    """Constant coupling with A2tau = 1."""
    return parse_config(shipped("isd"))


def tied_config(n_coeffs, i=1, a_tilde=1.0, m_coeffs=(1.0,)):
    return parse_config({"m_tilde": {"type": "poly", "coeffs": list(m_coeffs)}, "i": i,
                         "n": {"type": "poly", "coeffs": list(n_coeffs)},
                         "a2tau": {"type": "tied", "a_tilde": a_tilde}})


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
