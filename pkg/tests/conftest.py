import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from latentrom import ModelParams

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_params(rng, p, l, *, scale=0.5, dt=0.1, cell="midpoint-stable", z0=False, z_init=False,  # noqa: E741
                  theta=None):
    """Random parameters with O(scale) entries."""
    return ModelParams(
        theta_d=scale * rng.standard_normal(p) if theta is None else theta,
        C=scale * rng.standard_normal((p, p)),
        R=scale * rng.standard_normal((p, l)),
        dt=dt,
        z0=0.1 * rng.standard_normal(p) if z0 else None,
        z_init=0.1 * rng.standard_normal(p) if z_init else None,
        cell=cell,
    )


def random_spd(rng, n, shift=0.0):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + shift * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
