import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from erislab.channel import amplitude_flip, random_isometry_kraus
from erislab.driver import FiniteCycleDriver
from erislab.eris import Eris
from erislab.fields import RandomField

settings.register_profile("erislab", deadline=None, derandomize=True, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("erislab")

# --- shared random objects ------------------------------------------------------------------------


def random_matrix(d, rng):
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


def random_hermitian(d, rng):
    G = random_matrix(d, rng)
    return 0.5 * (G + G.conj().T)


def random_state(d, rng):
    G = random_matrix(d, rng)
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def random_projection(d, r, rng):
    Q, _ = np.linalg.qr(random_matrix(d, rng))
    B = Q[:, :r]
    return B @ B.conj().T


def random_field(n, d, rng):
    return RandomField(np.stack([random_matrix(d, rng) for _ in range(n)]))


def random_state_field(n, d, rng):
    return RandomField(np.stack([random_state(d, rng) for _ in range(n)]))


def random_eris(n, d, rng, kraus_count=None):
    channels = {}
    for w in range(n):
        k = kraus_count or int(rng.integers(1, 4))
        channels[w] = random_isometry_kraus(d, k, rng)
    return Eris(FiniteCycleDriver(n), channels)


def flip_eris():
    return Eris(FiniteCycleDriver(2), {0: amplitude_flip(2), 1: amplitude_flip(2)})


def cyclic_field():
    return RandomField(np.stack([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]))


@pytest.fixture
def rng():
    return np.random.default_rng(20260415)


# --- acceptance summary ---------------------------------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
