import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from trajid.excitation import ExcitationSpec, HiddenModelSpec, generate_dataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Exact PD hidden model, no sensor noise: the identification oracle.
NOISELESS_PD = HiddenModelSpec(kind="pd", noise_q=0.0, noise_qdot=0.0)


@pytest.fixture(scope="session")
def short_noiseless():
    """2 s of noiseless data from the exact PD hidden model."""
    return generate_dataset(ExcitationSpec(duration=2.0, seed=11), NOISELESS_PD)


@pytest.fixture(scope="session")
def short_noisy():
    """2 s of data from the default (servo, noisy) hidden model."""
    return generate_dataset(ExcitationSpec(duration=2.0, seed=12))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, in order, when that suite ran."""
    import sys
    module = sys.modules.get("tests.test_acceptance")
    verdicts = getattr(module, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        terminalreporter.write_line(verdicts[n])
