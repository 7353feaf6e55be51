import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ldwpdm import synth
from ldwpdm.dataio import extract_events
from ldwpdm.hmm import train_pdm

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_spd(rng, d, scale=1.0):
    A = rng.standard_normal((d, d))
    return scale * (A @ A.T / d + 0.5 * np.eye(d))


def random_gmm_params(rng, K, d):
    w = rng.dirichlet(np.ones(K) * 2.0)
    mu = rng.normal(0.0, 3.0, (K, d))
    cov = np.stack([random_spd(rng, d) for _ in range(K)])
    return w, mu, cov


@pytest.fixture(scope="session")
def driver_events():
    profile = synth.DriverProfile(driver_id="t1", preferred_offset=0.4, seed=11)
    trace, truth = synth.generate_trace(profile, 1200)
    return trace, truth, extract_events(trace, "t1")


@pytest.fixture(scope="session")
def small_pdm(driver_events):
    _, _, events = driver_events
    return train_pdm([e.xi for e in events], 4, seed=0, restarts=1, max_iter=200)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import ACCEPTANCE_KEY

    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
