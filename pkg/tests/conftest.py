import re

import numpy as np
import pytest

from tractcast.synth import SynthConfig, generate_city


def small_city_config(seed: int = 0, n_tracts: int = 36, **overrides) -> SynthConfig:
    """A desk-scale city that keeps unit tests fast: fewer tracts, lighter
    flow volumes, denser stations so subway features stay exercised."""
    base = dict(
        seed=seed,
        n_tracts=n_tracts,
        cell_size=1500.0,
        taxi_per_tract=8.0,
        subway_daily_mean=300.0,
        station_rate=0.2,
        checkin_mean=25.0,
    )
    base.update(overrides)
    return SynthConfig(**base)


@pytest.fixture(scope="session")
def small_city():
    return generate_city(small_city_config(seed=7))


@pytest.fixture(scope="session")
def default_city():
    """The full-size city the protocol-reproduction criteria run on."""
    return generate_city(SynthConfig(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one pass/fail line per acceptance criterion, printed to the terminal
_ACCEPT_RE = re.compile(r"test_c(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    m = _ACCEPT_RE.search(report.nodeid)
    if not m:
        return
    num, name = int(m.group(1)), m.group(2)
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\nACCEPTANCE CRITERION {num:2d} [{outcome}] {name} ({report.duration:.1f}s)")
