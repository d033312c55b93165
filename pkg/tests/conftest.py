import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from covert_pursuit.scenario import ScenarioConfig, TargetTrack, generate_target_track

settings.register_profile(
    "repo", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def std_cfg():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def std_track(std_cfg):
    return generate_target_track(std_cfg)


@pytest.fixture(scope="session")
def short_cfg():
    """Ten slots of the standard scenario."""
    return ScenarioConfig().replace(horizon_T=2.0)


@pytest.fixture(scope="session")
def short_track(short_cfg):
    return generate_target_track(short_cfg)


def fast_track(n, vel=(4.0, 3.0), altitude=100.0):
    """Straight-line target moving ``vel`` metres per slot, above the
    minimum-power speed so trailing is worthwhile."""
    return TargetTrack(np.arange(n + 1)[:, None] * np.asarray(vel, dtype=float)[None, :], altitude)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
