"""Shared pytest fixtures for cookie_walk_lab tests."""

import pytest
from pathlib import Path

from cookie_walk_lab.distributions import CookieEnvironment, JumpDistribution
from cookie_walk_lab.walk_core import simulate


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run desk-scale Monte Carlo tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale Monte Carlo run (needs --runslow)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def mock_home(tmp_path, monkeypatch):
    """Temporary home directory with no cookie-walk-lab files."""
    # Mock Path.home() to return tmp_path
    monkeypatch.setattr(Path, 'home', lambda: tmp_path)
    monkeypatch.delenv('COOKIE_WALK_LAB_WORKERS', raising=False)
    return tmp_path


@pytest.fixture
def mock_config_dir(mock_home):
    """Temporary ``~/.cookie-walk-lab`` directory."""
    config_dir = mock_home / '.cookie-walk-lab'
    config_dir.mkdir()
    return config_dir


@pytest.fixture
def mock_defaults_file(mock_config_dir):
    """User defaults file with a few keys set."""
    path = mock_config_dir / 'config'
    path.write_text(
        '[defaults]\n'
        'replicas = 7\n'
        'horizon = 5000\n'
        'seed = 11\n'
        'level = 0.95\n',
        encoding='utf-8',
    )
    return path


@pytest.fixture
def eps_law():
    """The two-atom law {-1: 0.01, 15: 0.99}."""
    return JumpDistribution.epsilon_family(15, 0.01)


@pytest.fixture
def eps_env(eps_law):
    return CookieEnvironment.one_cookie(eps_law)


@pytest.fixture
def symmetric_env():
    return CookieEnvironment.one_cookie(JumpDistribution.symmetric())


@pytest.fixture(scope='session')
def eps_trajectory():
    """One ballistic trajectory shared by read-only tests."""
    env = CookieEnvironment.one_cookie(JumpDistribution.epsilon_family(15, 0.01))
    return simulate(env, seed=2024, horizon=200_000)
