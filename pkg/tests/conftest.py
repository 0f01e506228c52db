from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from perciso.cluster import origin_box_cluster
from perciso.percolation import Model, from_open_sites, sample_configuration

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much])
settings.load_profile("default")

DEFAULT_CONFIG = str(Path(__file__).resolve().parents[1] / "configs" / "default.ini")
RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture
def grid3():
    """The full 3x3 grid as C^1."""
    return origin_box_cluster(sample_configuration(Model.bond(2), 1, 1.0, 0), 1)


@pytest.fixture
def pair():
    """Two open sites joined by one edge."""
    return origin_box_cluster(from_open_sites([(0, 0), (1, 0)], 2), 2)


def small_cluster_corpus(count=50, n=2, cap=14):
    """Connected clusters C^n with 2..cap vertices from seeded d=2 site and bond samples."""
    out = []
    for model, p in ((Model.site2d(), 0.65), (Model.bond(2), 0.55)):
        seed = 0
        got = 0
        while got < count:
            cfg = sample_configuration(model, n, p, seed)
            seed += 1
            try:
                c = origin_box_cluster(cfg, n)
            except Exception:
                continue
            if 2 <= c.size <= cap:
                out.append((cfg, c))
                got += 1
    return out


@pytest.fixture(scope="session")
def corpus():
    return small_cluster_corpus()


def rng(seed=0):
    return np.random.default_rng(seed)
