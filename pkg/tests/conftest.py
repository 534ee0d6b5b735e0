import numpy as np
import pytest

from erasecf.ingest import RatingTriple, SplitSpec, build_matrix, split
from erasecf.synthetic import SyntheticConfig, synthetic_matrix

# collected by the acceptance tests; printed as one line per criterion at the end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def toy_triples():
    """u0 rates i0,i1,i2; u1 rates i0,i1; u2 rates i1,i2. All >= 2 ratings."""
    return [
        RatingTriple(10, 100, 5.0),
        RatingTriple(10, 101, 4.0),
        RatingTriple(10, 102, 3.0),
        RatingTriple(20, 100, 2.0),
        RatingTriple(20, 101, 5.0),
        RatingTriple(30, 101, 1.0),
        RatingTriple(30, 102, 4.0),
    ]


@pytest.fixture
def toy_matrix():
    return build_matrix(toy_triples(), min_interactions=2)


@pytest.fixture(scope="session")
def synth_small():
    """80 users, 4 planted clusters; enough for pipeline round trips."""
    cfg = SyntheticConfig(n_users=80, n_items=120, n_clusters=4, ratings_per_user=10,
                          degree_jitter=3, seed=5)
    return synthetic_matrix(cfg)


@pytest.fixture(scope="session")
def synth_small_split(synth_small):
    return split(synth_small, SplitSpec(0.9, seed=5))


@pytest.fixture(scope="session")
def synth_mid():
    """200 users; the scale the training-loss checks run at."""
    cfg = SyntheticConfig(n_users=200, n_items=200, n_clusters=4, ratings_per_user=12,
                          degree_jitter=4, seed=3)
    return synthetic_matrix(cfg)


def assert_same_matrix(a, b):
    assert a.n_users == b.n_users and a.n_items == b.n_items
    assert np.array_equal(a.user_ptr, b.user_ptr)
    assert np.array_equal(a.item_idx, b.item_idx)
    assert np.array_equal(a.ratings, b.ratings)
    assert a.r_max == b.r_max
