import numpy as np
import pytest

from hiermba.rngdist import RandomStream

# filled by the acceptance tests and echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return RandomStream(20240611)


@pytest.fixture
def stream_factory():
    def make(seed=1, stream_id=0):
        return RandomStream(seed, stream_id)

    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def chi2_gof_normal(x, mean, sd, bins=20):
    """p-value of a chi-square test of x against N(mean, sd^2) using
    equiprobable bins."""
    from scipy import stats

    edges = stats.norm.ppf(np.linspace(0, 1, bins + 1), loc=mean, scale=sd)
    counts = np.histogram(x, bins=edges)[0]
    expected = np.full(bins, len(x) / bins)
    return stats.chisquare(counts, expected).pvalue


def chi2_gof_dist(x, dist, bins=20):
    """Same as :func:`chi2_gof_normal` for a frozen scipy distribution."""
    from scipy import stats

    edges = dist.ppf(np.linspace(0, 1, bins + 1))
    counts = np.histogram(x, bins=edges)[0]
    expected = np.full(bins, len(x) / bins)
    return stats.chisquare(counts, expected).pvalue
