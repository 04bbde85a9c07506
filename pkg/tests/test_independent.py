from functools import partial

import numpy as np
import pytest
from scipy import stats

from hiermba.errors import ConfigError, IngestionError, InputError, StuckChainError
from hiermba.independent import (
    indep_invwishart,
    indep_normal,
    indep_variance,
    invwishart_posterior_params,
    normal_posterior_params,
    read_draws_csv,
    rw_metropolis,
    variance_posterior_params,
    write_draws_csv,
)
from hiermba.model import SourceData, generate_example1
from hiermba.parallel import TaskPlan, run_parallel
from hiermba.rngdist import RandomStream

FIXED_N = {"mu": 0.0, "sigma2": 1.0}


def test_normal_single_zero():
    assert normal_posterior_params([0.0], 0.0, 1.0) == (0.0, 0.5)


def test_normal_five_zeros():
    m, v = normal_posterior_params(np.zeros(5), 0.0, 1.0)
    assert m == 0.0
    assert v == pytest.approx(1 / 6, abs=1e-15)


def test_indep_normal_moments_and_ks():
    src = SourceData(1, [2.0, 3.0, 4.0])
    d = indep_normal(src, FIXED_N, 10_000, RandomStream(1, 1))
    m, v = normal_posterior_params(src.values, 0.0, 1.0)
    x = d.draws[:, 0]
    assert x.mean() == pytest.approx(m, rel=0.03)
    assert x.var(ddof=1) == pytest.approx(v, rel=0.03)
    assert stats.kstest(x, stats.norm(m, np.sqrt(v)).cdf).statistic < 0.02


def test_indep_normal_needs_L():
    with pytest.raises(ConfigError):
        indep_normal(SourceData(1, [1.0]), FIXED_N, 1, RandomStream(1))


def test_indep_invwishart_example():
    src = SourceData(1, [0.0, 0.0])
    d = indep_invwishart(src, {"phi": 1.0, "kappa": 3.0}, 10_000, RandomStream(2))
    assert d.nu == 2.0 and d.matrix_dim == 1
    x = d.draws[:, 0]
    assert x.mean() == pytest.approx(1 / 3, rel=0.05)
    assert stats.kstest(x, stats.invgamma(2.5, scale=0.5).cdf).statistic < 0.02


def test_invwishart_empty_update_is_prior():
    scale, dof = invwishart_posterior_params(np.empty((0, 2)), 3 * np.eye(2), 4.0)
    np.testing.assert_array_equal(scale, 3 * np.eye(2))
    assert dof == 4.0


def test_indep_invwishart_matrix():
    x = RandomStream(3).gen.standard_normal((6, 2))
    d = indep_invwishart(SourceData(1, x), {"phi": np.eye(2), "kappa": 4.0}, 5000, RandomStream(4))
    scale, dof = invwishart_posterior_params(x, np.eye(2), 4.0)
    np.testing.assert_allclose(d.mean_matrix, scale / (dof - 3), rtol=0.1)


def test_indep_invwishart_reproducible():
    src = SourceData(1, [0.3, -1.2])
    a = indep_invwishart(src, {"phi": 1.0, "kappa": 3.0}, 100, RandomStream(5, 1))
    b = indep_invwishart(src, {"phi": 1.0, "kappa": 3.0}, 100, RandomStream(5, 1))
    np.testing.assert_array_equal(a.draws, b.draws)


def test_indep_variance_zero_residuals():
    src = SourceData(1, [7.0] * 4)
    d = indep_variance(src, [7.0], {"sigma_v2": 1.0, "kappa": 3.0}, 10_000, RandomStream(6))
    assert d.nu == 4.0
    assert d.draws[:, 0].mean() == pytest.approx(0.2, rel=0.05)
    assert stats.kstest(d.draws[:, 0], stats.invgamma(3.5, scale=0.5).cdf).statistic < 0.02


def test_variance_scale_additivity():
    y = np.array([1.0, -2.0, 0.5])
    base, _ = variance_posterior_params(y, 0.0, 1.0, 3.0)
    doubled, _ = variance_posterior_params(2 * y, 0.0, 1.0, 3.0)
    assert doubled - 1.0 == pytest.approx(4 * (base - 1.0), abs=1e-12)


def test_indep_variance_reproducible_and_kappa_check():
    src = SourceData(1, [1.0, 2.0])
    fixed = {"sigma_v2": 1.0, "kappa": 3.0}
    a = indep_variance(src, 1.5, fixed, 50, RandomStream(7))
    b = indep_variance(src, 1.5, fixed, 50, RandomStream(7))
    np.testing.assert_array_equal(a.draws, b.draws)
    with pytest.raises(ConfigError):
        indep_variance(src, 1.5, {"sigma_v2": 1.0, "kappa": 2.0}, 50, RandomStream(7))


def _normal_task(src, rng):
    return indep_normal(src, FIXED_N, 200, rng)


def test_sources_do_not_interact():
    ds = generate_example1(6, 5, 2.0, 3.0, RandomStream(8))
    srcs = list(ds)
    others = [s.values for s in srcs[1:]][::-1]
    shuffled = [srcs[0]] + [SourceData(j + 2, v) for j, v in enumerate(others)]
    a = run_parallel(TaskPlan([(s.source_id, partial(_normal_task, s)) for s in srcs], base_seed=9))
    b = run_parallel(TaskPlan([(s.source_id, partial(_normal_task, s)) for s in shuffled], base_seed=9))
    np.testing.assert_array_equal(a[0].draws, b[0].draws)


def _std_normal(x):
    return -0.5 * float(x @ x)


def test_metropolis_standard_normal():
    d = rw_metropolis(_std_normal, [0.0], [[1.0]], 10_000, 2000, RandomStream(10))
    x = d.draws[:, 0]
    assert abs(x.mean()) < 0.05
    assert x.var() == pytest.approx(1.0, rel=0.1)
    assert 0.1 < d.acceptance_rate < 0.6


def test_metropolis_quantiles():
    logpost = lambda x: stats.norm.logpdf(x[0], 3.0, np.sqrt(2.0))
    d = rw_metropolis(logpost, [0.0], [[0.5]], 20_000, 2000, RandomStream(11))
    qs = np.linspace(0.1, 0.9, 9)
    np.testing.assert_allclose(np.quantile(d.draws[:, 0], qs),
                               stats.norm.ppf(qs, 3.0, np.sqrt(2.0)), atol=0.1)
    assert 0.1 < d.acceptance_rate < 0.6


def test_metropolis_zero_step_is_stuck():
    with pytest.raises(StuckChainError):
        rw_metropolis(_std_normal, [0.0], [[0.0]], 100, 100, RandomStream(12))


def test_metropolis_nan_is_error():
    with pytest.raises(InputError):
        rw_metropolis(lambda x: np.nan if x[0] > 0.5 else 0.0, [0.0], [[4.0]], 100, 10,
                      RandomStream(13))


def test_metropolis_needs_finite_start():
    with pytest.raises(InputError):
        rw_metropolis(lambda x: -np.inf, [0.0], [[1.0]], 100, 10, RandomStream(14))


def test_draws_csv_round_trip(tmp_path):
    srcs = [indep_normal(SourceData(j, [float(j)]), FIXED_N, 30, RandomStream(15, j)) for j in (1, 2)]
    write_draws_csv(srcs, tmp_path / "d.csv")
    back = read_draws_csv(tmp_path / "d.csv", nu={1: 1.0, 2: 1.0})
    for a, b in zip(srcs, back):
        assert a.source_id == b.source_id and b.nu == 1.0
        np.testing.assert_array_equal(a.draws, b.draws)
        np.testing.assert_array_equal(a.mean, b.mean)


def test_draws_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("source_id,draw_index,v_1\n1,0,abc\n")
    with pytest.raises(IngestionError):
        read_draws_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(IngestionError):
        read_draws_csv(empty)
    header_only = tmp_path / "h.csv"
    header_only.write_text("source_id,draw_index,v_1\n")
    with pytest.raises(IngestionError):
        read_draws_csv(header_only)
