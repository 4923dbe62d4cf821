import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from wgcm.errors import DegenerateResiduals, EmptyInput, InvalidCorrelation, LengthMismatch
from wgcm.statistic import (
    CorrelationMatrix,
    ResidualProducts,
    correlation_matrix,
    max_abs_statistic,
    residual_products,
    statistic_vector,
    t_statistic,
)
from wgcm.weights import WeightFunction, WeightGrid, quantile_sign_grid


def test_residual_products():
    np.testing.assert_array_equal(residual_products([1, 2], [3, -1], [1, 1]).r, [3, -2])
    np.testing.assert_array_equal(residual_products([1, 2], [3, -1], [0, 0]).r, [0, 0])
    np.testing.assert_array_equal(residual_products([1, 2], [3, -1], [0.5, -1]).r, [1.5, 2])
    with pytest.raises(LengthMismatch):
        residual_products([1, 2], [3], [1, 1])


def test_t_statistic_worked_example():
    s = t_statistic(ResidualProducts([1.0, -1.0, 2.0]))
    assert s.tau_n == pytest.approx(2 / math.sqrt(3), abs=1e-12)
    assert s.tau_d == pytest.approx(math.sqrt(2 - 4 / 9), abs=1e-12)
    assert s.t == pytest.approx(0.9258200997725516, abs=1e-12)
    assert s.t == s.tau_n / s.tau_d


def test_t_statistic_degenerate_and_symmetric():
    for c in (0.0, 1.0, -3.5):
        with pytest.raises(DegenerateResiduals):
            t_statistic(ResidualProducts([c, c, c]))
    s = t_statistic(ResidualProducts([1.0, -1.0]))
    assert s.tau_n == 0.0 and s.t == 0.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(1e-3, 1e3))
def test_scale_equivariance(seed, c):
    r = np.random.default_rng(seed).standard_normal(50)
    a = t_statistic(ResidualProducts(r))
    b = t_statistic(ResidualProducts(c * r))
    assert b.tau_n == pytest.approx(c * a.tau_n, rel=1e-12, abs=1e-300)
    assert b.tau_d == pytest.approx(c * a.tau_d, rel=1e-12)
    assert b.t == pytest.approx(a.t, rel=1e-12, abs=1e-14)


def test_statistic_vector_constant_weight_is_gcm(rng):
    eps, xi, z = rng.standard_normal(40), rng.standard_normal(40), rng.standard_normal(40)
    grid = WeightGrid((WeightFunction.constant(),))
    stats_, products = statistic_vector(eps, xi, grid, z)
    assert len(stats_) == 1
    assert stats_[0].t == t_statistic(ResidualProducts(eps * xi)).t


def test_statistic_vector_ordering(rng):
    eps = rng.standard_normal((30, 2))
    xi = rng.standard_normal((30, 3))
    z = rng.standard_normal((30, 1))
    grid = quantile_sign_grid(z, 2)
    stats_, _ = statistic_vector(eps, xi, grid, z)
    labels = [s.label for s in stats_]
    assert labels == [(j, l, k) for j in range(2) for l in range(3) for k in range(3)]
    grids = {(0, 0): WeightGrid((WeightFunction.constant(),)), (1, 0): WeightGrid((WeightFunction.constant(),))}
    stats_, _ = statistic_vector(eps, xi[:, :1], grids, z)
    assert [s.label for s in stats_] == [(0, 0, 0), (1, 0, 0)]


def test_statistic_vector_degenerate_column_is_labelled(rng):
    eps = rng.standard_normal((30, 2))
    eps[:, 1] = 0.0
    with pytest.raises(DegenerateResiduals) as info:
        statistic_vector(eps, rng.standard_normal(30), WeightGrid((WeightFunction.constant(),)), rng.standard_normal(30))
    assert info.value.label == (1, 0, 0)


def test_correlation_matrix_examples():
    r = ResidualProducts([1.0, -1.0, 2.0, 0.5])
    assert correlation_matrix([r]).sigma_hat.tolist() == [[1.0]]
    assert correlation_matrix([r, r]).sigma_hat[0, 1] == pytest.approx(1.0, abs=1e-15)
    s = correlation_matrix([ResidualProducts([1.0, -1.0, 0.0, 0.0]), ResidualProducts([0.0, 0.0, 1.0, -1.0])])
    np.testing.assert_array_equal(s.sigma_hat, np.eye(2))


def test_correlation_matrix_matches_numpy_corrcoef(rng):
    R = rng.standard_normal((200, 6)) + rng.standard_normal((200, 1))
    s = correlation_matrix([ResidualProducts(R[:, k]) for k in range(6)])
    np.testing.assert_allclose(s.sigma_hat, np.corrcoef(R, rowvar=False), atol=1e-12)
    assert np.array_equal(s.sigma_hat, s.sigma_hat.T)
    assert np.all(np.diag(s.sigma_hat) == 1.0)


def test_correlation_matrix_rejects_invalid():
    with pytest.raises(InvalidCorrelation):
        CorrelationMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(InvalidCorrelation):
        CorrelationMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(DegenerateResiduals):
        correlation_matrix([ResidualProducts([1.0, 1.0, 1.0])])


def test_max_abs_statistic():
    from wgcm.statistic import TestStatistic

    ts = [TestStatistic(v, v, 1.0) for v in (0.5, -2.0, 1.0)]
    assert max_abs_statistic(ts) == 2.0
    assert max_abs_statistic([TestStatistic(-3.0, -3.0, 1.0)]) == 3.0
    assert max_abs_statistic([TestStatistic(0.0, 0.0, 1.0)] * 3) == 0.0
    with pytest.raises(EmptyInput):
        max_abs_statistic([])


def test_oracle_null_normality_small():
    # 500 replicates here; the acceptance suite runs the full 2000
    rng = np.random.default_rng(3)
    t = []
    for _ in range(500):
        eps, xi, z = rng.standard_normal((3, 300))
        t.append(t_statistic(residual_products(eps, xi, np.where(z < 0.3, -1.0, 1.0))).t)
    assert stats.kstest(t, "norm").statistic < 0.07
