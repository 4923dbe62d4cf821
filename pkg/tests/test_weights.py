import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wgcm.datamodel import Dataset
from wgcm.errors import DimensionMismatch, TooFewSamples
from wgcm.regress import RegressorSpec
from wgcm.weights import (
    WeightFunction,
    WeightGrid,
    estimate_sign_weight,
    eval_weight,
    quantile_sign_grid,
    quantile_thresholds,
)


def test_axis_sign_convention():
    w = WeightFunction.axis_sign(0, 2.0)
    assert eval_weight(w, [1.5]) == -1.0
    assert eval_weight(w, [2.0]) == 1.0
    assert eval_weight(WeightFunction.constant(), [123.0, -4.0]) == 1.0
    with pytest.raises(DimensionMismatch):
        eval_weight(WeightFunction.axis_sign(3, 0.0), [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-1e6, 1e6), delta=st.floats(1e-3, 1e3))
def test_axis_sign_antisymmetry(a, delta):
    w = WeightFunction.axis_sign(0, a)
    assert eval_weight(w, [a - delta]) == -eval_weight(w, [a + delta])


def test_grid_sizes_match_default_experiments(rng):
    assert quantile_sign_grid(np.arange(1.0, 101.0).reshape(-1, 1), 7).K == 8
    assert quantile_sign_grid(rng.standard_normal((200, 10)), 7).K == 71


def test_grid_thresholds_are_order_statistics():
    # ranks ceil(8 k / 4) = 2, 4, 6 for k = 1, 2, 3
    np.testing.assert_array_equal(quantile_thresholds(np.arange(1.0, 9.0), 3), [2.0, 4.0, 6.0])
    grid = quantile_sign_grid(np.arange(8.0, 0.0, -1.0), 3)
    assert grid.functions[0].form == "const"
    assert [w.threshold for w in grid.functions[1:]] == [2.0, 4.0, 6.0]


def test_grid_order_statistic_brute_force(rng):
    z = rng.standard_normal(37)
    for k0 in (1, 3, 7, 11):
        expected = []
        for k in range(1, k0 + 1):
            # smallest order statistic with at least k/(k0+1) of the sample at or below it
            for v in sorted(z):
                if np.sum(z <= v) * (k0 + 1) >= k * z.size:
                    expected.append(v)
                    break
        np.testing.assert_array_equal(quantile_thresholds(z, k0), expected)


def test_grid_deduplicates_ties():
    z = np.array([0.0] * 10 + [1.0] * 10).reshape(-1, 1)
    grid = quantile_sign_grid(z, 7)
    assert [w.threshold for w in grid.functions[1:]] == [0.0, 1.0]


def test_grid_needs_enough_rows():
    with pytest.raises(TooFewSamples):
        quantile_sign_grid(np.zeros((7, 1)), 7)


@settings(max_examples=30, deadline=None)
@given(z=arrays(float, (40, 2), elements=st.floats(-1e3, 1e3)), k0=st.integers(1, 9))
def test_grid_bounded_and_monotone(z, k0):
    grid = quantile_sign_grid(z, k0)
    values = grid.evaluate(z)
    assert np.all(np.abs(values) <= 1.0)
    for d in range(2):
        thr = [w.threshold for w in grid.functions[1:] if w.dim == d]
        assert thr == sorted(thr)


def test_grid_json_round_trip(rng):
    grid = quantile_sign_grid(rng.standard_normal((30, 2)), 3)
    again = WeightGrid.from_json(grid.to_json(), 3)
    z = rng.standard_normal((10, 2))
    np.testing.assert_array_equal(again.evaluate(z), grid.evaluate(z))


def _pair_data(products_constant, n=30):
    # mean_only regressors make every residual product equal to (x - mean)(y - mean)
    x = np.array([1.0, -1.0] * (n // 2))
    y = products_constant * x
    return Dataset(x=x, y=y, z=np.linspace(-1, 1, n))


def test_estimated_weight_sign_of_constant_fit():
    mean = RegressorSpec("mean_only")
    w = estimate_sign_weight(_pair_data(0.7), mean, mean)
    assert np.all(w.evaluate(np.linspace(-5, 5, 11)) == 1.0)
    w = estimate_sign_weight(_pair_data(-0.2), mean, mean)
    assert np.all(w.evaluate(np.linspace(-5, 5, 11)) == -1.0)


def test_estimated_weight_plug_in_identity(rng):
    n = 60
    z = rng.standard_normal(n)
    ds = Dataset(x=z + rng.standard_normal(n), y=z * rng.standard_normal(n), z=z)
    kernel = RegressorSpec("kernel_smoother", seed=4)
    w = estimate_sign_weight(ds, kernel, RegressorSpec("mean_only"))
    from wgcm.regress import fit

    eps = ds.x[:, 0] - fit(kernel, ds.z, ds.x[:, 0]).predict(ds.z)
    xi = ds.y[:, 0] - fit(kernel, ds.z, ds.y[:, 0]).predict(ds.z)
    expected = 1.0 if np.mean(eps * xi) >= 0 else -1.0
    assert np.all(w.evaluate(rng.standard_normal((20, 1))) == expected)


def test_estimated_weight_range_and_minimum_size(rng):
    n = 80
    z = rng.standard_normal(n)
    ds = Dataset(x=z + rng.standard_normal(n), y=z + rng.standard_normal(n), z=z)
    w = estimate_sign_weight(ds, RegressorSpec("knn", {"k": 7}))
    values = w.evaluate(rng.standard_normal((1000, 1)))
    assert set(np.unique(values)) <= {-1.0, 1.0}
    assert w.describe()["form"] == "estimated"
    with pytest.raises(TooFewSamples):
        estimate_sign_weight(Dataset(x=z[:10], y=z[:10], z=z[:10]), RegressorSpec("mean_only"))
