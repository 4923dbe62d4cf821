import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wgcm.citests import MethodConfig
from wgcm.errors import DegenerateResiduals, InvalidParameter
from wgcm.regress import RegressorSpec
from wgcm.simlab import (
    NOISE_SCALE,
    SimSetting,
    generate,
    h1,
    h2,
    h_b,
    h_lambda,
    rejection_rate,
    replicate_seed,
)

unit = st.floats(0.0, 1.0)


def test_h_lambda_examples():
    assert h_lambda(3.0, 1.0) == 3.0
    assert h_lambda(3.0, 0.0) == 4.5
    assert h_lambda(3.0, 0.5) == 3.75
    with pytest.raises(InvalidParameter):
        h_lambda(1.0, 1.5)


@settings(max_examples=50, deadline=None)
@given(b1=unit, b2=unit, t=st.floats(-5, 5))
def test_h_b_reductions(b1, b2, t):
    assert h_b(0.0, b1, 0.0) == 0.0
    assert h1(0.0, 0.7, b2) == pytest.approx(0.7, abs=1e-15)
    assert h_b(t, b1, 0.0) == h2(t, b1)


def test_h_b_validates():
    with pytest.raises(InvalidParameter):
        h_b(0.0, -0.1, 0.5)
    with pytest.raises(InvalidParameter):
        h_b(0.0, 0.5, 1.1)


def test_h_b_continuity_on_grid():
    t = np.linspace(-4, 4, 80001)
    for b1 in (0.0, 1 / 3, 1.0):
        for b2 in (0.0, 0.5, 1.0):
            assert np.max(np.abs(np.diff(h_b(t, b1, b2)))) < 1e-3


def test_generate_shapes_and_determinism():
    s = SimSetting("motivating", n=5, seed=11, lam=0.5)
    ds = generate(s)
    assert (ds.n, ds.dx, ds.dy, ds.dz) == (5, 1, 1, 1)
    assert generate(s) == ds
    assert generate(s.with_seed(12)) != ds
    assert generate(SimSetting("s10d_add", n=100, b1=0.2, b2=0.4)).dz == 10
    assert generate(SimSetting("s10d_nonadd", n=100, b1=0.2, b2=0.4)).dz == 10
    ex = generate(SimSetting("example74", n=30, d=50))
    assert (ex.dx, ex.dy) == (50, 1)


def test_setting_validation():
    with pytest.raises(InvalidParameter):
        SimSetting("motivating", n=1)
    with pytest.raises(InvalidParameter):
        SimSetting("s1d", n=10, b1=2.0)
    with pytest.raises(InvalidParameter):
        SimSetting("s1d", n=10, alternative=(0.5, -0.1))
    with pytest.raises(InvalidParameter):
        SimSetting("nope", n=10)


@pytest.mark.parametrize("family", ["motivating", "s1d"])
def test_marginal_sanity(family):
    ds = generate(SimSetting(family, n=10_000, seed=5, b1=1 / 3, b2=1 / 3))
    z = ds.z[:, 0]
    assert abs(z.mean()) <= 4 / np.sqrt(z.size)
    assert abs(z.std() - 1.0) <= 0.05


def test_motivating_dgp_structure():
    ds = generate(SimSetting("motivating", n=20_000, seed=2, lam=1.0))
    eta_x = ds.x[:, 0] - ds.z[:, 0]
    assert abs(eta_x.std() - NOISE_SCALE) < 0.01
    eta_y = ds.y[:, 0] - ds.z[:, 0] - 0.3 * ds.x[:, 0]
    assert abs(eta_y.std() - NOISE_SCALE) < 0.01
    assert abs(np.corrcoef(eta_x, eta_y)[0, 1]) < 0.03


@settings(max_examples=20, deadline=None)
@given(c1=unit, c2=unit, seed=st.integers(0, 2**32))
def test_alternative_is_additive(c1, c2, seed):
    null = SimSetting("s1d", n=50, seed=seed, b1=0.3, b2=0.6)
    alt = SimSetting("s1d", n=50, seed=seed, b1=0.3, b2=0.6, alternative=(c1, c2))
    a, b = generate(null), generate(alt)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.z, b.z)
    np.testing.assert_allclose(b.y[:, 0] - h_b(b.x[:, 0], c1, c2), a.y[:, 0], rtol=0, atol=1e-14)


def test_replicate_seeds_are_distinct():
    seeds = [replicate_seed(7, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert replicate_seed(7, 3) == replicate_seed(7, 3)


class _Const:
    def __init__(self, p):
        self.p_value = p


def test_rejection_rate_trivial_runner():
    res = rejection_rate(SimSetting("motivating", n=10), lambda ds, seed: _Const(1.0), replicates=1)
    assert res.rate == 0.0 and res.reject_count == 0
    res = rejection_rate(SimSetting("motivating", n=10), lambda ds, seed: _Const(0.05), replicates=4)
    assert res.rate == 1.0
    with pytest.raises(InvalidParameter):
        rejection_rate(SimSetting("motivating", n=10), lambda ds, seed: _Const(1.0), replicates=0)


def test_rejection_rate_excludes_failures():
    calls = iter(range(10))

    def runner(ds, seed):
        i = next(calls)
        if i % 2:
            raise DegenerateResiduals("forced")
        return _Const(0.01)

    res = rejection_rate(SimSetting("motivating", n=10), runner, replicates=6)
    assert res.failed == 3 and res.rate == 1.0 and res.reject_count == 3
    assert res.per_replicate[1] is None
    assert res.csv_rows()[1]["p"] == ""


def test_rejection_rate_determinism_and_threads():
    cfg = MethodConfig("gcm", RegressorSpec("kernel_smoother"))
    setting = SimSetting("motivating", n=60, lam=0.0)
    a = rejection_rate(setting, cfg, replicates=10, base_seed=3)
    b = rejection_rate(setting, cfg, replicates=10, base_seed=3, threads=4)
    assert a.per_replicate == b.per_replicate
    assert a.to_csv() == b.to_csv()
    assert json.loads(a.to_json())["replicates"] == 10
    assert a.to_csv().splitlines()[0] == "replicate,seed,p,reject"


def test_motivating_oracle_slope_matches_noise_variance():
    # E[eps xi | Z] = 0.3 Var(eta_X) Z with Var(eta_X) = 0.09
    ds = generate(SimSetting("motivating", n=200_000, seed=1, lam=0.0))
    x, y, z = ds.x[:, 0], ds.y[:, 0], ds.z[:, 0]
    products = (x - z) * (y - z - 0.15 * (z ** 2 + NOISE_SCALE ** 2))
    slope = np.polyfit(z, products, 1)[0]
    assert slope == pytest.approx(0.3 * NOISE_SCALE ** 2, abs=0.003)
