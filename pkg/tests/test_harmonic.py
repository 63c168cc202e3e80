import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from condwalk import oracle
from condwalk.ensemble import default_start, discrete, identity, rotation_diagonal
from condwalk.errors import DegenerateVariance
from condwalk.harmonic import (V_profile, estimate_V, estimate_variance, geometric_grid, survival_curve,
                               uniformity_sweep)
from condwalk.walk import exit_times, simulate_batch

SCALAR = discrete([[[2.0]], [[0.5]]])


@pytest.mark.parametrize("t, expected", [(0.0, 0.0), (2.5, 2.5), (-1.0, 0.0)])
def test_identity_V(t, expected):
    est = estimate_V(identity(2), [1.0, 0.0], t, 10, 1000)
    assert est.value == expected and est.stderr == 0.0


def test_scalar_V_two_steps():
    exact = 0.5 * math.log(2)
    assert oracle.exact_V(SCALAR, [1.0], 0.0, 2) == pytest.approx(exact, abs=1e-15)
    est = estimate_V(SCALAR, [1.0], 0.0, 2, 100_000, seed=3)
    assert est.within(exact, 3)


def test_V_linear_growth(fixtures):
    ens = fixtures("standard_proximal")
    est = estimate_V(ens, default_start(2), 50.0, 200, 20_000, seed=4)
    assert 0.9 <= est.value / 50.0 <= 1.1


def test_V_minus_direction_reflects():
    plus = estimate_V(SCALAR, [1.0], 1.0, 6, 2000, seed=1)
    minus = estimate_V(SCALAR, [1.0], 1.0, 6, 2000, direction="minus", seed=1)
    # the scalar walk is symmetric; both estimate the same number
    assert abs(plus.value - minus.value) <= 4 * math.hypot(plus.stderr, minus.stderr)


def test_variance_rotations_warns():
    with pytest.warns(DegenerateVariance):
        v = estimate_variance(rotation_diagonal([0.0, 0.0]), [1.0, 0.0], 20, 1000)
    assert v.upsilon_sq == pytest.approx(0.0, abs=1e-20)


def test_variance_scalar_walk():
    v = estimate_variance(SCALAR, [1.0], 50, 50_000, seed=2)
    assert abs(v.upsilon_sq - math.log(2) ** 2) <= 3 * v.stderr


def test_variance_cauchy_consistency(fixtures):
    ens = fixtures("standard_proximal")
    a = estimate_variance(ens, default_start(2), 100, 20_000, seed=5)
    b = estimate_variance(ens, default_start(2), 200, 20_000, seed=6)
    assert abs(a.upsilon_sq - b.upsilon_sq) <= 3 * math.hypot(a.stderr, b.stderr)


def test_survival_identity_and_monotone():
    curve = survival_curve(identity(2), [1.0, 0.0], 0.0, [1, 5, 10], 500)
    np.testing.assert_array_equal(curve.prob, 1.0)
    c = survival_curve(SCALAR, [1.0], 0.0, geometric_grid(1, 512, 2), 5000, seed=1)
    assert np.all(np.diff(c.prob) <= 0)


def test_scalar_survival_slope():
    c = survival_curve(SCALAR, [1.0], 0.0, geometric_grid(64, 4096, 2), 20_000, seed=7)
    assert -0.65 <= c.loglog_fit(64, 4096).slope <= -0.38


@pytest.mark.parametrize("name", ["standard_proximal", "rotation_diagonal3"])
def test_V_monotone_and_lower_bound_on_shared_paths(fixtures, name):
    ens = fixtures(name)
    n_list, t_list = (8, 16, 32), (-1.0, 0.0, 1.0, 5.0)
    prof = V_profile(ens, default_start(ens.dim), t_list, n_list, 4000, seed=3)
    for t in t_list:
        for i, n in enumerate(n_list):
            a = prof[(n, t)]
            assert a.value >= max(t, 0.0) - 3 * a.stderr
            for m in n_list[i + 1:]:
                b = prof[(m, t)]
                assert a.value <= b.value + 3 * (a.stderr + b.stderr)


@given(st.integers(0, 1000), st.floats(-2, 3))
def test_censoring_matches_exit_times(seed, t):
    n = 12
    sums, _ = simulate_batch(SCALAR, [1.0], n, 300, seed=seed)
    times, censored = exit_times(sums, t)
    direct = np.where(censored, t + sums[:, -1], 0.0)
    threshold = np.where(t >= -sums.min(axis=1), t + sums[:, -1], 0.0)
    np.testing.assert_allclose(direct, threshold)
    assert np.all(times[~censored] <= n)


def test_uniformity_sweep(fixtures):
    ens = fixtures("standard_proximal")
    xs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
    ests, spread = uniformity_sweep(ens, xs, 2.0, 50, 5000, seed=1)
    assert len(ests) == 3 and spread == pytest.approx(max(e.value for e in ests) - min(e.value for e in ests))


def test_reproducible_and_worker_invariant(fixtures):
    ens = fixtures("standard_proximal")
    a = estimate_V(ens, default_start(2), 1.0, 30, 10_000, seed=8, workers=1)
    b = estimate_V(ens, default_start(2), 1.0, 30, 10_000, seed=8, workers=3)
    assert a == b


def test_V_against_oracle_over_seeds(fixtures):
    ens = fixtures("ab2_centered")
    x = default_start(2)
    exact = oracle.exact_V(ens, x, 0.5, 6)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        z = [estimate_V(ens, x, 0.5, 6, 20_000, seed=s).z_to(exact) for s in range(20)]
    assert sum(abs(v) <= 4 for v in z) >= 19
