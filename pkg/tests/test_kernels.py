"""Compiled and numpy kernels must agree to rounding."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condwalk import kernels as K


def _batch(seed, n_paths, n_steps, d):
    rng = np.random.default_rng(seed)
    mats = rng.normal(size=(n_paths, n_steps, d, d)) + 2.0 * np.eye(d)
    x = rng.normal(size=(n_paths, d))
    x /= np.linalg.norm(x, axis=1)[:, None]
    return mats, x


dims = st.integers(1, 4)
seeds = st.integers(0, 2**31 - 1)


@given(seeds, dims, st.integers(1, 12))
def test_propagate(seed, d, n_steps):
    mats, x = _batch(seed, 7, n_steps, d)
    inc_j, v_j = K._jit_propagate(mats, x)
    inc_n, v_n = K._np_propagate(mats, x)
    np.testing.assert_allclose(inc_j, inc_n, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(v_j, v_n, rtol=1e-10, atol=1e-12)


@given(seeds, dims, st.integers(1, 12))
def test_propagate_points(seed, d, n_steps):
    mats, x = _batch(seed, 5, n_steps, d)
    inc_j, p_j = K._jit_propagate_points(mats, x)
    inc_n, p_n = K._np_propagate_points(mats, x)
    np.testing.assert_allclose(inc_j, inc_n, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(p_j, p_n, rtol=1e-10, atol=1e-12)
    # increments telescope to the log-norm of the full product
    prod = np.eye(d)
    for k in range(n_steps):
        prod = mats[0, k] @ prod
    assert inc_n[0].sum() == pytest.approx(np.log(np.linalg.norm(prod @ x[0])), abs=1e-9)


@given(seeds, dims, st.integers(1, 10))
def test_suffix_points(seed, d, m):
    mats, x = _batch(seed, 6, m, d)
    np.testing.assert_allclose(K._jit_suffix_points(mats, x), K._np_suffix_points(mats, x),
                               rtol=1e-10, atol=1e-12)


@given(seeds, dims, st.integers(0, 6), st.integers(1, 5))
def test_window_points(seed, d, n, depth):
    mats, _ = _batch(seed, 4, n + depth, d)
    x0 = np.ones(d) / np.sqrt(d)
    out_j = K._jit_window_points(mats, x0, n, depth)
    out_n = K._np_window_points(mats, x0, n, depth)
    np.testing.assert_allclose(out_j, out_n, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(out_n, axis=2), 1.0)


@settings(max_examples=100)
@given(st.lists(st.floats(-5, 5), min_size=0, max_size=30),
       st.lists(st.floats(-6, 6), min_size=1, max_size=20), seeds)
def test_ramp_sums(a, grid, seed):
    a_sorted = np.sort(np.asarray(a, dtype=float))
    c_sorted = np.random.default_rng(seed).uniform(size=a_sorted.size)
    grid = np.sort(np.asarray(grid, dtype=float))
    r_j, c_j, n_j = K._jit_ramp_sums(a_sorted, c_sorted, grid)
    r_n, c_n, n_n = K._np_ramp_sums(a_sorted, c_sorted, grid)
    np.testing.assert_array_equal(n_j, n_n)
    np.testing.assert_allclose(r_j, r_n, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(c_j, c_n, rtol=1e-9, atol=1e-9)
    # direct definition
    direct = np.array([np.sum(np.maximum(u - a_sorted, 0.0)) for u in grid])
    np.testing.assert_allclose(r_n, direct, rtol=1e-9, atol=1e-8)
    assert np.all(np.diff(r_j) >= 0)


@pytest.mark.parametrize("flag, expect", [("1", "_np_propagate"), ("", "_jit_propagate")])
def test_env_flag_selects_backend(flag, expect):
    import os
    import subprocess
    import sys

    env = {**os.environ, "CONDWALK_DISABLE_JIT": flag}
    code = "from condwalk import kernels as K; print(K.propagate.__name__)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expect
