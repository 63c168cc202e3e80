import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from condwalk.ensemble import discrete, gaussian_perturbed, identity
from condwalk.errors import InfiniteDelta
from condwalk.projective import GroupElement, act, cocycle, delta, normalize_dual, normalize_point
from condwalk.streams import chunk_rng
from condwalk.walk import (Censored, exit_time, ideal_perturbed_path, ideal_values, is_censored, path_from_elements,
                           perturbed_exit_time, reversed_walk_values, simulate_path, walk_checkpoints)

A = np.array([[2.0, 1.0], [1.0, 1.0]])
B = np.array([[1.0, 0.0], [1.0, 1.0]])
PAIR = discrete([A, B])
SCALAR = discrete([[[2.0]], [[0.5]]])


def test_identity_path():
    x = normalize_point([0.6, 0.8])
    p = simulate_path(identity(2), x, 7, rng=1)
    assert np.all(p.increments == 0)
    np.testing.assert_allclose(p.terminal_point.coords, x.coords)


def test_single_atom_increments():
    p = simulate_path(discrete([np.diag([2.0, 1.0])]), [1.0, 0.0], 5, rng=1)
    np.testing.assert_allclose(p.increments, math.log(2))


def test_scalar_walk_is_simple_random_walk():
    p = simulate_path(SCALAR, [1.0], 200, rng=3)
    assert set(np.round(np.abs(p.increments) / math.log(2), 12)) == {1.0}
    np.testing.assert_allclose(p.partial_sums, np.cumsum(p.increments), atol=1e-9)


def test_exit_time_examples():
    p = simulate_path(identity(2), [1.0, 0.0], 10, rng=1)
    assert is_censored(exit_time(p, 0.0)) and is_censored(exit_time(p, 3.0))
    assert exit_time(p, -0.1) == 1
    q = path_from_elements([[[0.5]], [[2.0]], [[2.0]]], [1.0])
    assert exit_time(q, 0.0) == 1
    assert exit_time(q, 0.0, "minus") == 3


def test_censored_reads_as_survival():
    c = Censored(5)
    assert c > 5 and c >= 5 and not (c > 6)


def test_perturbed_exit_time_examples():
    assert is_censored(perturbed_exit_time([0.0, 0.0, 0.0], 0.0))
    assert perturbed_exit_time([-1.0, 3.0], 0.5) == 1
    assert perturbed_exit_time([1.0, -2.0], 0.5) == 2


@pytest.mark.parametrize("seed", range(5))
def test_renormalised_sums_match_direct_product(seed):
    p = simulate_path(PAIR, [0.3, 0.9], 30, keep_elements=True, rng=seed)
    v = p.x0.coords
    prod = np.eye(2)
    for k, g in enumerate(p.elements):
        prod = g @ prod
        assert abs(p.partial_sums[k] - math.log(np.linalg.norm(prod @ v))) < 1e-7
    w = prod @ v / np.linalg.norm(prod @ v)
    assert abs(w[0] * p.terminal_point.coords[1] - w[1] * p.terminal_point.coords[0]) < 1e-8


@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(0, 3))
def test_exit_time_monotone_in_t(seed, t, dt):
    p = simulate_path(SCALAR, [1.0], 25, rng=seed)
    a, b = exit_time(p, t), exit_time(p, t + dt)
    ka = p.n + 1 if is_censored(a) else a
    kb = p.n + 1 if is_censored(b) else b
    assert ka <= kb
    # surviving the first n-1 steps is the same as t >= -min prefix
    survives = ka > p.n - 1
    assert survives == (t >= -p.running_min_prefix or p.n == 1)


def test_reversed_identity_is_zero():
    p = path_from_elements([np.eye(2)] * 4, [0.6, 0.8])
    r = reversed_walk_values(p, normalize_dual([0.3, 0.1]))
    np.testing.assert_allclose(r.values, 0.0, atol=1e-15)


def test_reversed_first_value_direct():
    rng = np.random.default_rng(4)
    for _ in range(20):
        g = GroupElement(rng.standard_normal((2, 2)))
        x = normalize_point(rng.standard_normal(2))
        y = normalize_dual(rng.standard_normal(2))
        r = reversed_walk_values(path_from_elements([g], x), y)
        ginv_y = act(g.inverse(), y)
        direct = -cocycle(g.inverse(), y) + delta(x, ginv_y) - delta(act(g, x), y)
        assert abs(r.values[0] - direct) < 1e-12


def test_reversed_scalar_is_reversed_forward_sums():
    rng = np.random.default_rng(5)
    letters = [[[c]] for c in rng.choice([2.0, 0.5, 3.0], size=12)]
    p = path_from_elements(letters, [1.0])
    r = reversed_walk_values(p, normalize_dual([1.0]))
    # delta vanishes and sigma*(g^-1, .) = log|g|: minus the running sums of the same letters
    forward = path_from_elements(letters, [1.0])
    np.testing.assert_allclose(r.values, -forward.partial_sums, atol=1e-12)


def test_reversal_threshold_is_survival_boundary():
    p = simulate_path(PAIR, [0.3, 0.9], 8, keep_elements=True, rng=6)
    r = reversed_walk_values(p, normalize_dual([0.2, 1.0]))
    for t in np.linspace(-3, 5, 41):
        assert np.all(t + r.values >= 0) == (t >= r.threshold)


def test_reversed_orthogonal_pair_raises():
    p = path_from_elements([np.eye(2)], [1.0, 0.0])
    with pytest.raises(InfiniteDelta):
        reversed_walk_values(p, normalize_dual([0.0, 1.0]))


def test_ideal_identity_is_zero():
    path = ideal_perturbed_path(identity(2), normalize_dual([0.3, 0.8]), 6, 5, rng=1)
    np.testing.assert_allclose(path.values, 0.0, atol=1e-15)


def test_ideal_single_atom_closed_form():
    g = np.diag([4.0, 1.0])
    phi = np.array([0.6, 0.8])
    path = ideal_perturbed_path(discrete([g]), normalize_dual(phi), 5, 40, rng=1)
    # boundary is e1 exactly; y_k = (4^k a, b) normalised
    expected = []
    for k in range(1, 6):
        w = np.array([4.0 ** k * phi[0], phi[1]])
        expected.append(-math.log(np.linalg.norm(w)) - math.log(abs(w[0]) / np.linalg.norm(w)) + math.log(phi[0]))
    np.testing.assert_allclose(path.values, expected, atol=1e-12)


def test_ideal_depth_doubling_stable():
    rng = chunk_rng(8)
    n, L = 5, 30
    mats = PAIR.sample(rng, (1000, n + 2 * L))
    phi = np.array([0.3, 0.95]) / np.linalg.norm([0.3, 0.95])
    x0 = np.array([1.0, 1.0]) / math.sqrt(2)
    a, fa = ideal_values(mats[:, :n + L], phi, x0, n, L)
    b, fb = ideal_values(mats, phi, x0, n, 2 * L)
    ok = fa & fb
    assert np.median(np.abs(a[ok] - b[ok])) < 1e-6


def test_checkpoints_share_paths():
    cps = walk_checkpoints(gaussian_perturbed(2, 0.5), [1.0, 0.0], [3, 6], 500, seed=2)
    assert np.all(cps[1].min_all <= cps[0].min_all)
    assert np.all(cps[0].min_all <= cps[0].s)
