import math

import numpy as np
import pytest
from scipy import stats

from condwalk import oracle
from condwalk.ensemble import default_start, discrete, identity, rotation_diagonal, sample_stationary
from condwalk.harmonic import estimate_V
from condwalk.perturbed import (ChainState, ConstantTwist, DualProjective, FiniteRangeDelta, IdealDelta,
                                LetterFunction, Projective, ScalarLine, Zero, approximation_profile,
                                estimate_U, estimate_W_chain, log_norm_first_letter, martingale_residual,
                                project_finite_size, quasi_monotonicity_scan, random_state, simulate_chain)
from condwalk.streams import chunk_rng

A = np.array([[2.0, 1.0], [1.0, 1.0]])
B = np.array([[1.0, 0.0], [1.0, 1.0]])
PAIR = discrete([A, B])


def first_coordinate_of_first_letter(letters, points):
    return letters[:, 0, 0, 0] * np.abs(points[:, 0])


def test_identity_U():
    for t in (-1.0, 0.0, 2.5):
        est = estimate_U(identity(2), Zero(), ConstantTwist(1.0), t, 5, 500, space=Projective())
        assert est.value == max(t, 0.0) and est.stderr == 0.0


def test_U_zero_perturbation_averages_V(fixtures):
    ens = fixtures("standard_proximal")
    u = estimate_U(ens, None, None, 1.0, 20, 40_000, seed=1, space=Projective())
    xs = sample_stationary(ens, size=40, seed=2)
    vs = np.array([estimate_V(ens, x, 1.0, 20, 2000, seed=10 + i).value for i, x in enumerate(xs)])
    v_mean, v_se = vs.mean(), vs.std(ddof=1) / math.sqrt(vs.size)
    assert abs(u.value - v_mean) <= 3 * math.hypot(u.stderr, v_se)


def test_U_against_oracle(fixtures):
    ens = fixtures("ab2_centered")
    x = default_start(2)
    f = LetterFunction(first_coordinate_of_first_letter, 1)
    exact = oracle.exact_U(ens, f, ConstantTwist(1.0), x, 0.5, 4)
    z = [estimate_U(ens, f, None, 0.5, 4, 20_000, seed=s, start=x).z_to(exact) for s in range(20)]
    assert sum(abs(v) <= 4 for v in z) >= 19


def test_scalar_line_space():
    ens = discrete([[[2.0]], [[0.5]]])
    exact = oracle.exact_U(ens, None, None, [1.0], 0.0, 2, space=ScalarLine())
    assert exact == pytest.approx(0.5 * math.log(2), abs=1e-15)
    with pytest.raises(ValueError):
        ScalarLine().matrices(np.zeros((1, 2, 2)))


def test_projection_no_op_when_short(rng):
    f = LetterFunction(first_coordinate_of_first_letter, 1)
    proj = project_finite_size(f, 2, 8, PAIR)
    letters = PAIR.sample(rng, (50, 3))
    pts = rng.standard_normal((50, 2))
    np.testing.assert_array_equal(proj.evaluate(0, letters, pts, rng), f.evaluate(0, letters, pts))


def test_projection_to_constant_mean_log_norm():
    f = LetterFunction(log_norm_first_letter, 1)
    exact = 0.5 * (math.log(np.linalg.norm(A, 2)) + math.log(np.linalg.norm(B, 2)))
    rng = chunk_rng(3)
    vals = {}
    for draws in (16, 32):
        proj = project_finite_size(f, 0, draws, PAIR)
        vals[draws] = proj.evaluate(0, np.zeros((4000, 0, 2, 2)), np.ones((4000, 2)), rng)
        se = vals[draws].std(ddof=1) / math.sqrt(vals[draws].size)
        assert abs(vals[draws].mean() - exact) <= 4 * se
    ratio = vals[32].var(ddof=1) / vals[16].var(ddof=1)
    assert 0.4 <= ratio <= 0.6


def test_projection_idempotent():
    f = IdealDelta(depth=6)
    once = project_finite_size(f, 2, 16, PAIR)
    twice = project_finite_size(once, 2, 16, PAIR)
    rng = chunk_rng(4)
    letters = PAIR.sample(rng, (3000, 6))
    pts = sample_stationary(PAIR, side="dual", size=3000, seed=5)
    a = once.evaluate(0, letters, pts, chunk_rng(6))
    b = twice.evaluate(0, letters, pts, chunk_rng(7))
    se = math.hypot(a.std(ddof=1), b.std(ddof=1)) / math.sqrt(a.size)
    assert abs(a.mean() - b.mean()) <= 3 * se


def test_approximation_profile_examples():
    f = LetterFunction(first_coordinate_of_first_letter, 2)
    prof = approximation_profile(PAIR, f, 1.0, [2, 3, 4], N=2000, seed=1)
    np.testing.assert_array_equal(prof.d_hat, 0.0)
    zero = approximation_profile(PAIR, Zero(), 1.0, [0, 1], N=500, seed=1)
    assert zero.c_alpha == 1.0 and zero.c_alpha_stderr == 0.0


def test_ideal_perturbation_projection_decays():
    prof = approximation_profile(PAIR, IdealDelta(depth=30), 0.5, [1, 2, 3, 4, 5, 6], N=4000, seed=2)
    assert prof.decay_fit().negative(0.95)


def test_chain_identity_and_single_atom():
    x = np.array([0.6, 0.8])
    start = ChainState(np.tile(np.eye(2), (3, 1, 1)), x)
    traj = simulate_chain(start, identity(2), 5, rng=1)
    assert [s.counter for s in traj] == list(range(6))
    for s in traj:
        np.testing.assert_array_equal(s.letters, np.tile(np.eye(2), (3, 1, 1)))
        np.testing.assert_allclose(s.point, x)
    single = discrete([A])
    traj = simulate_chain(ChainState(np.tile(A, (2, 1, 1)), x), single, 6, rng=1)
    for k, s in enumerate(traj):
        w = np.linalg.matrix_power(A, k) @ x
        np.testing.assert_allclose(s.point, w / np.linalg.norm(w), atol=1e-12)


def test_chain_one_step_law():
    x = np.array([0.6, 0.8])
    rng = chunk_rng(2)
    moved = []
    for _ in range(3000):
        st = ChainState(PAIR.sample(rng, 2), x)
        moved.append(simulate_chain(st, PAIR, 1, rng=rng)[1].point)
    moved = np.abs(np.array(moved)[:, 0])
    direct = PAIR.sample(chunk_rng(3), 3000) @ x
    direct = np.abs(direct[:, 0] / np.linalg.norm(direct, axis=1))
    assert stats.ks_2samp(moved, direct).pvalue > 0.01


def test_W_chain_identity():
    st = ChainState(np.tile(np.eye(2), (3, 1, 1)), [1.0, 0.0])
    for t in (-0.5, 0.0, 1.5):
        est = estimate_W_chain(st, identity(2), None, t, 4, 300)
        assert est.value == max(t, 0.0)


def test_W_chain_against_oracle(fixtures):
    ens = fixtures("ab2_centered")
    x = default_start(2)
    st = random_state(ens, 1, seed=3, x=x)
    f = FiniteRangeDelta(x, 1)
    exact = oracle.exact_W_chain(ens, st, f, 0.8, 3)
    z = [estimate_W_chain(st, ens, f, 0.8, 3, 20_000, seed=s).z_to(exact) for s in range(20)]
    assert sum(abs(v) <= 4 for v in z) >= 19


@pytest.mark.parametrize("ens", [identity(2), rotation_diagonal([0.0, 0.0])])
def test_martingale_isometries(ens):
    st = random_state(ens, 2, seed=1)
    for r in martingale_residual(st, ens, 5, 500, seed=1):
        assert abs(r.mean) < 1e-12


def _rot(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


@pytest.mark.parametrize("space", [Projective(), DualProjective()], ids=["primal", "dual"])
def test_martingale_centered_laws(fixtures, space):
    # both laws have E sigma(g, x) = 0 at every x, on either side
    pair = discrete([2.0 * _rot(0.3), 0.5 * _rot(1.1)])
    for ens in (pair, fixtures("standard_proximal")):
        rows = martingale_residual(random_state(ens, 2, seed=4, space=space), ens, 20, 100_000, seed=5,
                                   space=space)
        assert max(abs(r.z) for r in rows) <= 3.0


def test_scan_zero_perturbation_and_identity(fixtures):
    ens = fixtures("standard_proximal")
    rep = quasi_monotonicity_scan(ens, Zero(), ConstantTwist(1.0), (0.0, 1.0), (8, 16, 32), 5000, seed=1,
                                  directions=("increasing",))
    assert rep.zero_shift_violations == {"increasing": 0}
    ident = quasi_monotonicity_scan(identity(2), Zero(), None, (0.0, 1.0), (8, 16), 500, seed=1)
    assert ident.passed and ident.A == 0.0
    assert sum(ident.zero_shift_violations.values()) == 0


def test_infinite_perturbation_rejected_and_counted():
    # x orthogonal to every dual point reachable from e2 under diagonal letters
    ens = discrete([np.diag([2.0, 0.5]), np.diag([0.5, 2.0])])
    f = FiniteRangeDelta([1.0, 0.0], 0)
    from condwalk.errors import InfinitePerturbation
    with pytest.raises(InfinitePerturbation):
        estimate_U(ens, f, None, 1.0, 3, 500, space=DualProjective(), start=[0.0, 1.0])
