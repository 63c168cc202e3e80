import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from condwalk import oracle
from condwalk.ensemble import default_start, discrete, identity, log_normal, rotation_diagonal
from condwalk.errors import DegenerateVariance
from condwalk.target import (CLLTDenominator, RhoPathWeight, cllt_denominator, cllt_numerators, cllt_ratio,
                             cllt_trend, density_from_weights, density_W, estimate_rho_action,
                             harmonicity_residual, negative_tail_report, reversal_residual, rho_weights,
                             stationary_phi_mean, translation_profile)
from condwalk.stats import WeightedEstimate
from condwalk.testfunctions import Constant, SquaredCoordinate, SumTest, hat, product, trapezoid

SCALAR = discrete([[[2.0]], [[0.5]]])
PSI = trapezoid(-1.0, 0.5, 2.0, 4.0)


def _quad(f, a, b, points=()):
    return integrate.quad(f, a, b, points=list(points), limit=200)[0]


def test_identity_rho_action():
    x = np.array([0.6, 0.8])
    h = product(SquaredCoordinate(1), PSI)
    est = estimate_rho_action(identity(2), x, 7, 500, h)
    expected = 0.64 * _quad(lambda t: t * float(PSI(np.array([t]))[0]), 0, 4, [0.5, 2.0])
    assert est.stderr == 0.0 and est.value == pytest.approx(expected, abs=1e-12)


def test_rho_against_oracle(fixtures):
    ens = fixtures("three_atoms2")
    x = default_start(2)
    h = product(SquaredCoordinate(0), hat(-1.0, 3.0))
    exact = oracle.exact_rho_action(ens, x, 4, h)
    z = [estimate_rho_action(ens, x, 4, 20_000, h, seed=s).z_to(exact) for s in range(20)]
    assert sum(abs(v) <= 4 for v in z) >= 19


def test_rho_one_step_far_support(fixtures):
    ens = fixtures("three_atoms2")
    x = default_start(2)
    psi = hat(10.0, 11.0)
    h = product(SquaredCoordinate(0), psi)
    expected = 0.0
    for w, a in zip(ens.weights, ens.atoms):
        img = a @ x
        r = np.linalg.norm(img)
        s = math.log(r)
        phi = (img[0] / r) ** 2
        expected += w * phi * _quad(lambda t: t * float(psi(np.array([t + s]))[0]), 0, 12, [10 - s, 10.5 - s, 11 - s])
    est = estimate_rho_action(ens, x, 1, 50_000, h, seed=2)
    assert est.within(expected, 4, atol=1e-12)


def test_identity_density():
    u = np.linspace(-5, 5, 41)
    table = density_W(identity(2), [1.0, 0.0], 5, 200, u)
    np.testing.assert_allclose(table.W, np.where(u >= 0, u, 0.0), atol=1e-12)


@given(arrays(float, 50, elements=st.floats(-20, 20)), arrays(float, 50, elements=st.floats(0, 10)),
       st.floats(-30, 0), st.floats(0.01, 30))
def test_density_non_decreasing_exactly(s, c, lo, width):
    w = RhoPathWeight(np.ones((50, 1)), s, c)
    table = density_from_weights(w, np.linspace(lo, lo + width, 257))
    assert np.all(np.diff(table.W) >= 0)


def test_density_growth_and_tail(fixtures):
    ens = fixtures("standard_proximal")
    w = rho_weights(ens, default_start(2), 200, 50_000, seed=5)
    at40 = density_from_weights(w, [40.0]).W[0]
    assert 0.85 <= at40 / 40 <= 1.15
    far = density_from_weights(w, [-40.0, -35.0, -31.0]).W
    assert np.all(far < 1e-3)
    rep = negative_tail_report(ens, default_start(2), 200, 50_000, seed=5, weights=w)
    assert rep.rate_positive


@given(st.integers(0, 100))
def test_rho_linear_and_positive_on_shared_paths(seed):
    ens = discrete([[[2.0, 1.0], [1.0, 1.0]], [[1.0, 0.0], [1.0, 1.0]]])
    ens = ens.rescaled(0.534)
    x = default_start(2)
    h1 = product(SquaredCoordinate(0), hat(0.0, 3.0))
    h2 = product(Constant(1.0), trapezoid(-2.0, 0.0, 1.0, 4.0))
    a = estimate_rho_action(ens, x, 6, 300, h1, seed=seed)
    b = estimate_rho_action(ens, x, 6, 300, h2, seed=seed)
    c = estimate_rho_action(ens, x, 6, 300, SumTest((h1, h2), (1.5, -0.25)), seed=seed)
    assert abs(c.value - (1.5 * a.value - 0.25 * b.value)) < 1e-12
    assert a.value >= 0 and b.value >= 0


def test_harmonicity_identity_zero():
    h = product(Constant(1.0), PSI)
    est = harmonicity_residual(identity(2), [1.0, 0.0], 4, 500, h)
    assert est.value == 0.0 and est.stderr == 0.0


def test_harmonicity_finite_support(fixtures):
    ens = fixtures("ab2_centered")
    h = product(SquaredCoordinate(0), hat(0.0, 4.0))
    est = harmonicity_residual(ens, default_start(2), 3, 50_000, h, seed=3)
    assert abs(est.value) <= 3 * est.stderr


@pytest.mark.slow
def test_harmonicity_over_seeds(fixtures):
    ens = fixtures("standard_proximal")
    h = product(SquaredCoordinate(0), hat(0.0, 4.0))
    ok = sum(abs(harmonicity_residual(ens, default_start(2), 20, 10_000, h, seed=s).z_to(0.0)) <= 3
             for s in range(100))
    assert ok >= 95


def test_reversal_identity():
    h = product(Constant(1.0), PSI)
    r = reversal_residual(identity(2), [1.0, 0.0], 3, 200, 5, h, seed=1)
    expected = _quad(lambda t: t * float(PSI(np.array([t]))[0]), 0, 4, [0.5, 2.0])
    assert r.lhs.value == pytest.approx(expected, abs=1e-12)
    assert r.rhs.value == pytest.approx(expected, abs=1e-12)


def test_reversal_continuous(fixtures):
    ens = fixtures("standard_proximal")
    h = product(SquaredCoordinate(0), hat(0.0, 4.0))
    r = reversal_residual(ens, default_start(2), 10, 20_000, 16, h, seed=2)
    assert abs(r.residual.value) <= 3 * r.residual.stderr
    assert r.rejected_y == 0


def test_translation_identity():
    psi = hat(-2.0, 2.0)
    rows = translation_profile(identity(2), [1.0, 0.0], 3, 200, product(Constant(1.0), psi), [5.0, 50.0, 500.0],
                               nu_samples=200)
    for r in rows:
        expected = _quad(lambda u: u * float(psi(np.array([u - r.t]))[0]), max(0.0, r.t - 2), r.t + 2, [r.t]) / r.t
        assert r.ratio == pytest.approx(expected, rel=1e-12)
    assert rows[-1].relative_deviation < 1e-2


def test_translation_prediction_self_consistent(fixtures):
    ens = fixtures("standard_proximal")
    a = stationary_phi_mean(ens, SquaredCoordinate(0), 10_000, seed=1)
    b = stationary_phi_mean(ens, SquaredCoordinate(0), 10_000, seed=2)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


def test_negative_tail_identity_and_scalar():
    assert negative_tail_report(identity(2), [1.0, 0.0], 5, 200).mass.value == 0.0
    masses = [negative_tail_report(SCALAR, [1.0], n, 40_000, seed=n).mass for n in (100, 200, 400)]
    assert masses[0].value - 1.645 * masses[0].stderr > 0
    for a in masses:
        for b in masses:
            assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


def test_cllt_rows_finite():
    ens = log_normal(1, 1.0)
    h = product(Constant(1.0), hat(0.0, 10.0))
    rows, den = cllt_ratio(ens, [1.0], 0.0, [10, 20, 40], 20_000, h, seed=1, n_ref=100, N_ref=20_000)
    assert all(math.isfinite(r.ratio) and r.numerator > 0 for r in rows)
    assert math.isfinite(cllt_trend(rows))


def test_cllt_rotations_degenerate():
    h = product(Constant(1.0), hat(0.0, 10.0))
    with pytest.warns(DegenerateVariance):
        rows, den = cllt_ratio(rotation_diagonal([0.0, 0.0]), [1.0, 0.0], 0.0, [5, 10], 1000, h, n_ref=20)
    assert math.isnan(den.value) and all(math.isnan(r.ratio) for r in rows)


@pytest.mark.slow
def test_cllt_scalar_surrogate_large_n():
    ens = log_normal(1, 1.0)
    h = product(Constant(1.0), hat(0.0, 10.0))
    # Gaussian increments with unit variance: V(0) = 1/sqrt(2), upsilon^2 = 1
    rho = cllt_denominator(ens, [1.0], 0.0, h, 800, 100_000, seed=3).rho_h
    den = CLLTDenominator(WeightedEstimate(1 / math.sqrt(2), 0.0, 1, 0), 1.0, rho)
    (n, num, se), = cllt_numerators(ens, [1.0], 0.0, [2000], 200_000, h, seed=4)
    assert 0.7 <= num / den.value <= 1.3
