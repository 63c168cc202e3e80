"""Target harmonic measures: actions on test functions with exact
t-integration, the marginal density, and the identity/asymptotic checkers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .ensemble import default_start
from .harmonic import estimate_V, estimate_variance, survival_counts
from .stats import WeightedEstimate, difference, from_samples, weighted_line
from .streams import chunk_rng, map_chunks
from .testfunctions import KilledStep, ProductTest
from .walk import _as_coords, _walk_chunk, reversed_values


@dataclass(frozen=True)
class RhoPathWeight:
    """Per-path data of the target-measure estimator (arrays over paths)."""

    terminal: np.ndarray
    s: np.ndarray
    lower_cut: np.ndarray


def _sign(direction):
    if direction not in ("plus", "minus"):
        raise ValueError("direction must be 'plus' or 'minus'")
    return 1.0 if direction == "plus" else -1.0


def rho_weights(ensemble, x, n, N, direction="plus", seed=0, workers=1, tag="rho") -> RhoPathWeight:
    """Terminal points, signed ``S_n`` and ``max(0, -min_{k<n} S_k)`` for ``N`` paths."""
    sign = _sign(direction)
    x = _as_coords(x)

    def work(rng, size, _):
        ((mp, _ma, s, v),) = _walk_chunk(ensemble, np.tile(x, (size, 1)), [n], rng, sign)
        return v, s, np.maximum(0.0, -mp)

    parts = map_chunks(work, N, seed, tag, workers)
    return RhoPathWeight(*(np.concatenate([p[i] for p in parts]) for i in range(3)))


def estimate_rho_action(ensemble, x, n, N, h, direction="plus", seed=0, workers=1) -> WeightedEstimate:
    """Per path ``int_{c}^inf t h(x_n, t + s) dt`` in closed form, averaged over paths."""
    sign = _sign(direction)
    x = _as_coords(x)

    def work(rng, size, _):
        ((mp, _ma, s, v),) = _walk_chunk(ensemble, np.tile(x, (size, 1)), [n], rng, sign)
        return h.ramp_action(v, s, np.maximum(0.0, -mp), rng)

    vals = np.concatenate(map_chunks(work, N, seed, "rho", workers))
    return from_samples(vals, seed)


# ---------------------------------------------------------------------------
# marginal density


@dataclass(frozen=True)
class DensityTable:
    u: np.ndarray
    W: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    N: int

    def to_rows(self):
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.u, self.W, self.stderr)]


def density_from_weights(w: RhoPathWeight, u_grid) -> DensityTable:
    """``W(u) = mean_i (u - s_i) 1{u >= c_i + s_i}``, non-decreasing in ``u`` exactly."""
    u = np.asarray(u_grid, dtype=float)
    if np.any(np.diff(u) < 0):
        raise ValueError("u_grid must be sorted")
    a = w.lower_cut + w.s
    order = np.argsort(a, kind="stable")
    a_sorted = np.ascontiguousarray(a[order])
    c_sorted = np.ascontiguousarray(w.lower_cut[order])
    ramp, cut, counts = kernels.ramp_sums(a_sorted, c_sorted, np.ascontiguousarray(u))
    n = a.size
    W = (ramp + cut) / n
    # second moments via prefix sums of s and s^2 (used for error bars only)
    s_sorted = w.s[order]
    ps = np.concatenate([[0.0], np.cumsum(s_sorted)])
    ps2 = np.concatenate([[0.0], np.cumsum(s_sorted ** 2)])
    sum_sq = counts * u ** 2 - 2 * u * ps[counts] + ps2[counts]
    var = np.maximum(sum_sq / n - W ** 2, 0.0)
    return DensityTable(u, W, np.sqrt(var / max(n - 1, 1)), counts, n)


def density_W(ensemble, x, n, N, u_grid, direction="plus", seed=0, workers=1) -> DensityTable:
    return density_from_weights(rho_weights(ensemble, x, n, N, direction, seed, workers), u_grid)


@dataclass(frozen=True)
class TailReport:
    mass: WeightedEstimate
    rate: float
    rate_stderr: float
    rate_positive: bool
    n_fit_points: int


def negative_tail_report(ensemble, x, n, N, direction="plus", seed=0, T=20.0, min_count=20,
                         workers=1, weights=None) -> TailReport:
    """Mass of the target measure on ``(-inf, 0]`` and the exponential rate of ``W`` there.

    The mass is exact per path: ``int_{c+s}^0 (u - s) du = (s^2 - c^2) / 2`` when
    ``c + s < 0``.  The rate is the slope of ``log W`` on ``[-T, 0]`` over grid
    points with at least ``min_count`` contributing paths.
    """
    w = weights if weights is not None else rho_weights(ensemble, x, n, N, direction, seed, workers)
    a = w.lower_cut + w.s
    per_path = np.where(a < 0, 0.5 * (w.s ** 2 - w.lower_cut ** 2), 0.0)
    mass = from_samples(per_path, seed)
    grid = np.linspace(-T, 0.0, 41)
    table = density_from_weights(w, grid)
    ok = (table.counts >= min_count) & (table.W > 0)
    if ok.sum() < 3:
        return TailReport(mass, math.nan, math.nan, False, int(ok.sum()))
    fit = weighted_line(grid[ok], np.log(table.W[ok]), table.stderr[ok] / table.W[ok])
    return TailReport(mass, fit.slope, fit.slope_stderr, fit.positive(0.95), int(ok.sum()))


# ---------------------------------------------------------------------------
# harmonicity at finite n


def harmonicity_residual(ensemble, x, n, N, h, inner_draws=16, seed=0, workers=1) -> WeightedEstimate:
    """Estimate of ``rho_{n+1}(h) - rho_n(Rh)`` on shared paths.

    ``Rh(x', t') = 1{t' >= 0} E h(g x', t' + sigma(g, x'))`` uses exact atom sums
    for discrete laws and ``inner_draws`` fresh elements otherwise.  The
    per-path difference has conditional mean zero given the first ``n`` letters.
    """
    x = _as_coords(x)
    rh = KilledStep(h, ensemble, inner_draws)

    def work(rng, size, _):
        first, second = _walk_chunk(ensemble, np.tile(x, (size, 1)), [n, n + 1], rng, 1.0)
        mp_n, _, s_n, v_n = first
        mp_1, _, s_1, v_1 = second
        killed = rh.ramp_action(v_n, s_n, np.maximum(0.0, -mp_n), rng)
        direct = h.ramp_action(v_1, s_1, np.maximum(0.0, -mp_1), rng)
        return direct - killed

    vals = np.concatenate(map_chunks(work, N, seed, "harmonicity", workers))
    return from_samples(vals, seed)


# ---------------------------------------------------------------------------
# reversal identity


@dataclass(frozen=True)
class ReversalResult:
    lhs: WeightedEstimate
    rhs: WeightedEstimate
    residual: WeightedEstimate
    per_y: list
    rejected_y: int


def reversal_rhs_values(mats, x, phi, h, rng=None):
    """Per path ``int_T^inf (t + R_n) h(g_1...g_n x, t) dt``; NaN on infinite delta."""
    values, finite = reversed_values(mats, x, phi)
    size = mats.shape[0]
    term = kernels.suffix_points(np.ascontiguousarray(mats),
                                 np.ascontiguousarray(np.broadcast_to(x, (size, mats.shape[-1]))))[:, 0]
    last = np.where(finite, values[:, -1], 0.0)
    thr = np.where(finite, np.max(-np.where(finite[:, None], values, 0.0), axis=1), 0.0)
    out = h.ramp_action(term, -last, thr + last, rng)
    return np.where(finite, out, np.nan)


def reversal_residual(ensemble, x, n, N_paths, N_y, h, seed=0, depth=50, workers=1,
                      max_rejections=100) -> ReversalResult:
    """Left side minus right side of the reversal identity.

    The left side is :func:`estimate_rho_action`.  For each of ``N_y`` dual
    points drawn from the dual stationary sampler, the right side is averaged
    over ``N_paths`` fresh paths; a point is redrawn when any pairing
    underflows.
    """
    from .ensemble import run_walk

    x = _as_coords(x)
    lhs = estimate_rho_action(ensemble, x, n, N_paths, h, seed=seed, workers=workers)
    yrng = chunk_rng(seed, "reversal-y")
    per_y, pooled, rejected, j = [], [], 0, 0
    while len(per_y) < N_y:
        _, phi = run_walk(ensemble, default_start(ensemble.dim)[None], depth, yrng, transpose=True)
        phi = phi[0]
        tag = f"reversal-rhs-{j}"
        j += 1

        def work(rng, size, _):
            mats = ensemble.sample(rng, (size, n))
            return reversal_rhs_values(mats, x, phi, h, rng)

        vals = np.concatenate(map_chunks(work, N_paths, seed, tag, workers))
        if np.isnan(vals).any():
            rejected += 1
            if rejected > max_rejections:
                raise RuntimeError("too many dual points with infinite delta")
            continue
        est = from_samples(vals, seed)
        per_y.append((phi, est, difference(lhs, est)))
        pooled.append(vals)
    rhs = from_samples(np.concatenate(pooled), seed)
    return ReversalResult(lhs, rhs, difference(lhs, rhs), per_y, rejected)


# ---------------------------------------------------------------------------
# translation asymptotics


@dataclass(frozen=True)
class TranslationRow:
    t: float
    ratio: float
    ratio_stderr: float
    prediction: float
    prediction_stderr: float

    @property
    def relative_deviation(self) -> float:
        return abs(self.ratio - self.prediction) / abs(self.prediction)


def stationary_phi_mean(ensemble, phi, samples=10_000, seed=0, depth=50) -> WeightedEstimate:
    """``int phi d nu`` from the primal stationary sampler."""
    from .ensemble import run_walk

    rng = chunk_rng(seed, "nu-phi")
    _, v = run_walk(ensemble, np.tile(default_start(ensemble.dim), (samples, 1)), depth, rng)
    return from_samples(phi(v), seed)


def translation_profile(ensemble, x, n, N, h: ProductTest, t_shifts, seed=0, nu_samples=10_000,
                        workers=1):
    """Rows ``(t, rho_n(h(., . - t)) / t, nu(phi) int psi)`` on shared paths."""
    t_shifts = [float(t) for t in t_shifts]
    if any(t <= 0 for t in t_shifts) or any(np.diff(t_shifts) <= 0):
        raise ValueError("t_shifts must be positive and increasing")
    w = rho_weights(ensemble, x, n, N, seed=seed, workers=workers, tag="translation")
    nu_phi = stationary_phi_mean(ensemble, h.phi, nu_samples, seed)
    mass = h.psi.integral()
    rows = []
    for t in t_shifts:
        vals = h.shifted(t).ramp_action(w.terminal, w.s, w.lower_cut) / t
        est = from_samples(vals, seed)
        rows.append(TranslationRow(t, est.value, est.stderr, nu_phi.value * mass, nu_phi.stderr * abs(mass)))
    return rows


# ---------------------------------------------------------------------------
# conditioned local limit diagnostic


@dataclass(frozen=True)
class CLLTRow:
    n: int
    numerator: float
    numerator_stderr: float
    ratio: float
    ratio_stderr: float


@dataclass(frozen=True)
class CLLTDenominator:
    V: WeightedEstimate
    upsilon_sq: float
    rho_h: WeightedEstimate

    @property
    def value(self) -> float:
        """Predicted limit; NaN when the variance is degenerate."""
        if self.upsilon_sq < 1e-8:
            return math.nan
        ups = math.sqrt(self.upsilon_sq)
        return 2 * self.V.value / (math.sqrt(2 * math.pi) * ups ** 3) * self.rho_h.value


def cllt_denominator(ensemble, x, t, h, n_ref, N_ref, seed=0, workers=1) -> CLLTDenominator:
    """``V(x,t)``, ``upsilon^2`` and ``rho(h)`` estimated at horizon ``n_ref``."""
    var = estimate_variance(ensemble, x, n_ref, N_ref, seed=seed, workers=workers)
    V = estimate_V(ensemble, x, t, n_ref, N_ref, seed=seed + 1, workers=workers)
    rho = estimate_rho_action(ensemble, x, n_ref, N_ref, h, seed=seed + 2, workers=workers)
    return CLLTDenominator(V, var.upsilon_sq, rho)


def cllt_numerators(ensemble, x, t, n_list, N, h, seed=0, workers=1):
    """``n^{3/2} E[h(x_n, t + S_n); tau > n - 1]`` per ``n``, with early killing of paths."""
    checkpoints = sorted({int(n) - 1 for n in n_list})
    if checkpoints[0] < 0:
        raise ValueError("horizons must be >= 1")
    x = _as_coords(x)
    positive = [c for c in checkpoints if c > 0]

    def collect(rng, k, v, s):
        if v.shape[0] == 0:
            return k, np.zeros(0)
        g = ensemble.sample(rng, v.shape[0])
        img = np.einsum("nij,nj->ni", g, v)
        r = np.linalg.norm(img, axis=1)
        return k, h.evaluate(img / r[:, None], t + s + np.log(r))

    sums = {k: 0.0 for k in checkpoints}
    sq = {k: 0.0 for k in checkpoints}
    if 0 in checkpoints:
        def work0(rng, size, _):
            return collect(rng, 0, np.tile(x, (size, 1)), np.zeros(size))[1]
        vals = np.concatenate(map_chunks(work0, N, seed, "cllt-0", workers))
        sums[0], sq[0] = float(vals.sum()), float((vals ** 2).sum())
    if positive:
        _, _, parts = survival_counts(ensemble, x, t, positive, N, seed, workers=workers, tag="cllt",
                                      on_checkpoint=collect)
        for chunk in parts:
            for k, vals in chunk:
                sums[k] += float(vals.sum())
                sq[k] += float((vals ** 2).sum())
    rows = []
    for k in checkpoints:
        n = k + 1
        mean = sums[k] / N
        var = max(sq[k] / N - mean ** 2, 0.0)
        scale = n ** 1.5
        rows.append((n, scale * mean, scale * math.sqrt(var / (N - 1))))
    return rows


def cllt_ratio(ensemble, x, t, n_list, N, h, seed=0, denominator=None, n_ref=None, N_ref=None, workers=1):
    """Ratio of the scaled killed expectation to its predicted limit, per ``n``.

    Diagnostic only.  ``denominator`` may be supplied (e.g. from a long
    reference run); otherwise it is estimated at ``n_ref`` with ``N_ref`` paths.
    """
    if denominator is None:
        n_ref = n_ref or 4 * max(n_list)
        N_ref = N_ref or N
        denominator = cllt_denominator(ensemble, x, t, h, n_ref, N_ref, seed=seed + 7, workers=workers)
    den = denominator.value
    rows = []
    for n, num, se in cllt_numerators(ensemble, x, t, n_list, N, h, seed, workers):
        if math.isnan(den):
            rows.append(CLLTRow(n, num, se, math.nan, math.nan))
        else:
            rows.append(CLLTRow(n, num, se, num / den, se / abs(den)))
    return rows, denominator


def cllt_trend(rows) -> float:
    """Slope of the ratio against ``1/sqrt(n)`` (stabilisation statistic)."""
    n = np.array([r.n for r in rows], dtype=float)
    y = np.array([r.ratio for r in rows])
    se = np.array([max(r.ratio_stderr, 1e-12) for r in rows])
    return weighted_line(1 / np.sqrt(n), y, se).slope
