"""Acceptance suite: eleven numbered checks with fixed sizes and tolerances.

Each check returns a :class:`CriterionResult`; :func:`run_suite` runs a
selection, optionally writing one JSON summary per check.  Sizes were chosen
so the whole suite fits a single core in well under the per-check budgets.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .config import fixture_ensemble
from .ensemble import default_start
from .harmonic import V_profile, geometric_grid, survival_curve
from .perturbed import (ConstantTwist, DualProjective, FiniteRangeDelta, Projective, Zero, chain_disintegration,
                        estimate_U, estimate_W_chain, martingale_residual, quasi_monotonicity_scan, random_state)
from .projective import (GroupElement, cocycle, cocycle_rows, cohomology_residual, cohomology_residual_rows,
                         matvec, normalize_dual, normalize_point, normalize_rows)
from .report import STATEMENTS, write_summary
from .target import (cllt_denominator, cllt_numerators, density_from_weights, estimate_rho_action,
                     harmonicity_residual, negative_tail_report, rho_weights, translation_profile)
from .testfunctions import Constant, KilledStep, SquaredCoordinate, hat, product, trapezoid


@dataclass
class CriterionResult:
    criterion: int
    status: str                      # "pass", "fail" or "diagnostic"
    numbers: dict
    runtime: float
    budget: float
    details: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return STATEMENTS[f"acceptance-{self.criterion}"]

    @property
    def passed(self) -> bool:
        return self.status != "fail"

    def line(self) -> str:
        nums = ", ".join(f"{k}={_fmt(v)}" for k, v in self.numbers.items())
        return (f"criterion {self.criterion:>2} {self.status.upper():<10} {self.name} "
                f"[{self.runtime:.1f}s / {self.budget:.0f}s] {nums}")

    def to_summary(self) -> dict:
        return {"criterion": self.criterion, "status": self.status, "numbers": self.numbers,
                "runtime_s": self.runtime, "budget_s": self.budget, "details": self.details}


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _status(ok: bool) -> str:
    return "pass" if ok else "fail"


# ---------------------------------------------------------------------------
# 1. algebraic identities


def _random_batch(rng, size, d):
    mats = rng.standard_normal((size, d, d))
    v = normalize_rows(rng.standard_normal((size, d)))
    return mats, v


def criterion_1(seed=0, workers=1, size=10_000):
    rng = np.random.default_rng([seed, 1])
    worst = {"cocycle": 0.0, "dual_cocycle": 0.0, "scalar_shift": 0.0, "cohomology": 0.0, "scalar_api": 0.0}
    for d in (2, 3, 5):
        g1, v = _random_batch(rng, size, d)
        g2, phi = _random_batch(rng, size, d)
        g1v = normalize_rows(matvec(g1, v))
        res = cocycle_rows(g2 @ g1, v) - cocycle_rows(g2, g1v) - cocycle_rows(g1, v)
        worst["cocycle"] = max(worst["cocycle"], float(np.max(np.abs(res))))
        # dual action of g is g^{-T}
        d1 = np.swapaxes(np.linalg.inv(g1), -1, -2)
        d2 = np.swapaxes(np.linalg.inv(g2), -1, -2)
        d1phi = normalize_rows(matvec(d1, phi))
        res = cocycle_rows(d2 @ d1, phi) - cocycle_rows(d2, d1phi) - cocycle_rows(d1, phi)
        worst["dual_cocycle"] = max(worst["dual_cocycle"], float(np.max(np.abs(res))))
        c = np.exp(rng.uniform(-3.0, 3.0, size))
        res = cocycle_rows(c[:, None, None] * g1, v) - cocycle_rows(g1, v) - np.log(c)
        worst["scalar_shift"] = max(worst["scalar_shift"], float(np.max(np.abs(res))))
        res = cohomology_residual_rows(g1, v, phi)
        worst["cohomology"] = max(worst["cohomology"], float(np.max(np.abs(res))))
        # the scalar API on a subset, compared with the batched rows
        for i in range(50):
            g = GroupElement(g1[i])
            x, y = normalize_point(v[i]), normalize_dual(phi[i])
            worst["scalar_api"] = max(worst["scalar_api"],
                                      abs(cohomology_residual(g, x, y) - res[i]),
                                      abs(cocycle(g, x) - cocycle_rows(g1[i:i + 1], v[i:i + 1])[0]))
    ok = all(math.isfinite(w) and w < 1e-9 for w in worst.values())
    return _status(ok), {f"max_{k}": w for k, w in worst.items()}, {}


# ---------------------------------------------------------------------------
# 2. exact reversal identity


def criterion_2(seed=0, workers=1):
    rng = np.random.default_rng([seed, 2])
    h_psi = trapezoid(-1.0, 0.5, 2.0, 4.0)
    worst, count = 0.0, 0
    rows = []
    for name in ("scalar_pm_log2", "ab2", "ab3"):
        ens = fixture_ensemble(name)
        d = ens.dim
        h = product(SquaredCoordinate(0), h_psi)
        x = default_start(d)
        ys = normalize_rows(rng.standard_normal((3, d))) if d > 1 else np.ones((3, 1))
        for n in range(1, 6):
            for y in ys:
                lhs, rhs = oracle.exact_duality_sides(ens, x, y, n, h)
                worst = max(worst, abs(lhs - rhs))
                count += 1
                rows.append((name, n, lhs, rhs))
    return _status(worst < 1e-10), {"cases": count, "max_abs_diff": worst}, {"rows": rows}


# ---------------------------------------------------------------------------
# 3. Monte Carlo against exact enumeration


def criterion_3(seed=0, workers=1, seeds=100, N=100_000):
    ens = fixture_ensemble("ab2_centered")
    x = default_start(2)
    h = product(SquaredCoordinate(0), hat(0.0, 4.0))
    f = FiniteRangeDelta(x, 2)
    dual = DualProjective()
    state = random_state(ens, 2, seed=17, x=x)
    exact = {
        "V": oracle.exact_V(ens, x, 1.0, 5),
        "rho": oracle.exact_rho_action(ens, x, 5, h),
        "U": oracle.exact_U(ens, f, ConstantTwist(1.0), x, 1.0, 4, space=dual),
        "W_chain": oracle.exact_W_chain(ens, state, f, 1.0, 3),
    }
    z = {k: [] for k in exact}
    for i in range(seeds):
        s = 1000 * seed + 10 * i
        z["V"].append(_estimate_V(ens, x, s, workers, N).z_to(exact["V"]))
        z["rho"].append(estimate_rho_action(ens, x, 5, N, h, seed=s + 1, workers=workers).z_to(exact["rho"]))
        z["U"].append(estimate_U(ens, f, None, 1.0, 4, N, seed=s + 2, space=dual, start=x,
                                 workers=workers).z_to(exact["U"]))
        z["W_chain"].append(estimate_W_chain(state, ens, f, 1.0, 3, N, seed=s + 3,
                                             workers=workers).z_to(exact["W_chain"]))
    frac = {k: float(np.mean(np.abs(v) <= 4.0)) for k, v in z.items()}
    numbers = {f"within4_{k}": frac[k] for k in z}
    numbers.update({f"max_abs_z_{k}": float(np.max(np.abs(v))) for k, v in z.items()})
    return _status(all(v >= 0.99 for v in frac.values())), numbers, {"exact": exact}


def _estimate_V(ens, x, s, workers, N):
    from .harmonic import estimate_V

    return estimate_V(ens, x, 1.0, 5, N, seed=s, workers=workers)


# ---------------------------------------------------------------------------
# 4. monotonicity and lower bound of V_n


def criterion_4(seed=0, workers=1, N=20_000):
    n_list = (8, 16, 32, 64, 128)
    t_list = (-1.0, 0.0, 1.0, 5.0, 20.0)
    numbers = {}
    ok = True
    for k, name in enumerate(("standard_proximal", "rotation_diagonal3")):
        ens = fixture_ensemble(name, seed=seed)
        prof = V_profile(ens, default_start(ens.dim), t_list, n_list, N, seed=seed + 40 + k, workers=workers)
        mono = lower = 0
        worst = math.inf
        for t in t_list:
            # n == m holds trivially
            for n, m in itertools.combinations(n_list, 2):
                a, b = prof[(n, t)], prof[(m, t)]
                slack = b.value + 3 * (a.stderr + b.stderr) - a.value
                worst = min(worst, slack)
                mono += slack < 0
            for n in n_list:
                e = prof[(n, t)]
                lower += e.value < max(t, 0.0) - 3 * e.stderr
        numbers[f"{name}_monotone_violations"] = int(mono)
        numbers[f"{name}_lower_violations"] = int(lower)
        numbers[f"{name}_min_slack"] = float(worst)
        ok &= mono == 0 and lower == 0
    return _status(ok), numbers, {}


# ---------------------------------------------------------------------------
# 5. harmonicity of the target measure at finite n


def criterion_5(seed=0, workers=1, N=100_000):
    ens = fixture_ensemble("standard_proximal", seed=seed)
    x = default_start(2)
    h = product(SquaredCoordinate(0), hat(0.0, 4.0))
    numbers = {}
    ok = True
    for n in (5, 20):
        est = harmonicity_residual(ens, x, n, N, h, seed=seed + 50 + n, workers=workers)
        z = est.z_to(0.0)
        numbers[f"z_n{n}"] = z
        ok &= abs(z) <= 3.0
    disc = fixture_ensemble("ab2_centered")
    worst = 0.0
    for n in range(1, 5):
        direct = oracle.exact_rho_action(disc, x, n + 1, h)
        stepped = oracle.exact_rho_action(disc, x, n, KilledStep(h, disc))
        worst = max(worst, abs(direct - stepped))
    numbers["exact_max_abs_residual"] = worst
    ok &= worst < 1e-10
    return _status(ok), numbers, {}


# ---------------------------------------------------------------------------
# 6. density properties


def criterion_6(seed=0, workers=1, n=400, N=200_000):
    ens = fixture_ensemble("standard_proximal", seed=seed)
    x = default_start(2)
    w = rho_weights(ens, x, n, N, seed=seed + 60, workers=workers, tag="density")
    grid = np.linspace(-40.0, 80.0, 10_000)
    table = density_from_weights(w, grid)
    steps = np.diff(table.W)
    monotone = bool(np.all(steps >= 0))
    at40 = density_from_weights(w, [40.0])
    ratio = float(at40.W[0] / 40.0)
    tail = negative_tail_report(ens, x, n, N, seed=seed + 60, weights=w)
    ok = monotone and 0.85 <= ratio <= 1.15 and tail.rate_positive
    numbers = {"grid_points": grid.size, "min_increment": float(steps.min()), "W40_over_40": ratio,
               "W40_over_40_stderr": float(at40.stderr[0] / 40.0), "tail_rate": tail.rate,
               "tail_rate_stderr": tail.rate_stderr, "negative_mass": tail.mass.value}
    return _status(ok), numbers, {}


# ---------------------------------------------------------------------------
# 7. start-point independence and translation asymptotics


def criterion_7(seed=0, workers=1):
    ens = fixture_ensemble("standard_proximal", seed=seed)
    h = product(SquaredCoordinate(0), hat(0.0, 10.0))
    xs = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, -1.0]) / math.sqrt(2.0)]
    ests = [estimate_rho_action(ens, x, 200, 50_000, h, seed=seed + 70 + i, workers=workers)
            for i, x in enumerate(xs)]
    zs = [(a.value - b.value) / math.hypot(a.stderr, b.stderr) for a, b in itertools.combinations(ests, 2)]
    # a psi centred at 0 keeps the O(1/t) centroid term out of the comparison
    rows = translation_profile(ens, xs[0], 400, 100_000, product(SquaredCoordinate(0), hat(-5.0, 5.0)),
                               [10.0, 25.0, 50.0], seed=seed + 75, workers=workers)
    dev = rows[-1].relative_deviation
    ok = all(abs(z) <= 3.0 for z in zs) and dev < 0.15
    numbers = {"rho_values": [e.value for e in ests], "max_pair_abs_z": float(max(abs(z) for z in zs)),
               "relative_deviation_t50": dev}
    return _status(ok), numbers, {"translation": [(r.t, r.ratio, r.prediction) for r in rows]}


# ---------------------------------------------------------------------------
# 8. survival decay


def criterion_8(seed=0, workers=1, N=20_000):
    grid = geometric_grid(64, 4096, 2)
    numbers = {}
    ok = True
    for k, name in enumerate(("scalar_pm_log2", "standard_proximal", "rotation_diagonal3")):
        ens = fixture_ensemble(name, seed=seed)
        curve = survival_curve(ens, default_start(ens.dim), 0.0, grid, N, seed=seed + 80 + k, workers=workers)
        fit = curve.loglog_fit(64, 4096)
        numbers[f"{name}_slope"] = fit.slope
        numbers[f"{name}_slope_upper95"] = fit.slope_interval(0.95)[1]
        if name == "scalar_pm_log2":
            ok &= -0.65 <= fit.slope <= -0.38
        else:
            ok &= fit.negative(0.95)
    return _status(ok), numbers, {}


# ---------------------------------------------------------------------------
# 9. chain machinery


def criterion_9(seed=0, workers=1, N=100_000):
    ens = fixture_ensemble("standard_proximal", seed=seed)
    x = default_start(2)
    numbers = {}
    ok = True
    for space in (DualProjective(), Projective()):
        rows = martingale_residual(random_state(ens, 2, seed=seed + 90, space=space), ens, 20, N,
                                   seed=seed + 91, space=space, workers=workers)
        worst = max(abs(r.z) for r in rows)
        numbers[f"martingale_max_abs_z_{space.name}"] = worst
        ok &= worst <= 3.0
    dual = DualProjective()
    f = FiniteRangeDelta(x, 2)
    for j, t in enumerate((0.5, 2.0)):
        a = chain_disintegration(ens, f, t, 10, 2, N, seed=seed + 92 + j, space=dual, workers=workers)
        b = estimate_U(ens, f, None, t, 10, N, seed=seed + 94 + j, space=dual, lag=2, workers=workers)
        z = (a.value - b.value) / math.hypot(a.stderr, b.stderr)
        numbers[f"disintegration_z_t{t:g}"] = z
        ok &= abs(z) <= 3.0
    return _status(ok), numbers, {}


# ---------------------------------------------------------------------------
# 10. quasi-monotonicity scan


def criterion_10(seed=0, workers=1, N=20_000):
    ens = fixture_ensemble("standard_proximal", seed=seed)
    x = default_start(2)
    dual = DualProjective()
    n_list = (16, 32, 64, 128)
    base = quasi_monotonicity_scan(ens, Zero(), ConstantTwist(1.0), (0.0, 1.0, 5.0), n_list, N,
                                   seed=seed + 100, space=dual, directions=("increasing",), workers=workers)
    zero_viol = int(sum(base.zero_shift_violations.values()))
    pert = quasi_monotonicity_scan(ens, FiniteRangeDelta(x, max(n_list)), ConstantTwist(1.0), (0.0, 1.0, 5.0),
                                   n_list, N, seed=seed + 101, space=dual, workers=workers)
    ok = zero_viol == 0 and pert.passed and math.isfinite(pert.A)
    numbers = {"zero_f_violations": zero_viol, "fitted_A": pert.A, "fitted_b": pert.b}
    return _status(ok), numbers, {}


# ---------------------------------------------------------------------------
# 11. conditioned local limit ratio (diagnostic)


def criterion_11(seed=0, workers=1, seeds=20, N=1_000_000, n=50, n_ref=800, N_ref=200_000):
    ens = fixture_ensemble("lognormal1")
    x = np.array([1.0])
    h = product(Constant(1.0), hat(0.0, 10.0))
    den = cllt_denominator(ens, x, 0.0, h, n_ref, N_ref, seed=seed + 110, workers=workers).value
    closer = 0
    ratios = []
    for i in range(seeds):
        rows = dict((m, num) for m, num, _ in cllt_numerators(ens, x, 0.0, (n, 4 * n), N, h,
                                                               seed=1000 * seed + 111 + i, workers=workers))
        r_n, r_4n = rows[n] / den, rows[4 * n] / den
        ratios.append((r_n, r_4n))
        closer += abs(r_4n - 1.0) < abs(r_n - 1.0)
    frac = closer / seeds
    numbers = {"fraction_4n_closer": frac, "mean_ratio_n": float(np.mean([r[0] for r in ratios])),
               "mean_ratio_4n": float(np.mean([r[1] for r in ratios])), "denominator": den}
    return ("diagnostic" if frac >= 0.7 else "fail"), numbers, {"ratios": ratios}


# ---------------------------------------------------------------------------


CRITERIA = {
    1: (criterion_1, 10.0),
    2: (criterion_2, 60.0),
    3: (criterion_3, 300.0),
    4: (criterion_4, 120.0),
    5: (criterion_5, 180.0),
    6: (criterion_6, 300.0),
    7: (criterion_7, 600.0),
    8: (criterion_8, 180.0),
    9: (criterion_9, 180.0),
    10: (criterion_10, 600.0),
    11: (criterion_11, 900.0),
}


def run_criterion(k: int, seed=0, workers=1) -> CriterionResult:
    fn, budget = CRITERIA[k]
    t0 = time.perf_counter()
    status, numbers, details = fn(seed=seed, workers=workers)
    runtime = time.perf_counter() - t0
    if runtime > budget:
        status = "fail"
        numbers = {**numbers, "over_budget": True}
    return CriterionResult(k, status, numbers, runtime, budget, details)


def parse_selection(criteria) -> list:
    if criteria in (None, "all"):
        return sorted(CRITERIA)
    if isinstance(criteria, str):
        criteria = [c for c in criteria.split(",") if c.strip()]
    out = sorted({int(c) for c in criteria})
    bad = [c for c in out if c not in CRITERIA]
    if bad:
        raise ValueError(f"unknown criteria {bad}; choose from 1..{max(CRITERIA)}")
    return out


def run_suite(criteria="all", seed=0, workers=1, out=None) -> list:
    """Run the selected criteria in order; write ``criterion_<k>.json`` into ``out`` if given."""
    results = []
    for k in parse_selection(criteria):
        r = run_criterion(k, seed=seed, workers=workers)
        if out is not None:
            write_summary(out, f"criterion_{k:02d}", r.to_summary())
        results.append(r)
    return results
