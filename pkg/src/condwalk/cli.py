"""Command-line experiment runner.

Every estimator and checker is a subcommand.  Each run writes a JSON summary
(and a CSV table where the output is tabular) into ``--out`` or prints the
JSON to stdout.  Exit codes: 0 success, 2 an assumption diagnostic fired,
1 error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import traceback
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import ensemble as ens_mod
from . import harmonic, oracle, perturbed, target
from .errors import CondWalkError, ConfigError, DiagnosticWarning, MissingRun
from .report import dumps, emit_report, write_summary, write_table

log = logging.getLogger("condwalk")


@dataclass
class RunResult:
    summary: dict
    table: tuple = None          # (header, rows)
    extra_tables: dict = field(default_factory=dict)
    status: str = "ok"


def _est(e):
    return {"value": e.value, "stderr": e.stderr, "n_samples": e.n_samples}


# ---------------------------------------------------------------------------
# subcommands


def run_lyapunov(cfg, ens):
    w = cfg.walk
    est = ens_mod.estimate_lyapunov(ens, w["n"], w["replicas"], seed=cfg.seed, workers=cfg.workers)
    return RunResult({"value": est.lambda_hat, "stderr": est.stderr, "n_samples": est.replicas,
                      "steps": est.steps})


def run_center(cfg, ens):
    out = ens_mod.center(ens, cfg.ensemble["center_tolerance"], seed=cfg.seed, workers=cfg.workers)
    c = out.centering
    return RunResult({"value": out.scale, "stderr": None, "n_samples": c.replicas,
                      "lambda_after": c.lambda_hat, "lambda_after_stderr": c.stderr})


def run_harmonic(cfg, ens):
    w = cfg.walk
    x = cfgmod.start_point(cfg)
    ts = sorted({float(w["t"]), *w["t_grid"]})
    ns = sorted({w["n"], *[n for n in w["n_list"] if n <= w["n"]]})
    prof = harmonic.V_profile(ens, x, ts, ns, w["N"], w["direction"], cfg.seed, cfg.workers)
    main = prof[(w["n"], float(w["t"]))]
    rows = [(n, t, prof[(n, t)].value, prof[(n, t)].stderr) for n in ns for t in ts]
    return RunResult(_est(main), (("n", "t", "V", "stderr"), rows))


def run_variance(cfg, ens):
    w = cfg.walk
    est = harmonic.estimate_variance(ens, cfgmod.start_point(cfg), w["n"], w["N"], cfg.seed, cfg.workers)
    return RunResult({"value": est.upsilon_sq, "stderr": est.stderr, "n_samples": est.n_used})


def run_survival(cfg, ens):
    w = cfg.walk
    n_list = sorted(set(w["n_list"]))
    curve = harmonic.survival_curve(ens, cfgmod.start_point(cfg), w["t"], n_list, w["N"], cfg.seed,
                                    w["direction"], cfg.workers)
    fit = curve.loglog_fit()
    rows = list(zip(curve.n.tolist(), curve.prob.tolist(), curve.stderr.tolist()))
    return RunResult({"value": fit.slope, "stderr": fit.slope_stderr, "n_samples": curve.N},
                     (("n", "survival", "stderr"), rows))


def run_rho(cfg, ens):
    w = cfg.walk
    h = cfgmod.build_test_function(cfg)
    est = target.estimate_rho_action(ens, cfgmod.start_point(cfg), w["n"], w["N"], h, w["direction"],
                                     cfg.seed, cfg.workers)
    return RunResult(_est(est))


def run_density(cfg, ens):
    w = cfg.walk
    grid = np.asarray(w["u_grid"]) if w["u_grid"] else np.linspace(-20.0, 60.0, 81)
    tab = target.density_W(ens, cfgmod.start_point(cfg), w["n"], w["N"], np.sort(grid), w["direction"],
                           cfg.seed, cfg.workers)
    return RunResult({"value": None, "stderr": None, "n_samples": tab.N,
                      "monotone": bool(np.all(np.diff(tab.W) >= 0))},
                     (("u", "W", "stderr"), tab.to_rows()))


def run_harmonicity(cfg, ens):
    w = cfg.walk
    est = target.harmonicity_residual(ens, cfgmod.start_point(cfg), w["n"], w["N"], cfgmod.build_test_function(cfg),
                                      w["inner_draws"], cfg.seed, cfg.workers)
    return RunResult(_est(est))


def run_reversal(cfg, ens):
    w = cfg.walk
    res = target.reversal_residual(ens, cfgmod.start_point(cfg), w["n"], w["N"], w["n_y"],
                                   cfgmod.build_test_function(cfg), cfg.seed, w["depth"], cfg.workers)
    rows = [(i, *map(float, phi), e.value, e.stderr, r.value, r.stderr) for i, (phi, e, r) in enumerate(res.per_y)]
    d = ens.dim
    header = ("y_index", *[f"phi_{i}" for i in range(d)], "rhs", "rhs_stderr", "residual", "residual_stderr")
    return RunResult({**_est(res.residual), "lhs": res.lhs.value, "rhs": res.rhs.value,
                      "rejected_y": res.rejected_y}, (header, rows))


def run_translation(cfg, ens):
    w = cfg.walk
    rows = target.translation_profile(ens, cfgmod.start_point(cfg), w["n"], w["N"], cfgmod.build_test_function(cfg),
                                      w["t_shifts"], cfg.seed, workers=cfg.workers)
    last = rows[-1]
    table = [(r.t, r.ratio, r.ratio_stderr, r.prediction, r.prediction_stderr, r.relative_deviation) for r in rows]
    return RunResult({"value": last.relative_deviation, "stderr": None, "n_samples": w["N"]},
                     (("t", "ratio", "ratio_stderr", "prediction", "prediction_stderr", "relative_deviation"), table))


def run_tail(cfg, ens):
    w = cfg.walk
    rep = target.negative_tail_report(ens, cfgmod.start_point(cfg), w["n"], w["N"], w["direction"], cfg.seed,
                                      w["tail_T"], workers=cfg.workers)
    return RunResult({**_est(rep.mass), "rate": rep.rate, "rate_stderr": rep.rate_stderr,
                      "rate_positive": rep.rate_positive})


def run_cllt(cfg, ens):
    w = cfg.walk
    n_list = sorted(set(w["n_list"]))
    rows, den = target.cllt_ratio(ens, cfgmod.start_point(cfg), w["t"], n_list, w["N"],
                                  cfgmod.build_test_function(cfg), cfg.seed, n_ref=w["n_ref"] or None,
                                  N_ref=w["N_ref"] or None, workers=cfg.workers)
    finite = [r for r in rows if np.isfinite(r.ratio)]
    trend = target.cllt_trend(finite) if len(finite) >= 2 else float("nan")
    table = [(r.n, r.numerator, r.numerator_stderr, r.ratio, r.ratio_stderr) for r in rows]
    return RunResult({"value": rows[-1].ratio, "stderr": rows[-1].ratio_stderr, "n_samples": w["N"],
                      "denominator": den.value, "trend_slope": trend},
                     (("n", "numerator", "numerator_stderr", "ratio", "ratio_stderr"), table),
                     status="diagnostic")


def run_perturbed(cfg, ens):
    w = cfg.walk
    f, space = cfgmod.build_perturbation(cfg)
    theta = perturbed.ConstantTwist(cfg.perturbation["twist"])
    start = cfgmod.start_point(cfg) if w["x"] else None
    est = perturbed.estimate_U(ens, f, theta, w["t"], w["n"], w["N"], cfg.seed, space, start, workers=cfg.workers)
    return RunResult(_est(est))


def run_chain(cfg, ens):
    w = cfg.walk
    _, space = cfgmod.build_perturbation(cfg)
    p = w["p"]
    chain = perturbed.chain_disintegration(ens, None, w["t"], w["n"], p, w["N"], cfg.seed, space,
                                           workers=cfg.workers)
    direct = perturbed.estimate_U(ens, None, None, w["t"], w["n"], w["N"], cfg.seed + 1, space, lag=p,
                                  workers=cfg.workers)
    init = perturbed.random_state(ens, p, seed=cfg.seed, space=space)
    rows = perturbed.martingale_residual(init, ens, min(w["n"], 20), w["N"], cfg.seed + 2, space, cfg.workers)
    worst = max((abs(r.z) for r in rows), default=0.0)
    diff = chain.value - direct.value
    se = float(np.hypot(chain.stderr, direct.stderr))
    table = [(r.k, r.block, r.mean, r.stderr, r.count) for r in rows]
    return RunResult({"value": diff, "stderr": se, "n_samples": w["N"], "chain": chain.value,
                      "direct": direct.value, "martingale_max_abs_z": worst},
                     (("k", "block", "mean", "stderr", "count"), table))


def run_scan(cfg, ens):
    w = cfg.walk
    f, space = cfgmod.build_perturbation(cfg)
    start = cfgmod.start_point(cfg) if w["x"] else None
    rep = perturbed.quasi_monotonicity_scan(ens, f, None, w["t_grid"], w["n_list"], w["N"], cfg.seed, space, start,
                                            b_grid=w["b_grid"], workers=cfg.workers)
    rows = [(c.n, c.m, c.t, c.direction, c.lhs, c.rhs, c.stderr, c.passed) for c in rep.cells]
    return RunResult({"value": rep.A, "stderr": None, "n_samples": w["N"], "b": rep.b, "gamma": rep.gamma,
                      "pass": rep.passed, "zero_shift_violations": rep.zero_shift_violations,
                      "cells": [c.to_dict() for c in rep.cells]},
                     (("n", "m", "t", "direction", "lhs", "rhs", "stderr", "pass"), rows))


def run_oracle(cfg, ens):
    if not ens.is_discrete:
        raise ConfigError("the oracle needs a discrete ensemble", field="ensemble.kind")
    w = cfg.walk
    x = cfgmod.start_point(cfg)
    h = cfgmod.build_test_function(cfg)
    v = oracle.exact_V(ens, x, w["t"], w["n"], w["direction"])
    rho = oracle.exact_rho_action(ens, x, w["n"], h, w["direction"])
    return RunResult({"value": v, "stderr": 0.0, "n_samples": len(ens.weights) ** w["n"], "rho_action": rho})


RUNNERS = {
    "lyapunov": run_lyapunov, "center": run_center, "harmonic": run_harmonic, "variance": run_variance,
    "survival": run_survival, "rho": run_rho, "density": run_density, "harmonicity": run_harmonicity,
    "reversal": run_reversal, "translation": run_translation, "tail": run_tail, "cllt": run_cllt,
    "perturbed": run_perturbed, "chain": run_chain, "scan": run_scan, "oracle": run_oracle,
}


# ---------------------------------------------------------------------------
# driver


def run_experiment(cfg, estimator: str):
    """Run one estimator; returns ``(summary, table, exit_code)``."""
    start = time.perf_counter()
    summary = {"estimator": estimator, "inputs": cfg.to_dict(), "seed": cfg.seed}
    table = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            ens = cfgmod.build_from_config(cfg)
            result = RUNNERS[estimator](cfg, ens)
            summary.update(result.summary)
            summary["status"] = result.status
            table = result.table
            code = 0
        except ConfigError:
            raise
        except Exception as exc:  # reported in the JSON with status
            log.debug("estimator failed", exc_info=True)
            summary.update({"status": "error", "error": f"{type(exc).__name__}: {exc}",
                            "value": None, "stderr": None, "n_samples": None})
            code = 1
    diagnostics = sorted({f"{w.category.__name__}: {w.message}" for w in caught
                          if issubclass(w.category, DiagnosticWarning)})
    summary["diagnostics"] = diagnostics
    if diagnostics and code == 0:
        summary["status"] = "diagnostic"
        code = 2
    summary["wall_time"] = time.perf_counter() - start
    return summary, table, code


def _common(parser):
    parser.add_argument("--config", type=Path, help="TOML experiment file")
    parser.add_argument("--seed", type=int, help="master seed (mandatory unless set in the config)")
    parser.add_argument("--paths", type=int, help="number of simulated paths N")
    parser.add_argument("--steps", type=int, help="horizon n")
    parser.add_argument("--dim", type=int, help="dimension d (continuous ensembles)")
    parser.add_argument("--workers", type=int, help="worker threads; results do not depend on it")
    parser.add_argument("--out", type=Path, help="output directory for JSON/CSV")
    parser.add_argument("--fixture", help="use a shipped ensemble fixture")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="condwalk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        _common(sub.add_parser(name, help=f"run the {name} estimator"))
    suite = sub.add_parser("suite", help="run the acceptance criteria")
    _common(suite)
    suite.add_argument("--criteria", default="all", help="comma-separated criterion numbers")
    rep = sub.add_parser("report", help="summarise a run directory")
    rep.add_argument("run_dir", type=Path)
    sub.add_parser("fixtures", help="list shipped ensemble fixtures")
    return parser


def _overrides(args):
    return {"seed": args.seed, "workers": args.workers, "walk.N": args.paths, "walk.n": args.steps,
            "ensemble.dim": args.dim, "ensemble.fixture": args.fixture,
            "out": str(args.out) if args.out else None}


def _emit(name, summary, table, out):
    if out is None:
        sys.stdout.write(dumps(summary))
        return
    write_summary(out, name, summary)
    if table is not None:
        write_table(out, name, *table)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            sys.stdout.write(emit_report(args.run_dir))
            return 0
        if args.command == "fixtures":
            sys.stdout.write("\n".join(cfgmod.list_fixtures()) + "\n")
            return 0
        cfg = cfgmod.load_config(args.config, _overrides(args))
        out = Path(cfg.out) if cfg.out else None
        if args.command == "suite":
            from .acceptance import run_suite

            results = run_suite(args.criteria, seed=cfg.seed, workers=cfg.workers, out=out)
            if out is not None:
                sys.stdout.write(emit_report(out))
            else:
                for r in results:
                    sys.stdout.write(r.line() + "\n")
            return 0 if all(r.status != "fail" for r in results) else 1
        summary, table, code = run_experiment(cfg, args.command)
        _emit(args.command, summary, table, out)
        return code
    except (ConfigError, MissingRun) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except CondWalkError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except Exception:  # pragma: no cover - unexpected
        traceback.print_exc()
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
