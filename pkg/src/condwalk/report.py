"""JSON/CSV run outputs and the human-readable summary table."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .errors import MissingRun, SchemaVersionError

SCHEMA_VERSION = "1.0"

# what each estimator or acceptance check exercises, by name
STATEMENTS = {
    "lyapunov": "Lyapunov exponent",
    "center": "centering (zero exponent)",
    "harmonic": "harmonic function V_n",
    "variance": "asymptotic variance",
    "survival": "survival decay of the exit time",
    "rho": "target harmonic measure action",
    "density": "non-decreasing marginal density W",
    "harmonicity": "R-harmonicity of the target measure",
    "reversal": "reversal identity for products",
    "translation": "translation asymptotics of the target measure",
    "tail": "negative tail of the target measure",
    "cllt": "conditioned local limit ratio",
    "perturbed": "perturbed killed functional U_n",
    "chain": "chain disintegration and killed martingale",
    "scan": "quasi-monotonicity of U_n in n",
    "oracle": "exact enumeration",
    "acceptance-1": "cocycle, scalar shift and cohomological identities",
    "acceptance-2": "reversal identity for products (exact)",
    "acceptance-3": "Monte Carlo estimators vs exact enumeration",
    "acceptance-4": "monotonicity and lower bound of V_n",
    "acceptance-5": "R-harmonicity of the target measure at finite n",
    "acceptance-6": "monotone density, linear growth and negative tail of W",
    "acceptance-7": "independence of the start point and translation asymptotics",
    "acceptance-8": "survival decay of the exit time",
    "acceptance-9": "killed martingale and chain disintegration",
    "acceptance-10": "quasi-monotonicity of U_n in n",
    "acceptance-11": "conditioned local limit ratio (diagnostic)",
}


def _clean(obj):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _clean(obj.item())
    return obj


def dumps(summary: dict) -> str:
    return json.dumps(_clean({"schema_version": SCHEMA_VERSION, **summary}), sort_keys=True, indent=2,
                      ensure_ascii=False) + "\n"


def write_summary(directory, name: str, summary: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.json"
    path.write_text(dumps(summary), encoding="utf-8")
    return path


def write_table(directory, name: str, header, rows) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return path


def load_summary(path) -> dict:
    """Parse a summary, rejecting unknown major schema versions."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    version = str(data.get("schema_version", ""))
    major = version.split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise SchemaVersionError(f"{path}: unsupported schema version {version!r}")
    return data


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _numbers(summary):
    if "numbers" in summary:
        return ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(summary["numbers"].items()))
    parts = []
    for key in ("value", "stderr", "n_samples"):
        if key in summary and summary[key] is not None:
            parts.append(f"{key}={_fmt(summary[key])}")
    return ", ".join(parts)


def report_rows(run_dir):
    run_dir = Path(run_dir)
    files = sorted(run_dir.glob("*.json")) if run_dir.is_dir() else []
    if not files:
        raise MissingRun(f"no JSON summaries in {str(run_dir)!r}")
    rows = []
    for path in files:
        s = load_summary(path)
        name = s.get("criterion") or s.get("estimator", path.stem)
        key = f"acceptance-{s['criterion']}" if "criterion" in s else s.get("estimator", path.stem)
        rows.append((STATEMENTS.get(key, key), str(name), s.get("status", "ok"), _numbers(s)))
    return rows


def emit_report(run_dir) -> str:
    """Plain-text table with one row per JSON summary in ``run_dir``; also written to ``report.txt``."""
    rows = report_rows(run_dir)
    header = ("statement", "check", "status", "numbers")
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(3)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header[:3], widths)) + "  " + header[3]]
    lines.append("  ".join("-" * w for w in widths) + "  " + "-" * 7)
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r[:3], widths)) + "  " + r[3])
    text = "\n".join(lines) + "\n"
    (Path(run_dir) / "report.txt").write_text(text, encoding="utf-8")
    return text
