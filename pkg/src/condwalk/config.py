"""Experiment configuration: TOML files with typed tables and CLI overrides.

Precedence is flag > config file > default.  Every validation error is a
:class:`~condwalk.errors.ConfigError` naming the offending field and, when the
field came from a file, its line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .ensemble import KINDS, Ensemble, EnsembleSpec, center, default_start
from .errors import ConfigError
from .perturbed import SPACES

_INT, _FLOAT, _STR, _BOOL = "int", "float", "str", "bool"
_FLOATS, _INTS, _MATRICES = "list[float]", "list[int]", "list[matrix]"

SCHEMA = {
    "": {
        "seed": (_INT, None), "workers": (_INT, 1), "estimator": (_STR, None), "out": (_STR, None),
    },
    "ensemble": {
        "fixture": (_STR, None), "kind": (_STR, "gaussian-perturbed"), "dim": (_INT, 2),
        "atoms": (_MATRICES, ()), "weights": (_FLOATS, ()), "log_gains": (_FLOATS, ()),
        "eps": (_FLOAT, 0.8), "scale": (_FLOAT, 1.0), "center": (_BOOL, False),
        "center_tolerance": (_FLOAT, 1e-3),
    },
    "walk": {
        "n": (_INT, 100), "N": (_INT, 10_000), "t": (_FLOAT, 0.0), "t_grid": (_FLOATS, (0.0, 1.0, 5.0)),
        "n_list": (_INTS, (16, 32, 64, 128)), "direction": (_STR, "plus"), "x": (_FLOATS, ()),
        "depth": (_INT, 50), "inner_draws": (_INT, 16), "n_y": (_INT, 4), "u_grid": (_FLOATS, ()),
        "t_shifts": (_FLOATS, (10.0, 25.0, 50.0)), "replicas": (_INT, 64), "p": (_INT, 1),
        "n_ref": (_INT, 0), "N_ref": (_INT, 0), "tail_T": (_FLOAT, 20.0), "b_grid": (_FLOATS, (0.5, 0.25, 0.0)),
    },
    "test_function": {
        "phi": (_STR, "constant"), "phi_value": (_FLOAT, 1.0), "phi_index": (_INT, 0),
        "phi_direction": (_FLOATS, ()), "psi_breaks": (_FLOATS, (0.0, 5.0, 10.0)),
        "psi_values": (_FLOATS, (0.0, 1.0, 0.0)),
    },
    "perturbation": {
        "kind": (_STR, "zero"), "m": (_INT, 16), "depth": (_INT, 30), "space": (_STR, "projective"),
        "twist": (_FLOAT, 1.0),
    },
}

PHI_KINDS = ("constant", "squared-coordinate", "abs-pairing")
PERTURBATIONS = ("zero", "finite-range-delta", "ideal-delta")


def fixture_path(name: str) -> Path:
    """Path of a shipped fixture (``ab2`` or ``ab2.toml``)."""
    fname = name if name.endswith(".toml") else name + ".toml"
    path = Path(str(resources.files("condwalk") / "fixtures" / fname))
    if not path.exists():
        raise ConfigError(f"unknown fixture {name!r}", field="ensemble.fixture")
    return path


def list_fixtures():
    root = Path(str(resources.files("condwalk") / "fixtures"))
    return sorted(p.stem for p in root.glob("*.toml"))


def _line_of(text: str, table: str, key: str):
    """1-based line of ``key`` inside ``[table]`` (top level when ``table`` is empty)."""
    current = ""
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[([^\]]+)\]", stripped)
        if header:
            current = header.group(1).strip()
            continue
        if current == table and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return i
    return None


def _coerce(kind, value, name):
    def bad():
        return ConfigError(f"{name} must be {kind}, got {value!r}", field=name)

    if kind == _BOOL:
        if not isinstance(value, bool):
            raise bad()
        return value
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        return float(value)
    if kind == _STR:
        if not isinstance(value, str):
            raise bad()
        return value
    if not isinstance(value, (list, tuple)):
        raise bad()
    if kind == _FLOATS:
        return tuple(_coerce(_FLOAT, v, name) for v in value)
    if kind == _INTS:
        return tuple(_coerce(_INT, v, name) for v in value)
    # list of square matrices
    out = []
    for m in value:
        if not isinstance(m, (list, tuple)) or not all(isinstance(r, (list, tuple)) for r in m):
            raise bad()
        out.append(tuple(tuple(_coerce(_FLOAT, v, name) for v in r) for r in m))
    return tuple(out)


@dataclass
class ExperimentConfig:
    """Validated experiment settings, one attribute table per section."""

    seed: int
    workers: int = 1
    estimator: str | None = None
    out: str | None = None
    ensemble: dict = field(default_factory=dict)
    walk: dict = field(default_factory=dict)
    test_function: dict = field(default_factory=dict)
    perturbation: dict = field(default_factory=dict)
    source: str | None = None

    def to_dict(self):
        return {"seed": self.seed, "workers": self.workers, "estimator": self.estimator,
                "ensemble": _jsonable(self.ensemble), "walk": _jsonable(self.walk),
                "test_function": _jsonable(self.test_function),
                "perturbation": _jsonable(self.perturbation)}


def _jsonable(d):
    def conv(v):
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v
    return {k: conv(v) for k, v in d.items()}


def _read(path: Path):
    if not path.exists():
        raise ConfigError(f"config file {str(path)!r} does not exist", field="config")
    text = path.read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", line=int(m.group(1)) if m else None) from None
    return data, text


def _section(data, text, table, source):
    """Typed values of one table; unknown keys are errors."""
    schema = SCHEMA[table]
    raw = data if table == "" else data.get(table, {})
    out = {}
    for key, value in raw.items():
        if table == "" and key in SCHEMA and isinstance(value, dict):
            continue
        name = f"{table}.{key}" if table else key
        if key not in schema:
            raise ConfigError(f"unknown field {name!r}", field=name, line=_line_of(text, table, key))
        try:
            out[key] = _coerce(schema[key][0], value, name)
        except ConfigError as exc:
            raise ConfigError(exc.message, field=name, line=_line_of(text, table, key)) from None
    return out


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read ``path`` (optional), apply ``overrides`` (``{"walk.N": 1000, ...}``) and validate."""
    values = {table: {} for table in SCHEMA}
    lines = {}
    source = None
    if path is not None:
        path = Path(path)
        data, text = _read(path)
        for table in SCHEMA:
            if table and table in data and not isinstance(data[table], dict):
                raise ConfigError(f"{table!r} must be a table", field=table, line=_line_of(text, "", table))
        unknown = [k for k in data if k not in SCHEMA and k not in SCHEMA[""]]
        if unknown:
            raise ConfigError(f"unknown table or field {unknown[0]!r}", field=unknown[0],
                              line=_line_of(text, "", unknown[0]))
        for table in SCHEMA:
            values[table] = _section(data, text, table, path)
            for key in values[table]:
                lines[(table, key)] = _line_of(text, table, key)
        source = str(path)
        fixture = values["ensemble"].get("fixture")
        if fixture is not None:
            fpath = Path(fixture)
            if not fpath.is_absolute():
                fpath = path.parent / fpath
            if not fpath.exists():
                fpath = fixture_path(fixture)
            fdata, ftext = _read(fpath)
            base = _section(fdata, ftext, "ensemble", fpath)
            base.pop("fixture", None)
            values["ensemble"] = {**base, **{k: v for k, v in values["ensemble"].items() if k != "fixture"}}
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        table, _, key = dotted.rpartition(".")
        if not table and key in SCHEMA[""]:
            values[""][key] = _coerce(SCHEMA[""][key][0], value, key)
            continue
        if table not in SCHEMA or key not in SCHEMA[table]:
            raise ConfigError(f"unknown override {dotted!r}", field=dotted)
        if key == "fixture":
            fdata, ftext = _read(fixture_path(value))
            values["ensemble"] = {**_section(fdata, ftext, "ensemble", value), **values["ensemble"]}
            continue
        values[table][key] = _coerce(SCHEMA[table][key][0], value, dotted)
    merged = {t: {k: d for k, (_, d) in SCHEMA[t].items()} for t in SCHEMA}
    for t in SCHEMA:
        merged[t].update(values[t])
    top = merged[""]
    if top["seed"] is None:
        raise ConfigError("a seed is mandatory (set 'seed' in the config or pass --seed)", field="seed")
    cfg = ExperimentConfig(seed=top["seed"], workers=top["workers"], estimator=top["estimator"],
                           out=top["out"], ensemble=merged["ensemble"], walk=merged["walk"],
                           test_function=merged["test_function"], perturbation=merged["perturbation"],
                           source=source)
    _validate(cfg, lines)
    return cfg


def _validate(cfg: ExperimentConfig, lines):
    def fail(table, key, msg):
        raise ConfigError(msg, field=f"{table}.{key}" if table else key, line=lines.get((table, key)))

    if not 0 <= cfg.seed < 2 ** 64:
        fail("", "seed", "seed must be a 64-bit non-negative integer")
    if cfg.workers < 1:
        fail("", "workers", "workers must be >= 1")
    e = cfg.ensemble
    if e["kind"] not in KINDS:
        fail("ensemble", "kind", f"kind must be one of {KINDS}")
    if e["kind"] == "discrete":
        if not e["atoms"]:
            fail("ensemble", "atoms", "a discrete ensemble needs atoms")
        if "dim" not in lines and e["atoms"]:
            e["dim"] = len(e["atoms"][0])
        if not e["weights"]:
            e["weights"] = tuple([1.0 / len(e["atoms"])] * len(e["atoms"]))
    if e["kind"] == "rotation-diagonal" and not e["log_gains"]:
        fail("ensemble", "log_gains", "rotation-diagonal needs log_gains")
    if e["dim"] < 1:
        fail("ensemble", "dim", "dim must be >= 1")
    if e["scale"] <= 0:
        fail("ensemble", "scale", "scale must be positive")
    w = cfg.walk
    for key in ("n", "N", "depth", "inner_draws", "n_y", "replicas"):
        if w[key] < 1:
            fail("walk", key, f"{key} must be >= 1")
    if w["direction"] not in ("plus", "minus"):
        fail("walk", "direction", "direction must be 'plus' or 'minus'")
    if w["x"] and len(w["x"]) != e["dim"]:
        fail("walk", "x", f"start point must have {e['dim']} coordinates")
    tf = cfg.test_function
    if tf["phi"] not in PHI_KINDS:
        fail("test_function", "phi", f"phi must be one of {PHI_KINDS}")
    if len(tf["psi_breaks"]) != len(tf["psi_values"]) or len(tf["psi_breaks"]) < 2:
        fail("test_function", "psi_values", "psi_breaks and psi_values must have equal length >= 2")
    p = cfg.perturbation
    if p["kind"] not in PERTURBATIONS:
        fail("perturbation", "kind", f"kind must be one of {PERTURBATIONS}")
    if p["space"] not in SPACES:
        fail("perturbation", "space", f"space must be one of {tuple(SPACES)}")


# ---------------------------------------------------------------------------
# builders


def build_from_config(cfg: ExperimentConfig) -> Ensemble:
    """The configured ensemble, centered when ``ensemble.center`` is set."""
    e = cfg.ensemble
    spec = EnsembleSpec(dim=e["dim"], kind=e["kind"], atoms=e["atoms"], weights=e["weights"],
                        log_gains=e["log_gains"], eps=e["eps"], scale=e["scale"])
    try:
        spec.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), field="ensemble") from None
    ens = Ensemble(spec)
    if e["center"]:
        ens = center(ens, e["center_tolerance"], seed=cfg.seed, workers=cfg.workers)
    return ens


def start_point(cfg: ExperimentConfig):
    import numpy as np

    x = cfg.walk["x"]
    if not x:
        return default_start(cfg.ensemble["dim"])
    v = np.asarray(x, dtype=float)
    return v / np.linalg.norm(v)


def build_test_function(cfg: ExperimentConfig):
    from .testfunctions import AbsPairing, Constant, PiecewiseLinear, ProductTest, SquaredCoordinate

    tf = cfg.test_function
    try:
        psi = PiecewiseLinear(tf["psi_breaks"], tf["psi_values"])
    except ValueError as exc:
        raise ConfigError(str(exc), field="test_function.psi_breaks") from None
    if tf["phi"] == "constant":
        phi = Constant(tf["phi_value"])
    elif tf["phi"] == "squared-coordinate":
        if not 0 <= tf["phi_index"] < cfg.ensemble["dim"]:
            raise ConfigError("phi_index out of range", field="test_function.phi_index")
        phi = SquaredCoordinate(tf["phi_index"])
    else:
        direction = tf["phi_direction"] or tuple(default_start(cfg.ensemble["dim"]))
        if len(direction) != cfg.ensemble["dim"]:
            raise ConfigError("phi_direction has the wrong length", field="test_function.phi_direction")
        phi = AbsPairing(direction)
    return ProductTest(phi, psi)


def build_perturbation(cfg: ExperimentConfig):
    from .perturbed import FiniteRangeDelta, IdealDelta, Zero

    p = cfg.perturbation
    space = SPACES[p["space"]]()
    if p["kind"] == "zero":
        f = Zero()
    elif p["kind"] == "finite-range-delta":
        f = FiniteRangeDelta(start_point(cfg), p["m"])
    else:
        f = IdealDelta(p["depth"])
    return f, space


def fixture_ensemble(name: str, seed: int = 0, workers: int = 1) -> Ensemble:
    """Ensemble of a shipped fixture; ``seed`` only matters for fixtures centered at load time."""
    cfg = load_config(fixture_path(name), overrides={"seed": seed, "workers": workers})
    return build_from_config(cfg)
