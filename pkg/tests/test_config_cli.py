"""Configuration loading, command-line runs and run reports."""

import json

import pytest

from condwalk.cli import main
from condwalk.config import list_fixtures, load_config
from condwalk.errors import ConfigError, MissingRun, SchemaVersionError
from condwalk.report import emit_report, load_summary, write_summary


def _toml(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------------------
# config


def test_unknown_key_reports_line(tmp_path):
    path = _toml(tmp_path, "seed = 1\n[walk]\nn = 5\nbogus = 3\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "walk.bogus"
    assert info.value.line == 4


def test_wrong_type_reports_line(tmp_path):
    path = _toml(tmp_path, "seed = 1\n\n[walk]\nN = \"many\"\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.field == "walk.N"
    assert info.value.line == 4


def test_invalid_toml_reports_line(tmp_path):
    path = _toml(tmp_path, "seed = 1\n[walk\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 2


def test_invalid_value_reports_line(tmp_path):
    path = _toml(tmp_path, "seed = 1\n[walk]\ndirection = \"sideways\"\n")
    with pytest.raises(ConfigError) as info:
        load_config(path)
    assert info.value.line == 3


def test_seed_is_mandatory(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        load_config(_toml(tmp_path, "[walk]\nn = 3\n"))
    assert load_config(None, {"seed": 4}).seed == 4


def test_precedence_flag_over_file_over_default(tmp_path):
    path = _toml(tmp_path, "seed = 1\n[walk]\nn = 7\n")
    assert load_config(path).walk["n"] == 7
    assert load_config(path).walk["N"] == 10_000
    assert load_config(path, {"walk.n": 9}).walk["n"] == 9
    assert load_config(path, {"walk.n": None}).walk["n"] == 7


def test_fixture_loading(tmp_path):
    cfg = load_config(_toml(tmp_path, "seed = 1\n[ensemble]\nfixture = \"ab2\"\n"))
    assert cfg.ensemble["kind"] == "discrete"
    assert len(cfg.ensemble["atoms"]) == 2
    assert "standard_proximal" in list_fixtures()


# ---------------------------------------------------------------------------
# runs


def test_identity_harmonic_run(tmp_path, capsys):
    code, out, _ = _run(capsys, "harmonic", "--fixture", "identity2", "--seed", "1",
                        "--paths", "1000", "--steps", "10", "--out", str(tmp_path))
    assert code == 0
    s = load_summary(tmp_path / "harmonic.json")
    # t defaults to 0 so V = t + 0 exactly on the identity law
    assert s["value"] == s["inputs"]["walk"]["t"] == 0.0
    assert s["stderr"] == 0.0
    assert s["status"] == "ok"
    assert (tmp_path / "harmonic.csv").exists()


def test_identity_value_equals_t(tmp_path, capsys):
    path = _toml(tmp_path, "seed = 2\n[ensemble]\nfixture = \"identity2\"\n[walk]\nn = 6\nN = 500\nt = 2.5\n")
    code, out, _ = _run(capsys, "harmonic", "--config", str(path))
    assert code == 0
    s = json.loads(out)
    assert s["value"] == 2.5
    assert s["stderr"] == 0.0


def test_runs_are_reproducible(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / f"r{k}"
        code, _, _ = _run(capsys, "harmonic", "--fixture", "ab2_centered", "--seed", "3",
                          "--paths", "2000", "--steps", "8", "--out", str(d))
        assert code == 0
        s = load_summary(d / "harmonic.json")
        s.pop("wall_time")
        outs.append((json.dumps(s, sort_keys=True), (d / "harmonic.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_worker_count_does_not_change_output(tmp_path, capsys):
    outs = []
    for w in ("1", "3"):
        code, out, _ = _run(capsys, "harmonic", "--fixture", "ab2_centered", "--seed", "3",
                            "--paths", "9000", "--steps", "6", "--workers", w)
        s = json.loads(out)
        outs.append((s["value"], s["stderr"]))
    assert outs[0] == outs[1]


def test_rotation_cllt_is_diagnostic(capsys):
    code, out, _ = _run(capsys, "cllt", "--fixture", "rotations2", "--seed", "1", "--paths", "2000")
    assert code == 2
    s = json.loads(out)
    assert s["status"] == "diagnostic"
    assert s["value"] == "nan"
    assert any("DegenerateVariance" in d for d in s["diagnostics"])


def test_missing_seed_exits_1(capsys):
    code, _, err = _run(capsys, "harmonic", "--fixture", "identity2")
    assert code == 1
    assert "seed" in err


def test_bad_config_exits_1(tmp_path, capsys):
    path = _toml(tmp_path, "seed = 1\nunknown_thing = 2\n")
    code, _, err = _run(capsys, "harmonic", "--config", str(path))
    assert code == 1
    assert "line 2" in err


# ---------------------------------------------------------------------------
# reports


def test_report_on_empty_dir(tmp_path, capsys):
    with pytest.raises(MissingRun):
        emit_report(tmp_path)
    code, _, err = _run(capsys, "report", str(tmp_path))
    assert code == 1
    assert "no JSON" in err


def test_report_one_row_per_summary(tmp_path, capsys):
    write_summary(tmp_path, "harmonic", {"estimator": "harmonic", "value": 1.5, "stderr": 0.1,
                                         "n_samples": 100, "status": "ok"})
    code, out, _ = _run(capsys, "report", str(tmp_path))
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 3
    assert "harmonic function V_n" in lines[2]
    assert "value=1.5" in lines[2]
    assert (tmp_path / "report.txt").read_text() == out


def test_schema_version_rejected(tmp_path):
    path = tmp_path / "x.json"
    path.write_text(json.dumps({"schema_version": "2.0", "estimator": "harmonic"}))
    with pytest.raises(SchemaVersionError):
        load_summary(path)
    with pytest.raises(SchemaVersionError):
        emit_report(tmp_path)


def test_fixtures_command(capsys):
    code, out, _ = _run(capsys, "fixtures")
    assert code == 0
    assert out.split() == list_fixtures()


def test_suite_single_criterion(tmp_path, capsys):
    code, out, _ = _run(capsys, "suite", "--criteria", "2", "--seed", "0", "--out", str(tmp_path))
    assert code == 0
    assert "criterion" in load_summary(tmp_path / "criterion_02.json")
    assert "reversal identity" in out
