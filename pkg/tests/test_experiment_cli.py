from __future__ import annotations

import csv
import hashlib
import json
import shutil
import subprocess
from pathlib import Path

import pytest

from fbsde_coupling.cli import main
from fbsde_coupling.errors import ConfigurationError
from fbsde_coupling.experiment import (CSV_SCHEMA, EXIT_ERROR, EXIT_OK, EXIT_VIOLATION, KINDS,
                                       load_config, parse_config, parse_fracpot)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "paths": {"paths": 2000, "grid": {"n_steps": 2}},
    "solve": {"paths": 2000, "grid": {"n_steps": 8}},
    "cv": {"paths": 1000, "grid": {"n_steps": 8},
           "phi": [{"kind": "indicator", "a": 0.0, "c": 0.25}, {"kind": "indicator", "a": 0.25, "c": 0.5},
                   {"kind": "indicator", "a": 0.5, "c": 1.0}]},
    "sandwich": {"paths": 2000, "grid": {"n_steps": 4}, "n_inner": 16},
    "malliavin": {"paths": 2000, "grid": {"n_steps": 1}},
    "regularity": {"paths": 1000, "grid": {"n_steps": 8}},
    "fracpot": {"paths": 2000, "grid": {"n_steps": 4}},
}


def write(tmp_path: Path, doc: dict, name: str = "cfg.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def run(tmp_path: Path, kind: str, doc: dict, *flags: str, out: str = "out") -> tuple[int, Path]:
    cfg = write(tmp_path, dict(kind=kind, **doc))
    out_dir = tmp_path / out
    code = main([kind, "--config", str(cfg), "--out", str(out_dir), "--deterministic", *flags])
    return code, out_dir


@pytest.mark.parametrize("kind", KINDS)
def test_every_kind_runs(tmp_path, kind, capsys):
    code, out = run(tmp_path, kind, SMALL[kind])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["kind"] == kind and summary["exit_code"] == EXIT_OK
    rows = list(csv.DictReader((out / "results.csv").open()))
    assert len(rows) == summary["rows"] > 0
    report = json.loads((out / "report.json").read_text())
    assert report["csv_schema"] == CSV_SCHEMA and report["kind"] == kind


def test_rerun_byte_identical(tmp_path):
    code1, out1 = run(tmp_path, "cv", SMALL["cv"], out="a")
    code2, out2 = run(tmp_path, "cv", SMALL["cv"], out="b")
    assert code1 == code2 == EXIT_OK
    assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()
    assert (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()


def test_manifest(tmp_path):
    _, out = run(tmp_path, "paths", SMALL["paths"], "--seed", "17")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 17 and manifest["deterministic"] is True
    assert manifest["paths"] == 2000 and manifest["n_steps"] == 2
    assert manifest["wall_time_s"] >= 0 and manifest["version"]
    blob = json.dumps(manifest["config"], sort_keys=True, separators=(",", ":")).encode()
    assert manifest["config_sha256"] == hashlib.sha256(blob).hexdigest()


def test_overrides(tmp_path):
    _, out = run(tmp_path, "paths", SMALL["paths"], "--steps", "4", "--paths", "300", "--seed", "3")
    manifest = json.loads((out / "manifest.json").read_text())
    assert (manifest["n_steps"], manifest["paths"], manifest["seed"]) == (4, 300, 3)


def test_seed_changes_results(tmp_path):
    _, a = run(tmp_path, "paths", SMALL["paths"], "--seed", "1", out="a")
    _, b = run(tmp_path, "paths", SMALL["paths"], "--seed", "2", out="b")
    assert (a / "results.csv").read_bytes() != (b / "results.csv").read_bytes()


def test_expect_mismatch_is_violation(tmp_path):
    code, out = run(tmp_path, "malliavin", dict(SMALL["malliavin"], expect="unbounded"))
    assert code == EXIT_VIOLATION
    assert json.loads((out / "report.json").read_text())["exit_code"] == EXIT_VIOLATION
    code, _ = run(tmp_path, "fracpot", dict(SMALL["fracpot"], expect="fails"), out="fp")
    assert code == EXIT_VIOLATION


def test_vacuous_run_is_ok(tmp_path):
    # Zero diffusion and zero data: every component and bound vanish, which
    # is flagged as vacuous and is not a violation.
    doc = dict(SMALL["cv"], spec={"name": "linear", "params": {"s0": 0.0, "gx": 0.0}})
    code, _ = run(tmp_path, "cv", doc)
    assert code == EXIT_OK


@pytest.mark.parametrize("doc", [
    {"paths": -5},
    {"paths": 1.5},
    {"seed": -1},
    {"grid": {"n_steps": 0}},
    {"p": [0]},
    {"spec": {"name": "nope"}},
    {"phi": [{"kind": "wavy"}]},
    {"phi": [{"kind": "indicator", "a": 0.1, "c": 0.3}]},
    {"picard": {"max_iter": 10, "bogus": 1}},
])
def test_bad_config_exit_one(tmp_path, doc, capsys):
    code, _ = run(tmp_path, "cv", dict(SMALL["cv"], **doc) if "phi" not in doc else dict(doc, paths=100))
    assert code == EXIT_ERROR
    assert "error:" in capsys.readouterr().err


def test_unreadable_config(tmp_path, capsys):
    assert main(["paths", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["paths", "--config", str(bad)]) == EXIT_ERROR


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        parse_config({"kind": "nope"})
    with pytest.raises(SystemExit) as exc:
        main(["nope"])
    assert exc.value.code != 0


def test_empty_fracpot_terms():
    with pytest.raises(ConfigurationError):
        parse_fracpot({"case": "II", "p": 2, "terms": []})


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    assert cfg.kind in KINDS and cfg.n_paths > 0


@pytest.mark.skipif(shutil.which("fbsde-coupling") is None, reason="console script not installed")
def test_console_script(tmp_path):
    cfg = write(tmp_path, dict(kind="paths", **SMALL["paths"]))
    proc = subprocess.run(["fbsde-coupling", "paths", "--config", str(cfg), "--out",
                           str(tmp_path / "o"), "--deterministic"], capture_output=True, text=True)
    assert proc.returncode == EXIT_OK, proc.stderr
    assert json.loads(proc.stdout)["kind"] == "paths"
