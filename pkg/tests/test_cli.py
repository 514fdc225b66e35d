import json
import subprocess
import sys

import jsonschema
import pytest

from armpose.schemas import SCHEMAS


def run_cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "armpose.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    r = run_cli("synth", "--out", str(out), "--n", "4", "--seed", "21",
                "--noise", '{"pixel_sigma": 1.0, "outlier_prob": 0.0, '
                '"dropout_prob": 0.0, "seed": 21}')
    assert r.returncode == 0, r.stderr
    jsonschema.validate(json.loads(r.stdout), SCHEMAS["synth"])
    return out


def test_help_exits_zero():
    r = run_cli("--help")
    assert r.returncode == 0
    assert "synth" in r.stdout and "reach" in r.stdout


def test_unknown_flag_exits_two():
    r = run_cli("solve", "--nonsense")
    assert r.returncode == 2


def test_missing_required_exits_two():
    r = run_cli("synth", "--n", "3")  # no --seed / --out
    assert r.returncode == 2


def test_solve_json_schema(dataset):
    r = run_cli("solve", "--keypoints", str(dataset / "ann_000000.json"))
    assert r.returncode == 0, r.stderr
    payload = json.loads(r.stdout)
    jsonschema.validate(payload, SCHEMAS["solve"])
    assert payload["residual"] < 100.0


def test_solve_weak_mode(dataset):
    r = run_cli("solve", "--keypoints", str(dataset / "ann_000001.json"), "--weak")
    assert r.returncode == 0, r.stderr
    payload = json.loads(r.stdout)
    jsonschema.validate(payload, SCHEMAS["solve"])
    assert payload["scale"] is not None and payload["scale"] > 0


def test_refine_and_eval_schemas(dataset, tmp_path):
    refined = tmp_path / "refined"
    r = run_cli("refine", "--heatmaps", str(dataset), "--out", str(refined))
    assert r.returncode == 0, r.stderr
    jsonschema.validate(json.loads(r.stdout), SCHEMAS["refine"])

    r = run_cli("eval", "--pred", str(refined), "--gt", str(dataset))
    assert r.returncode == 0, r.stderr
    report = json.loads(r.stdout)
    jsonschema.validate(report, SCHEMAS["eval"])
    assert report["n_samples"] == 4

    r = run_cli("eval", "--pred", str(refined), "--gt", str(dataset), "--table")
    assert r.returncode == 0
    assert "PCK@0.2" in r.stdout


def test_reach_schema(tmp_path):
    r = run_cli("reach", "--seeds", "1", "--pose-source", "gt")
    assert r.returncode == 0, r.stderr
    payload = json.loads(r.stdout)
    jsonschema.validate(payload, SCHEMAS["reach"])
    assert payload["n_episodes"] == 9


def test_domain_error_is_structured(tmp_path):
    r = run_cli("solve", "--keypoints", str(tmp_path / "missing.json"))
    assert r.returncode == 1
    err = json.loads(r.stderr)
    jsonschema.validate(err, SCHEMAS["error"])
    assert err["error"] == "parse_error"


def test_config_file_defaults_and_flag_priority(dataset, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("restarts = 4\nxi = 0.25  # gate\n")
    r = run_cli("solve", "--keypoints", str(dataset / "ann_000002.json"),
                "--config", str(cfg))
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["restarts_used"] == 4
    # explicit flag wins over the config value
    r = run_cli("solve", "--keypoints", str(dataset / "ann_000002.json"),
                "--config", str(cfg), "--restarts", "6")
    assert json.loads(r.stdout)["restarts_used"] == 6


def test_config_unknown_key_exits_two(dataset, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("frobnicate = 3\n")
    r = run_cli("solve", "--keypoints", str(dataset / "ann_000000.json"),
                "--config", str(cfg))
    assert r.returncode == 2


def test_out_flag_writes_copy(dataset, tmp_path):
    dest = tmp_path / "result.json"
    r = run_cli("solve", "--keypoints", str(dataset / "ann_000000.json"),
                "--out", str(dest))
    assert r.returncode == 0
    assert json.loads(dest.read_text()) == json.loads(r.stdout)
