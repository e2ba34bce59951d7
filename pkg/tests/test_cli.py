import json
from pathlib import Path

import numpy as np
import pytest

from mlsi_bbe.chain import build_chain
from mlsi_bbe.cli import EXIT_FAILED, EXIT_INPUT, EXIT_OK, OUTPUT_ENV, main, run
from mlsi_bbe.evolution import evolve
from mlsi_bbe.io import (CERTIFIED, ESTIMATE, ConfigError, emit_trajectory_csv, parse_config,
                         read_trajectory_csv, tag, untagged_numbers)
from mlsi_bbe.models import preset_poisson

CONFIG = """\
seed = 7
formats = ["json", "csv"]

[model]
preset = "poisson"
params = { lambda = 1.0, n_max = 40 }

[[tasks]]
kind = "certify"
samples = 20

[[tasks]]
kind = "evolve"
f0 = "random"
t_max = 2.0
grid = 21

[[tasks]]
kind = "estimate"
constant = "gap"
"""


def load(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def all_files(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


def test_certify_poisson(tmp_path):
    code = main(["certify", "--preset", "poisson", "--param", "lambda=1", "--param", "n_max=60",
                 "--output", str(tmp_path)])
    assert code == EXIT_OK
    doc = load(tmp_path / "task00_certify.json")
    assert doc["results"]["certificate_kind"] == "theorem1_A"
    assert doc["results"]["kappa"] == {"kind": CERTIFIED, "value": pytest.approx(1.0)}


def test_counterexample_command(tmp_path):
    code = main(["counterexample", "100", "0.01", "--output", str(tmp_path)])
    doc = load(tmp_path / "task00_counterexample.json")["results"]
    assert doc["consistent"]
    assert doc["Q"]["values"][0] == pytest.approx(-0.03902, abs=5e-6)
    # the task only fails on internal inconsistency; the sign is reported
    assert code == EXIT_OK
    assert doc["total_negative"] == (doc["total"]["value"] < 0)


def test_estimate_two_point(tmp_path):
    code = main(["estimate", "mlsi", "--preset", "two_point", "--output", str(tmp_path)])
    assert code == EXIT_OK
    val = load(tmp_path / "task00_estimate.json")["results"]["value"]
    assert val["kind"] == ESTIMATE
    assert val["value"] == pytest.approx(4.0, rel=0.02)


def test_run_config_and_manifest(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(CONFIG, encoding="utf-8")
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--output", str(out)]) == EXIT_OK
    manifest = load(out / "manifest.json")
    assert manifest["ok"]
    assert len(manifest["config_hash"]) == 64
    assert manifest["seed"]["value"] == 7
    assert [t["task"] for t in manifest["tasks"]] == ["certify", "evolve", "estimate"]
    assert (out / "task01_evolve.csv").exists()
    for name in ("manifest.json", "task00_certify.json", "task01_evolve.json", "task02_estimate.json"):
        assert untagged_numbers(load(out / name)) == []


def test_byte_identical_reruns(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(CONFIG, encoding="utf-8")
    main(["run", str(cfg), "--output", str(tmp_path / "a")])
    main(["run", str(cfg), "--output", str(tmp_path / "b")])
    assert all_files(tmp_path / "a") == all_files(tmp_path / "b")


def test_seed_changes_random_outputs(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(CONFIG, encoding="utf-8")
    cfg2 = tmp_path / "run2.toml"
    cfg2.write_text(CONFIG.replace("seed = 7", "seed = 8"), encoding="utf-8")
    main(["run", str(cfg), "--output", str(tmp_path / "a")])
    main(["run", str(cfg2), "--output", str(tmp_path / "b")])
    assert (tmp_path / "a" / "task01_evolve.csv").read_bytes() != (tmp_path / "b" / "task01_evolve.csv").read_bytes()


def test_unknown_key_names_key_and_line(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    text = CONFIG.replace("t_max = 2.0", "t_max = 2.0\ndelta_t = 0.1")
    cfg.write_text(text, encoding="utf-8")
    line = text.splitlines().index("delta_t = 0.1") + 1
    assert main(["run", str(cfg), "--output", str(tmp_path / "o")]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "delta_t" in err
    assert f"line {line}" in err


@pytest.mark.parametrize("text,needle", [
    ("seed = 1\n[model]\npreset = \"poisson\"\n", "tasks"),
    ("[model]\npreset = \"nope\"\n[[tasks]]\nkind = \"certify\"\n", "nope"),
    ("[model]\npreset = \"poisson\"\nparams = {lambda = 1, n_max = 5, mu = 2}\n[[tasks]]\nkind = \"certify\"\n", "mu"),
    ("[model]\npreset = \"two_point\"\n[[tasks]]\nkind = \"fly\"\n", "fly"),
    ("bogus = 3\n[model]\npreset = \"two_point\"\n[[tasks]]\nkind = \"certify\"\n", "bogus"),
    ("[model\n", "malformed"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_failed_check_exit_code(tmp_path):
    code = main(["evolve", "--preset", "two_point", "--f0", "gap", "--check", "mlsi",
                 "--constant", "5", "--output", str(tmp_path)])
    assert code == EXIT_FAILED
    assert not load(tmp_path / "manifest.json")["ok"]


def test_output_env_var(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["certify", "--preset", "two_point"]) == EXIT_OK
    assert (target / "manifest.json").exists()
    assert main(["report"]) == EXIT_OK


def test_report_subcommand(tmp_path, capsys):
    main(["counterexample", "100", "0.01", "--output", str(tmp_path)])
    capsys.readouterr()
    assert main(["report", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "counterexample" in out and "PASS" in out
    assert main(["report", str(tmp_path / "missing")]) == EXIT_INPUT


def test_smooth_command(tmp_path):
    code = main(["smooth", "--preset", "perturbed_linear", "--param", "amplitude=0.4",
                 "--param", "n_max=200", "--n0", "7", "--output", str(tmp_path)])
    assert code == EXIT_OK
    res = load(tmp_path / "task00_smooth.json")["results"]
    assert res["delta1"]["value"] > 0
    assert res["alpha_transferred"]["kind"] == CERTIFIED


def test_sweep_serial_matches_parallel(tmp_path):
    args = ["sweep", "--preset", "homogeneous_bl", "--param", "N=1", "--parameter", "L",
            "--values", "3,4,5", "--task", "certify"]
    assert main(args + ["--output", str(tmp_path / "s")]) == EXIT_OK
    assert main(args + ["--parallel-sweep", "--output", str(tmp_path / "p")]) == EXIT_OK
    s = load(tmp_path / "s" / "task00_sweep.json")["results"]
    p = load(tmp_path / "p" / "task00_sweep.json")["results"]
    assert s == p
    kappas = [pt["result"]["kappa"]["value"] for pt in s["points"]]
    assert kappas == pytest.approx([1.0, 1.0, 1.0])


def test_run_function_direct(tmp_path):
    cfg = parse_config(CONFIG)
    assert run(cfg, tmp_path, echo=None) == EXIT_OK


def test_csv_lines_and_roundtrip(tmp_path):
    chain = build_chain(preset_poisson(1.0, 20))
    f0 = np.exp(np.random.default_rng(0).normal(size=chain.size))
    tr = evolve(chain.gen, chain.pi, f0, [0.0, 0.5, 1.0])
    path = tmp_path / "t.csv"
    emit_trajectory_csv(tr, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert len(lines) == 4
    assert lines[0] == "t,entropy,d_entropy,d2_entropy"
    back = read_trajectory_csv(path)
    np.testing.assert_array_equal(back["entropy"], tr.ent)
    np.testing.assert_array_equal(back["d2_entropy"], tr.d2ent)


def test_csv_constant_start_is_zero(tmp_path):
    chain = build_chain(preset_poisson(1.0, 10))
    tr = evolve(chain.gen, chain.pi, np.ones(chain.size), [0.0, 1.0])
    emit_trajectory_csv(tr, tmp_path / "c.csv")
    back = read_trajectory_csv(tmp_path / "c.csv")
    for col in ("entropy", "d_entropy", "d2_entropy"):
        assert np.all(np.abs(back[col]) < 1e-14)


def test_tag_handles_nonfinite_and_lists():
    doc = tag({"a": 1.0, "b": [1, 2], "c": float("inf"), "d": "text", "e": None}, ESTIMATE)
    assert doc["a"] == {"kind": ESTIMATE, "value": 1.0}
    assert doc["b"] == {"kind": ESTIMATE, "values": [1, 2]}
    assert doc["c"]["value"] == "inf"
    assert untagged_numbers(doc) == []
    assert untagged_numbers({"x": 3}) == ["$.x"]
    with pytest.raises(ValueError):
        tag(1.0, "guess")
