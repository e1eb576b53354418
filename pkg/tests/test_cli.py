import json
import os

import numpy as np
import pytest

from otl import cli
from otl.prob_toolkit import CheckReport
from otl.tensor_core import read_components, sample_components


def _run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out.strip(), err


def _gen(tmp_path, capsys, d=6, n=4, seed=0):
    code, outdir, _ = _run(["gen", "--out", str(tmp_path), "--seed", str(seed),
                            f"d={d}", f"n={n}"], capsys)
    assert code == 0
    return os.path.join(outdir, "components.csv")


def _files(outdir):
    return {f: open(os.path.join(outdir, f), "rb").read()
            for f in sorted(os.listdir(outdir)) if f != "timing.json"}


def test_gen_roundtrip_and_repeatable(tmp_path, capsys):
    path = _gen(tmp_path, capsys, d=7, n=5, seed=3)
    A = read_components(path)
    assert A == sample_components(7, 5, 3)
    other = tmp_path / "again"
    path2 = _gen(other, capsys, d=7, n=5, seed=3)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_manifest_contents(tmp_path, capsys):
    path = _gen(tmp_path, capsys)
    outdir = os.path.dirname(path)
    m = json.load(open(os.path.join(outdir, "manifest.json")))
    assert m["seed"] == 0 and m["config"]["d"] == 6 and m["n_findings"] == 0
    assert os.path.basename(outdir) == "gen-" + m["run_id"]
    assert set(m["files"]) == {"components.csv"}
    assert "wall_time_s" in json.load(open(os.path.join(outdir, "timing.json")))
    assert set(m["constants"]) == {"c_mom", "zeta_p", "c6", "quoted_nu_sq"}


def test_bad_dimension_exit_1(tmp_path, capsys):
    code, _, err = _run(["gen", "--out", str(tmp_path), "d=1"], capsys)
    assert code == 1 and "d must be" in err


def test_unknown_key_exit_1(tmp_path, capsys):
    code, _, err = _run(["gen", "--out", str(tmp_path), "dimension=4"], capsys)
    assert code == 1 and "unknown config key" in err
    code, _, _ = _run(["gen", "--out", str(tmp_path), "d"], capsys)
    assert code == 1


def test_bad_command_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1


def test_corrupt_csv_names_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("2,2\n0.5,1.0\n0.25,oops\n")
    code, _, err = _run(["decompose", "--out", str(tmp_path), f"input={bad}"], capsys)
    assert code == 1 and f"{bad}:3:" in err


def test_missing_input_exit_1(tmp_path, capsys):
    code, _, err = _run(["census", "--out", str(tmp_path)], capsys)
    assert code == 1 and "input" in err
    code, _, _ = _run(["census", "--out", str(tmp_path), f"input={tmp_path / 'none.csv'}"],
                      capsys)
    assert code == 1


def test_zero_budget_exit_1(tmp_path, capsys):
    path = _gen(tmp_path, capsys)
    code, _, err = _run(["census", "--out", str(tmp_path), f"input={path}",
                         "budgets.restarts=0"], capsys)
    assert code == 1 and "budgets.restarts" in err


def test_decompose_single_component(tmp_path, capsys):
    path = _gen(tmp_path, capsys, d=5, n=1)
    code, outdir, _ = _run(["decompose", "--out", str(tmp_path), f"input={path}"], capsys)
    assert code == 0
    rec = json.load(open(os.path.join(outdir, "recovery.json")))
    assert rec["result"]["coverage"] == 1.0
    assert open(os.path.join(outdir, "recovery.csv")).read().splitlines()[1].startswith("0,1,")


def test_precedence(tmp_path, capsys, monkeypatch):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"d": 9, "n": 3, "seed": 5}))
    cfg = cli.resolve_config("gen", str(conf), ["n=4"], seed=7, workers=None)
    assert (cfg["d"], cfg["n"], cfg["seed"]) == (9, 4, 7)
    cfg = cli.resolve_config("gen", str(conf), [], seed=None, workers=None)
    assert cfg["seed"] == 5
    monkeypatch.setenv("OTL_WORKERS", "3")
    assert cli.resolve_config("gen")["workers"] == 3
    assert cli.resolve_config("gen", workers=2)["workers"] == 2
    monkeypatch.delenv("OTL_WORKERS")
    assert cli.resolve_config("gen")["workers"] == (os.cpu_count() or 1)


def test_nested_override_types(tmp_path):
    cfg = cli.resolve_config("kacrice", overrides=["thresholds.delta=0.2", "what=W",
                                                   "conventions.density=full_dim"])
    assert cfg["thresholds"]["delta"] == 0.2 and cfg["what"] == "W"
    with pytest.raises(cli.ConfigError):
        cli.resolve_config("kacrice", overrides=["thresholds.delta=2"])
    with pytest.raises(cli.ConfigError):
        cli.resolve_config("kacrice", overrides=["what=X"])


@pytest.mark.parametrize("argv", [
    ["census", "budgets.restarts=12"],
    ["decompose", "budgets.restarts=20"],
    ["events", "budgets.n_samples=20", "budgets.rip_trials=5"],
    ["kacrice", "what=trace", "d=5", "n=20", "budgets.n_samples=200"],
    ["kacrice", "what=h", "d=4", "n=20", "budgets.n_alpha=3", "budgets.n_matrix=20",
     "apply_events=false"],
])
def test_rerun_bit_identical(tmp_path, capsys, argv):
    path = _gen(tmp_path / "in", capsys, d=6, n=8)
    extra = [] if argv[0] == "kacrice" else [f"input={path}"]
    code1, d1, _ = _run([argv[0], "--out", str(tmp_path / "a"), "--workers", "1"]
                        + argv[1:] + extra, capsys)
    code2, d2, _ = _run([argv[0], "--out", str(tmp_path / "b"), "--workers", "1"]
                        + argv[1:] + extra, capsys)
    assert code1 == code2 and code1 in (0, 2)
    assert os.path.basename(d1) == os.path.basename(d2)
    assert _files(d1) == _files(d2)


def test_census_workers_same_results(tmp_path, capsys):
    path = _gen(tmp_path / "in", capsys, d=6, n=8)
    dirs = []
    for w in ("1", "2"):
        code, d, _ = _run(["census", "--out", str(tmp_path / w), "--workers", w,
                           f"input={path}", "budgets.restarts=16"], capsys)
        assert code == 0
        dirs.append(d)
    assert _files(dirs[0])["census.csv"] == _files(dirs[1])["census.csv"]


def test_findings_exit_2(tmp_path, capsys, monkeypatch):
    fake = CheckReport("fake", {}, 1.0, 0.5, "violated")
    monkeypatch.setattr(cli, "run_suite", lambda *a, **k: [fake])
    code, outdir, err = _run(["probcheck", "--out", str(tmp_path)], capsys)
    assert code == 2 and "1 finding" in err
    body = json.load(open(os.path.join(outdir, "probcheck.json")))
    assert body["findings"][0]["claim_id"] == "fake"
    assert json.load(open(os.path.join(outdir, "manifest.json")))["n_findings"] == 1


def test_events_component_point(tmp_path, capsys):
    path = _gen(tmp_path / "in", capsys, d=6, n=8)
    code, outdir, _ = _run(["events", "--out", str(tmp_path), f"input={path}",
                            "x=component:2", "budgets.n_samples=10",
                            "budgets.rip_trials=3"], capsys)
    assert code == 0
    body = json.load(open(os.path.join(outdir, "events.json")))["result"]
    u = read_components(path).unit_columns[:, 2]
    assert np.allclose(body["x"], u)
