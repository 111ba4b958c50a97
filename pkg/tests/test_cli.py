import json
import math

import pytest

from soliton_forge.cli import canonical_json, main


@pytest.fixture
def run(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)

    def _run(*argv):
        capsys.readouterr()
        code = main([str(a) for a in argv])
        out = capsys.readouterr()
        return code, out.out, out.err
    return _run


@pytest.fixture
def config(run, tmp_path):
    code, _, _ = run("build", "--ax", 2.0, "--ay", 0.5, "-o", "config.json")
    assert code == 0
    return tmp_path / "config.json"


# ------------------------------------------------------------------ canonical JSON

def test_canonical_json_format():
    text = canonical_json({"b": [1, 0.1, float("nan")], "a": {"d": True, "c": None}})
    assert text == '{"a":{"c":null,"d":true},"b":[1,0.10000000000000001,null]}\n'
    assert json.loads(text)["b"][1] == 0.1


# ------------------------------------------------------------------ documented pipelines

def test_build_then_check(run, config):
    d = json.loads(config.read_text())
    assert d["metadata"]["flags"]["ax"] == 2.0 and d["metadata"]["seed"] == 0
    assert d["metadata"]["tool"] == "soliton-forge"
    code, out, _ = run("check", "--config", "config.json", "-o", "-")
    assert code == 0
    rep = json.loads(out)
    assert rep["general_position"]["passed"]
    assert rep["separation"]["delta_gamma"] > 0


def test_build_pi_over_three_fails(run):
    code, out, err = run("build", "--ax", math.pi / 3, "-o", "-")
    assert code == 1
    assert out == ""
    e = json.loads(err)
    assert e["error"] == "builder" and "pi/3" in e["message"]


def test_mesh_then_verify(run, config, tmp_path):
    code, _, _ = run("mesh", "--config", "config.json", "--tau", 0.1, "--m", 1, "-o", "surf.obj")
    assert code == 0
    assert (tmp_path / "surf.obj.json").is_file()
    code, _, _ = run("verify", "--mesh", "surf.obj", "-o", "report.json", "--csv", "r.csv")
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["sup"] > 0 and rep["l2"] > 0
    assert set(rep["region_counts"]) == {"core", "transition", "reaper"}
    assert sum(rep["region_counts"].values()) == rep["n_vertices"]
    assert len((tmp_path / "r.csv").read_text().splitlines()) == rep["n_vertices"] + 1


# ------------------------------------------------------------------ invariants

def test_build_flex_round_trip(run, config, tmp_path):
    code, _, _ = run("flex", "--config", "config.json", "-o", "flex.json")
    assert code == 0
    built = json.loads(config.read_text())
    flexed = json.loads((tmp_path / "flex.json").read_text())
    assert flexed["flex"]["embedded"] is True
    strip = lambda d: canonical_json({k: v for k, v in d.items() if k not in ("metadata", "flex")})
    assert strip(flexed) == strip(built)
    # feeding the flex output back in gives the same block again
    code, _, _ = run("flex", "--config", "flex.json", "-o", "flex2.json")
    again = json.loads((tmp_path / "flex2.json").read_text())
    assert canonical_json(again["flex"]) == canonical_json(flexed["flex"])


@pytest.mark.parametrize("argv", [
    ("build", "--ax", 7.3, "--ay", 0.4, "--seed", 5),
    ("growth", "--reaper", "0.1,0.0"),
])
def test_determinism_stdout(run, argv):
    a = run(*argv, "-o", "-")
    b = run(*argv, "-o", "-")
    assert a[0] == 0 and a == b


def test_determinism_files(run, config, tmp_path, monkeypatch):
    # identical argv in two directories, so echoed paths agree too
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        (tmp_path / name / "config.json").write_bytes(config.read_bytes())
        monkeypatch.chdir(tmp_path / name)
        assert run("mesh", "--config", "config.json", "--res", 8, "-o", "s.obj")[0] == 0
        assert run("refine", "--mesh", "s.obj", "--max-iter", 2, "-o", "r.obj", "--history", "h.csv")[0] == 0
    for f in ("s.obj", "s.obj.json", "r.obj", "r.obj.json", "h.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_changes_output(run):
    a = run("build", "--ax", 7.3, "--seed", 1, "-o", "-")[1]
    b = run("build", "--ax", 7.3, "--seed", 2, "-o", "-")[1]
    assert a != b


def test_model_mesh_and_growth(run, config, tmp_path):
    assert run("mesh", "--model", "--res", 16, "--half-width", 5, "-o", "model.ply")[0] == 0
    assert (tmp_path / "model.ply").read_text().startswith("ply")
    code, out, _ = run("growth", "--config", "config.json", "-o", "-")
    assert code == 0
    assert abs(json.loads(out)["slope"] - 3.0) <= 0.2
    code, out, _ = run("growth", "--plane", "--radii", "10,100", "-o", "-")
    assert json.loads(out)["slope"] == pytest.approx(2.0)


# ------------------------------------------------------------------ exit codes

def test_usage_errors(run, config):
    assert run("bogus")[0] == 2
    assert run("build")[0] == 2  # --ax is required
    assert run("build", "--ax", "abc")[0] == 2
    assert run("verify")[0] == 2  # neither --mesh nor --config
    assert run("mesh", "-o", "x.obj")[0] == 2  # no --config and no --model
    assert run("mesh", "--config", "config.json", "-o", "-")[0] == 2
    assert run("growth", "--plane", "--reaper", "0,0")[0] == 2


def test_validation_failures(run, tmp_path):
    code, _, err = run("check", "--config", "missing.json")
    assert code == 1 and json.loads(err)["error"] == "missing_file"
    (tmp_path / "bad.json").write_text("{")
    code, _, err = run("check", "--config", "bad.json")
    assert code == 1 and json.loads(err)["error"] == "malformed_json"
    (tmp_path / "wrong.json").write_text('{"curves": "nope"}')
    assert run("check", "--config", "wrong.json")[0] == 1
    code, _, err = run("growth", "--reaper", "0,0", "--radii", "10,20")
    assert code == 1


def test_check_reports_non_general_position(run, tmp_path):
    d = {"curves": [{"b": 0.0, "c": 0.0}], "period": [math.pi / 3, 0.0], "epsilon": 0.1}
    (tmp_path / "c.json").write_text(json.dumps(d))
    code, out, err = run("check", "--config", "c.json", "-o", "-")
    assert code == 1
    assert json.loads(out)["general_position"]["passed"] is False
    assert json.loads(err)["error"] == "general_position"


def test_version(run):
    code, out, _ = run("--version")
    assert code == 0 and "0.1.0" in out
