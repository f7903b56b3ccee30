import csv
import json
import subprocess
import sys

import pytest

from mmo_lab.cli import (EXIT_CHECK, EXIT_OK, EXIT_RECIPE, EXIT_RUNTIME, bundled_recipes,
                         canonical_json, evaluate_checks, load_recipe, main, recipe_hash,
                         run_recipe)
from mmo_lab.experiments import OPS, RecipeError

SMALL_TRANSITION = {
    "name": "small", "op": "transition", "base_seed": 5,
    "args": {"start": [0.5, -2.1, -8.0], "route": ["S3"], "N": 40, "sigma": 0.01, "sigma_p": 0.01},
}


def _write(tmp_path, recipe, name="r.json"):
    p = tmp_path / name
    p.write_text(recipe if isinstance(recipe, str) else json.dumps(recipe))
    return str(p)


# -- listing ---------------------------------------------------------------------------
def test_list_recipes(capsys):
    assert main(["list-recipes"]) == EXIT_OK
    names = {line.split("\t")[0] for line in capsys.readouterr().out.splitlines()}
    expected = {"fig1a", "fig1b", "fig1c", "fig1d", "fig6", "fig7", "sector-scan", "chain"}
    expected |= {f"fig8{c}" for c in "abcd"} | {f"fig9{c}" for c in "abcd"}
    assert expected <= names


def test_bundled_recipes_are_valid_and_carry_the_figure_settings():
    recs = bundled_recipes()
    for name in recs:
        assert load_recipe(name) == recs[name]
    levels = sorted(recs[f"fig1{c}"]["args"]["sigma"] for c in "abcd")
    assert levels == [0.0, 2e-7, 2e-5, 2e-3]
    for c in "abcd":
        a = recs[f"fig1{c}"]["args"]
        assert a["sigma"] == a["sigma_p"] and a["model"]["eps2"] == 0.7
    for name in ["fig6", "fig7"] + [f"fig{n}{c}" for n in (8, 9) for c in "abcd"]:
        assert recs[name]["args"].get("model", {"eps2": 1}).get("eps2", 1) == 1


def test_describe(capsys):
    assert main(["describe", "sweep_noise"]) == EXIT_OK
    out = capsys.readouterr().out
    for arg in OPS["sweep_noise"].required:
        assert f"  {arg}:" in out
    assert main(["describe", "no_such_op"]) == EXIT_RECIPE


# -- recipe validation -----------------------------------------------------------------------
def test_malformed_json_leaves_nothing(tmp_path):
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, "{not json"), "--out", str(out)]) == EXIT_RECIPE
    assert not out.exists()


@pytest.mark.parametrize("recipe", [
    {"name": "x", "op": "nope"},
    {"name": "x", "op": "transition", "args": {"start": [0, 0, 0]}},
    {"name": "x", "op": "fold", "args": {"bogus": 1}},
    {"name": "x", "op": "fold", "base_seed": -1},
    ["not", "an", "object"],
])
def test_invalid_recipes(tmp_path, recipe):
    assert main(["run", _write(tmp_path, recipe), "--out", str(tmp_path / "o")]) == EXIT_RECIPE
    assert not (tmp_path / "o").exists()


def test_unknown_recipe_name():
    with pytest.raises(RecipeError):
        load_recipe("definitely-not-a-recipe")


# -- running ------------------------------------------------------------------------------------
def test_deterministic_pattern_recipe(tmp_path, capsys):
    out = tmp_path / "det"
    assert main(["run", "koper_det", "--out", str(out), "--check"]) == EXIT_OK
    assert (out / "pattern.txt").read_text() == "1^1 1^2\n"
    text = capsys.readouterr().out
    assert "PASS word" in text and "FAIL" not in text
    man = json.loads((out / "manifest.json").read_text())
    assert man["recipe_hash"] == recipe_hash(load_recipe("koper_det"))
    assert set(man["outputs"]) == {"pattern.txt", "events.json", "summary.json"}


def test_rerun_and_threads_are_byte_identical(tmp_path):
    path = _write(tmp_path, SMALL_TRANSITION)
    for d, th in (("a", "1"), ("b", "1"), ("c", "3")):
        assert main(["run", path, "--out", str(tmp_path / d), "--threads", th]) == EXIT_OK
    a = (tmp_path / "a" / "hits.csv").read_bytes()
    assert a == (tmp_path / "b" / "hits.csv").read_bytes() == (tmp_path / "c" / "hits.csv").read_bytes()
    assert (tmp_path / "a" / "stats.json").read_bytes() == (tmp_path / "c" / "stats.json").read_bytes()


def test_csv_numbers_have_17_significant_digits(tmp_path):
    from mmo_lab.io import fmt

    assert fmt(0.1) == "0.10000000000000001"
    run_recipe(SMALL_TRANSITION, tmp_path)
    with open(tmp_path / "hits.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "x", "y", "z", "ok"]
    x = rows[1][1]
    assert x == fmt(float(x)) and len(x.lstrip("-").replace(".", "").lstrip("0")) == 17


def test_runtime_failure_exit_code(tmp_path):
    bad = json.loads(json.dumps(SMALL_TRANSITION))
    bad["args"]["t_max"] = 1e-3        # the reference path cannot reach its target
    out = tmp_path / "o"
    assert main(["run", _write(tmp_path, bad), "--out", str(out)]) == EXIT_RUNTIME
    assert not list(out.glob("*.csv")) and not list(out.glob(".stage-*"))


def test_failed_check_exit_code(tmp_path, capsys):
    rec = dict(SMALL_TRANSITION, check=[{"path": "n_eff", "min": 10 ** 6}])
    assert main(["run", _write(tmp_path, rec), "--out", str(tmp_path / "o"), "--check"]) == EXIT_CHECK
    assert "FAIL n_eff" in capsys.readouterr().out


def test_check_rules():
    s = {"a": {"b": [1, 2, 3]}, "w": "1^1 1^2", "m": {12: "x"}}
    res = evaluate_checks(s, [{"path": "a.b.1", "equals": 2}, {"path": "a.b", "contains": [3]},
                              {"path": "w", "equals": "1^1 1^2"}, {"path": "m.12", "equals": "x"},
                              {"path": "missing", "min": 0}, {"path": "a.b.0", "min": 2}])
    assert [r[1] for r in res] == [True, True, True, True, False, False]


def test_recipe_hash_is_canonical():
    a = {"name": "n", "op": "fold", "args": {"eps_grid": [0.01, 0.001, 0.0001]}}
    b = json.loads('{"args": {"eps_grid": [0.01, 0.001, 0.0001]}, "op": "fold", "name": "n"}')
    assert recipe_hash(a) == recipe_hash(b)
    assert canonical_json(a) == canonical_json(b)
    assert recipe_hash(a) != recipe_hash(dict(a, name="m"))


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "mmo_lab.cli", "describe", "fold"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("fold:")
