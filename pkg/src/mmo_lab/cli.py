"""Command-line front end: ``mmo-lab run | list-recipes | describe``.

Exit codes: 0 success, 2 invalid recipe or unknown operation, 3 runtime
failure, 4 failed ``--check``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path

from . import __version__
from .analysis.ensemble import default_threads
from .experiments import OPS, RecipeError
from .io import write_json

EXIT_OK, EXIT_RECIPE, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def recipe_hash(recipe: dict) -> str:
    return hashlib.sha256(canonical_json(recipe).encode()).hexdigest()


# -- bundled recipes ----------------------------------------------------------
def _recipe_dir():
    return resources.files("mmo_lab") / "recipes"


def bundled_recipes() -> dict:
    out = {}
    for entry in sorted(_recipe_dir().iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = json.loads(entry.read_text())
    return out


def load_recipe(ref: str) -> dict:
    """Recipe from a file path, or a bundled recipe by name."""
    p = Path(ref)
    if p.is_file():
        text = p.read_text()
    else:
        name = p.name[:-5] if p.name.endswith(".json") else p.name
        bundled = _recipe_dir() / f"{name}.json"
        if not bundled.is_file():
            raise RecipeError(f"no recipe file or bundled recipe named {ref!r}")
        text = bundled.read_text()
    try:
        recipe = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RecipeError(f"malformed JSON: {exc}") from None
    validate_recipe(recipe)
    return recipe


def validate_recipe(recipe) -> dict:
    if not isinstance(recipe, dict):
        raise RecipeError("recipe must be a JSON object")
    for key in ("name", "op"):
        if not isinstance(recipe.get(key), str):
            raise RecipeError(f"recipe needs a string '{key}'")
    if recipe["op"] not in OPS:
        raise RecipeError(f"unknown operation {recipe['op']!r}")
    seed = recipe.get("base_seed", 0)
    if not isinstance(seed, int) or seed < 0 or seed >= 1 << 64:
        raise RecipeError("base_seed must be an integer in [0, 2^64)")
    OPS[recipe["op"]].validate(recipe.get("args", {}))
    for chk in recipe.get("check", []):
        if not isinstance(chk, dict) or "path" not in chk:
            raise RecipeError("each check needs a 'path'")
    return recipe


# -- checks -----------------------------------------------------------------
def _lookup(summary, path: str):
    cur = summary
    for part in path.split("."):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        elif isinstance(cur, dict) and part.lstrip("-").isdigit() and int(part) in cur:
            cur = cur[int(part)]
        elif isinstance(cur, (list, tuple)) and part.isdigit():
            cur = cur[int(part)]
        else:
            raise KeyError(path)
    return cur


def evaluate_checks(summary: dict, checks) -> list:
    """One ``(path, ok, value, rule)`` tuple per check."""
    out = []
    for chk in checks:
        rule = {k: v for k, v in chk.items() if k != "path"}
        try:
            v = _lookup(summary, chk["path"])
        except (KeyError, IndexError):
            out.append((chk["path"], False, None, rule))
            continue
        ok = True
        if "equals" in chk:
            ok &= v == chk["equals"]
        if "min" in chk:
            ok &= v is not None and v >= chk["min"]
        if "max" in chk:
            ok &= v is not None and v <= chk["max"]
        if "contains" in chk:
            ok &= all(c in v for c in chk["contains"])
        out.append((chk["path"], bool(ok), v, rule))
    return out


# -- run --------------------------------------------------------------------
def run_recipe(recipe: dict, out_dir, threads=None):
    """Execute a validated recipe; returns (summary, manifest).

    Files are produced in a staging directory next to `out_dir` and moved in
    only after the operation succeeded, so a failed run leaves nothing behind.
    """
    spec = OPS[recipe["op"]]
    args = spec.validate(recipe.get("args", {}))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".stage-", dir=out_dir))
    t0 = time.time()
    try:
        seed = int(recipe.get("base_seed", 0))
        summary = spec.fn(args, stage, threads or default_threads(), seed)
        produced = sorted(p.name for p in stage.iterdir())
        write_json(stage / "summary.json", summary)
        produced.append("summary.json")
        manifest = {"recipe": recipe["name"], "op": recipe["op"], "recipe_hash": recipe_hash(recipe),
                    "tool_version": __version__, "base_seed": seed,
                    "wall_time_s": time.time() - t0, "outputs": produced,
                    "threads": threads or default_threads()}
        write_json(stage / "manifest.json", manifest)
        for name in produced + ["manifest.json"]:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return summary, manifest


def _cmd_run(ns) -> int:
    try:
        recipe = load_recipe(ns.recipe)
    except RecipeError as exc:
        print(f"invalid recipe: {exc}", file=sys.stderr)
        return EXIT_RECIPE
    out = Path(ns.out) if ns.out else Path("runs") / recipe["name"]
    try:
        summary, manifest = run_recipe(recipe, out, ns.threads)
    except RecipeError as exc:
        print(f"invalid recipe: {exc}", file=sys.stderr)
        return EXIT_RECIPE
    except (RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{recipe['name']}: wrote {', '.join(manifest['outputs'])} to {out}")
    if ns.check:
        results = evaluate_checks(summary, recipe.get("check", []))
        for path, ok, v, rule in results:
            print(f"{'PASS' if ok else 'FAIL'} {path} = {v!r} {rule}")
        if not all(r[1] for r in results):
            return EXIT_CHECK
    return EXIT_OK


def _cmd_list(ns) -> int:
    for name, r in bundled_recipes().items():
        print(f"{name}\t{r['op']}\t{r.get('description', '')}")
    return EXIT_OK


def _cmd_describe(ns) -> int:
    if ns.op not in OPS:
        print(f"unknown operation {ns.op!r}; known: {', '.join(sorted(OPS))}", file=sys.stderr)
        return EXIT_RECIPE
    print(OPS[ns.op].describe(ns.op))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mmo-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute a recipe")
    r.add_argument("recipe", help="recipe file or bundled recipe name")
    r.add_argument("--out", help="output directory (default runs/<name>)")
    r.add_argument("--threads", type=int, default=None,
                   help="worker threads (default $MMO_LAB_THREADS or 1)")
    r.add_argument("--check", action="store_true", help="evaluate the recipe's checks")
    r.set_defaults(func=_cmd_run)
    sub.add_parser("list-recipes", help="list bundled recipes").set_defaults(func=_cmd_list)
    d = sub.add_parser("describe", help="show the arguments of an operation")
    d.add_argument("op")
    d.set_defaults(func=_cmd_describe)
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
