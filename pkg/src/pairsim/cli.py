"""Command-line entry point.

Usage::

    pairsim run CONFIG [key=value ...] [--set key=value] [--seed N] [--out DIR] [--threads N]
    pairsim --recipe NAME [--out DIR] ...
    pairsim --list-recipes | --show-recipe NAME

CONFIG is an INI file with a ``[run]`` section (``experiment``, ``seed``,
``output_dir``) and a ``[parameters]`` section, or a ``manifest.json``
written by an earlier run. Exit codes: 0 success, 2 invalid configuration,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .experiments import CSV_SCHEMA_VERSION, EXPERIMENTS, ConfigError, resolve_parameters
from .recipes import RECIPES

log = logging.getLogger("pairsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
RUN_KEYS = ("experiment", "seed", "output_dir")
DEFAULT_OUTPUT = "pairsim_output"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairsim", description="photon-pair dissipation simulator")
    p.add_argument("args", nargs="*",
                   help="optional 'run', a config path and key=value overrides")
    p.add_argument("--config", help="INI config or manifest.json")
    p.add_argument("--recipe", help="start from a built-in recipe")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a parameter (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    p.add_argument("--list-recipes", action="store_true", help="list built-in recipes")
    p.add_argument("--show-recipe", metavar="NAME", help="print a recipe as an INI file")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# ---------------------------------------------------------------------------
# Configuration

def _split_override(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key=value")
    return key.strip(), value.strip()


def load_config(path: str) -> tuple[dict[str, Any], dict[str, Any]]:
    """(run section, parameters) from an INI file or a manifest."""
    f = Path(path)
    if not f.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = f.read_text(encoding="utf-8")
    if f.suffix == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict) or not isinstance(doc.get("parameters", {}), dict):
            raise ConfigError(f"{path}: not a manifest")
        run = {k: doc[k] for k in RUN_KEYS if k in doc}
        return run, dict(doc.get("parameters", {}))
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for sec in cp.sections():
        if sec not in ("run", "parameters"):
            raise ConfigError(f"unknown section [{sec}]")
    run = dict(cp["run"]) if cp.has_section("run") else {}
    for key in run:
        if key not in RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} in [run]")
    params = dict(cp["parameters"]) if cp.has_section("parameters") else {}
    return run, params


def resolve(ns: argparse.Namespace) -> dict[str, Any]:
    """Merge recipe, config file and overrides into one typed configuration."""
    items = list(ns.args)
    if items and items[0] == "run":
        items = items[1:]
    paths = [x for x in items if "=" not in x]
    overrides = [x for x in items if "=" in x] + list(ns.set)
    if ns.config:
        paths.insert(0, ns.config)
    if len(paths) > 1:
        raise ConfigError(f"more than one config given: {paths}")
    run: dict[str, Any] = {}
    params: dict[str, Any] = {}
    if ns.recipe:
        if ns.recipe not in RECIPES:
            raise ConfigError(f"unknown recipe {ns.recipe!r}")
        r = RECIPES[ns.recipe]
        run = {"experiment": r.experiment, "seed": r.seed}
        params = dict(r.parameters)
    if paths:
        r_run, r_params = load_config(paths[0])
        run.update(r_run)
        params.update(r_params)
    for item in overrides:
        key, value = _split_override(item)
        if key in RUN_KEYS:
            run[key] = value
        else:
            params[key] = value
    if ns.seed is not None:
        run["seed"] = ns.seed
    if ns.out is not None:
        run["output_dir"] = ns.out
    name = run.get("experiment")
    if name is None:
        raise ConfigError("no experiment given (set experiment in [run] or use --recipe)")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    try:
        seed = int(run.get("seed", 0))
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {run.get('seed')!r}") from None
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    return {"experiment": name, "seed": seed,
            "output_dir": str(run.get("output_dir", DEFAULT_OUTPUT)),
            "parameters": resolve_parameters(EXPERIMENTS[name].schema, params)}


# ---------------------------------------------------------------------------
# Output

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def manifest(cfg: dict[str, Any], tables) -> dict[str, Any]:
    return {
        "experiment": cfg["experiment"],
        "seed": cfg["seed"],
        "output_dir": cfg["output_dir"],
        "parameters": cfg["parameters"],
        "version": __version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "files": {name: list(t.header) for name, t in sorted(tables.items())},
    }


def write_outputs(cfg: dict[str, Any], outcome) -> Path:
    """Render everything in memory first, then write the files."""
    out = Path(cfg["output_dir"])
    files = {name: render_csv(t.header, t.rows) for name, t in outcome.tables.items()}
    files["summary.json"] = _dump_json(outcome.summary)
    files["manifest.json"] = _dump_json(manifest(cfg, outcome.tables))
    out.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        tmp = out / (name + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out / name)
    return out


# ---------------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    ns = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if ns.list_recipes:
        for r in RECIPES.values():
            print(f"{r.name:26s} {r.experiment:16s} {r.description}")
        return EXIT_OK
    if ns.show_recipe:
        if ns.show_recipe not in RECIPES:
            print(f"error: unknown recipe {ns.show_recipe!r}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(RECIPES[ns.show_recipe].to_ini())
        return EXIT_OK
    if ns.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = resolve(ns)
        run = EXPERIMENTS[cfg["experiment"]].prepare(cfg["parameters"], cfg["seed"], ns.threads)
    except (ConfigError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        outcome = run()
        out = write_outputs(cfg, outcome)
    except Exception as exc:  # noqa: BLE001 - any failure after validation is a runtime error
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {', '.join(sorted(outcome.tables))}, summary.json, manifest.json to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
