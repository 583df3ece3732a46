"""Command-line interface.

    optomech run <scenario.json|name> [--out DIR] [--set key=value ...]
                 [--truncation mode=N ...] [--tolerance T]
    optomech validate <scenario.json|name>
    optomech list-scenarios

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import runner, scenario as sc_mod
from .errors import ConfigError, OptomechError


def _load_raw(ref: str) -> dict:
    path = Path(ref)
    if path.exists():
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if ref in runner.shipped_scenario_names():
        from importlib import resources

        text = (resources.files("optomech") / "scenarios" / f"{ref}.json").read_text()
        return json.loads(text)
    raise ConfigError(f"scenario file not found: {ref}")


def _parse_set(value: str) -> tuple[str, object]:
    if "=" not in value:
        raise ConfigError(f"--set needs key=value, got {value!r}")
    key, raw = value.split("=", 1)
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def _apply_cli_overrides(cfg: dict, args) -> dict:
    for kv in args.set or []:
        key, value = _parse_set(kv)
        sc_mod.apply_override(cfg, key, value)
    for kv in args.truncation or []:
        key, value = _parse_set(kv)
        if key not in sc_mod.MODE_LABELS:
            raise ConfigError(f"--truncation mode must be one of {sc_mod.MODE_LABELS}")
        sc_mod.apply_override(cfg, f"space.{key}", int(value))
    if args.tolerance is not None:
        run = cfg.get("run", {})
        if run.get("mode") == "steady_state":
            sc_mod.apply_override(cfg, "run.criteria.rtol", float(args.tolerance))
        elif run.get("mode") == "sweep":
            sc_mod.apply_override(cfg, "run.inner.rtol", float(args.tolerance))
        else:
            sc_mod.apply_override(cfg, "run.rtol", float(args.tolerance))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="optomech", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a scenario and write its artifacts")
    run_p.add_argument("scenario", help="path to a scenario JSON or a shipped scenario name")
    run_p.add_argument("--out", default=None, help="output directory (default: from config)")
    run_p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry by dotted path")
    run_p.add_argument("--truncation", action="append", metavar="MODE=N",
                       help="override one mode's Fock truncation")
    run_p.add_argument("--tolerance", type=float, default=None,
                       help="integrator relative tolerance override")

    val_p = sub.add_parser("validate", help="parse and validate a scenario, run nothing")
    val_p.add_argument("scenario")

    sub.add_parser("list-scenarios", help="list the shipped scenario library")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-scenarios":
            for name in runner.shipped_scenario_names():
                sc = runner.load_shipped(name)
                mode = sc.resolved["run"]["mode"]
                print(f"{name:20s} {mode}")
            return 0
        if args.command == "validate":
            cfg = _load_raw(args.scenario)
            sc = sc_mod.parse_scenario_dict(cfg)
            print(f"ok: scenario {sc.name!r} "
                  f"(space dims {sc.space.dims}, run mode {sc.resolved['run']['mode']})")
            return 0
        cfg = _load_raw(args.scenario)
        cfg = _apply_cli_overrides(cfg, args)
        sc = sc_mod.parse_scenario_dict(cfg)
        bundle = runner.run(sc)
        outdir = args.out or sc.output_dir or f"results/{sc.name}"
        written = runner.emit(bundle, outdir)
        for path in written:
            print(path)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OptomechError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
