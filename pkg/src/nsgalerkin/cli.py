"""Command-line entry point: ``nsgalerkin run|validate|sweep``.

Exit codes: 0 ok, 1 I/O error, 2 validation error, 3 numeric failure, 4 blow-up.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import config as cfgmod
from .errors import (BlowUpError, ConfigError, ContractionFailure, ParameterError, QuadratureError,
                     TimeGridMismatch, UndefinedFitError)
from .scenarios import _fresh_dir, run_scenario

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_BLOWUP = 0, 1, 2, 3, 4

def exit_code(err: BaseException) -> int:
    if isinstance(err, BlowUpError):
        return EXIT_BLOWUP
    if isinstance(err, (QuadratureError, ContractionFailure, UndefinedFitError)):
        return EXIT_NUMERIC
    if isinstance(err, (ConfigError, ParameterError, TimeGridMismatch)):
        return EXIT_VALIDATION
    if isinstance(err, OSError):
        return EXIT_IO
    raise err


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsgalerkin", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, outputs=True):
        p.add_argument("--config", required=True, help="scenario TOML file")
        if outputs:
            p.add_argument("--out", default="runs", help="artifact root directory (default: runs)")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
            p.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")

    common(sub.add_parser("run", help="run one scenario"))
    common(sub.add_parser("validate", help="check a config without computing"), outputs=False)
    sw = sub.add_parser("sweep", help="run the cartesian product of --set overrides")
    common(sw)
    sw.add_argument("--set", action="append", default=[], metavar="KEY=V1,V2",
                    help="dotted field and comma-separated values, e.g. params.nu=0.1,0.2")
    return ap


def _parse_values(text: str) -> list:
    # reuse the TOML scalar grammar so 1 stays an int and 1.0 a float
    try:
        return tomllib.loads(f"v = [{text}]")["v"]
    except tomllib.TOMLDecodeError:
        return [s.strip() for s in text.split(",")]


def _overrides(items) -> list:
    axes = []
    for item in items:
        if "=" not in item:
            raise ConfigError(item, "expected KEY=V1,V2")
        key, text = item.split("=", 1)
        axes.append((key.strip(), _parse_values(text)))
    keys = [k for k, _ in axes]
    return [dict(zip(keys, combo)) for combo in itertools.product(*[v for _, v in axes])]


def _apply(raw: dict, changes: dict) -> dict:
    out = copy.deepcopy(raw)
    for key, value in changes.items():
        node = out
        *path, last = key.split(".")
        for part in path:
            if not isinstance(node.get(part), dict):
                raise ConfigError(key, "unknown section")
            node = node[part]
        if last not in node:
            raise ConfigError(key, "unknown field")
        node[last] = value
    return out


def _load(path):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfg = cfgmod.load(path)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return cfg


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    print(f"ok: scenario={cfg.scenario} hash={cfg.digest()[:12]}")
    return EXIT_OK


def _report(result) -> None:
    status = {True: "PASS", False: "FAIL", None: "DONE"}[result.passed]
    print(f"{status} {result.directory}")
    print(json.dumps(result.summary, indent=2, sort_keys=True, default=str))


def cmd_run(args) -> int:
    cfg = _load(args.config)
    result = run_scenario(cfg, args.out, seed=args.seed, threads=args.threads)
    _report(result)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.set:
        raise ConfigError("--set", "a sweep needs at least one override")
    base = _load(args.config).to_dict()
    changes = _overrides(args.set)
    variants = [cfgmod.from_dict(_apply(base, ch)) for ch in changes]
    root = _fresh_dir(Path(args.out), f"sweep-{variants[0].scenario}")

    def one(k):
        target = root / f"variant-{k:03d}"
        try:
            res = run_scenario(variants[k], root, seed=args.seed, directory=target)
            return [k, json.dumps(changes[k], sort_keys=True), target.name, "ok", res.passed]
        except Exception as err:
            return [k, json.dumps(changes[k], sort_keys=True), target.name,
                    f"{type(err).__name__}: {err}", None, exit_code(err)]

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(one, range(len(variants))))
    else:
        rows = [one(k) for k in range(len(variants))]
    with open(root / "index.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "overrides", "directory", "status", "passed"])
        for row in rows:
            w.writerow(["" if v is None else str(v).lower() if isinstance(v, bool) else v for v in row[:5]])
    print(f"sweep of {len(rows)} variants -> {root}")
    codes = [row[5] for row in rows if len(row) > 5]
    return max(codes) if codes else EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "validate": cmd_validate, "sweep": cmd_sweep}[args.command]
    try:
        return handler(args)
    except Exception as err:
        code = exit_code(err)
        kind = {EXIT_IO: "io error", EXIT_VALIDATION: "invalid config",
                EXIT_NUMERIC: "numeric failure", EXIT_BLOWUP: "blow-up"}[code]
        print(f"{kind}: {err}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
