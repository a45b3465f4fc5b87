"""Command-line runner.

    vpsplit run SPEC.json [--out DIR] [--threads N] [--reproducible]
    vpsplit list-experiments
    vpsplit validate SPEC.json

The output directory defaults to ``$VPSPLIT_OUT/<kind>`` and otherwise to
``./vpsplit_out/<kind>``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import subprocess
import sys
import time
import traceback
from pathlib import Path

from . import __version__
from .diagnostics import gnuplot_script, write_order_csv
from .experiments import DESCRIPTIONS, ConfigError, resolve, run_study
from .pic import write_diagnostics_csv

EXIT_USAGE = 2
EXIT_NUMERICAL = 3
OUT_ENV = "VPSPLIT_OUT"


def git_describe() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return v


def write_rows_csv(path, rows) -> None:
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for r in rows:
            out.writerow([_fmt(r.get(c, "")) for c in cols])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def load_spec(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"spec file {path} not found")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"spec file {path} is not valid JSON: {exc}")


def output_dir(resolved: dict, cli_out) -> Path:
    if cli_out:
        return Path(cli_out)
    if "output" in resolved:
        return Path(resolved["output"])
    base = os.environ.get(OUT_ENV)
    return Path(base if base else "vpsplit_out") / resolved["kind"]


def _error_record(exc: BaseException, stage: str) -> dict:
    tb = traceback.extract_tb(exc.__traceback__)
    module = Path(tb[-1].filename).stem if tb else "unknown"
    return {"status": "error", "stage": stage, "type": type(exc).__name__,
            "module": module, "message": str(exc)}


def _report(record: dict, out: Path | None) -> None:
    text = json.dumps(record, indent=2, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text + "\n")


def cmd_run(args) -> int:
    out = Path(args.out) if args.out else None
    try:
        resolved = resolve(load_spec(args.spec))
    except ConfigError as exc:
        _report(_error_record(exc, "config"), out)
        return EXIT_USAGE
    out = output_dir(resolved, args.out)
    config = {k: v for k, v in resolved.items() if k != "output"}
    t0 = time.perf_counter()
    try:
        result = run_study(resolved, threads=args.threads, reproducible=args.reproducible)
    except ConfigError as exc:
        _report(_error_record(exc, "config"), out)
        return EXIT_USAGE
    except Exception as exc:  # numerical failure: report where it came from
        _report(_error_record(exc, "numerical"), out)
        return EXIT_NUMERICAL
    elapsed = time.perf_counter() - t0

    out.mkdir(parents=True, exist_ok=True)
    stale = out / "error.json"
    if stale.exists():
        stale.unlink()
    files = []
    if result.records:
        write_order_csv(out / "orders.csv", result.records)
        (out / "plot.gp").write_text(gnuplot_script("orders.csv", config["kind"]))
        files += ["orders.csv", "plot.gp"]
    if result.all_rows:
        write_rows_csv(out / "errors_all.csv", result.all_rows)
        files.append("errors_all.csv")
    if result.series:
        write_diagnostics_csv(out / "diagnostics.csv", result.series)
        files.append("diagnostics.csv")
    meta = {
        "status": "ok",
        "config": config,
        "version": __version__,
        "git_describe": git_describe(),
        "reproducible": bool(args.reproducible),
        "summary": _jsonable(result.summary),
        "files": files,
    }
    if not args.reproducible:
        meta["timings"] = {"total": elapsed, **_jsonable(result.timings)}
        meta["threads"] = args.threads
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote {', '.join(files + ['meta.json'])} to {out}")
    return 0


def cmd_list(args) -> int:
    for kind, text in DESCRIPTIONS.items():
        print(f"{kind:18s} {text}")
    return 0


def cmd_validate(args) -> int:
    try:
        resolved = resolve(load_spec(args.spec))
    except ConfigError as exc:
        _report(_error_record(exc, "config"), None)
        return EXIT_USAGE
    print(json.dumps(resolved, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vpsplit", description="particle-method convergence studies")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment spec")
    run.add_argument("spec")
    run.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<kind>)")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--reproducible", action="store_true",
                     help="omit timings so reruns give bit-identical files")
    run.set_defaults(func=cmd_run)
    ls = sub.add_parser("list-experiments", help="list experiment kinds")
    ls.set_defaults(func=cmd_list)
    val = sub.add_parser("validate", help="check a spec and print the resolved config")
    val.add_argument("spec")
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("--threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
