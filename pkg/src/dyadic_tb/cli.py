"""Command-line driver: ``dyadic-tb <subcommand> --config PATH [--out DIR] ...``.

Exit status: 0 on success, 1 when a verification item fails (the failing
items are printed to stderr), 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .errors import ConfigError
from .invariants import grid_check
from .report import SWEEP_COLUMNS, write_csv, write_json

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
SUBCOMMANDS = ("grid-check", "decompose", "verify", "sweep", "oracle")


def _jobs(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("DYADIC_TB_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"DYADIC_TB_JOBS must be an integer, got {env!r}") from None
    return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dyadic-tb", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: $DYADIC_TB_JOBS or 1)")
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--tolerance-scale", type=float, default=1.0)
    return p


def _fail(failures: list[str]) -> int:
    print(f"{len(failures)} failing item(s):", file=sys.stderr)
    for f in failures:
        print(f"  {f}", file=sys.stderr)
    return EXIT_FAIL


def cmd_grid_check(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    trials = max(50, cfg.test_functions["count"])
    rows = grid_check(cfg.spec, np.random.default_rng([cfg.seed, 0]), trials, cfg.tolerance)
    for r in rows:
        r.update(config_hash=cfg.hash(), seed=cfg.seed)
    write_json(out / "grid_check.json", {"config_hash": cfg.hash(), "seed": cfg.seed, "checks": rows})
    write_csv(out / "grid_check.csv", rows)
    fails = [f"{r['metric']} ({r['tag']}) error {r['value']:.3e}" for r in rows if not r["passed"]]
    return _fail(fails) if fails else EXIT_OK


def cmd_decompose(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    from .pipeline import run_decompose

    res = run_decompose(cfg)
    write_json(out / "decomposition.json", res)
    fails = []
    for d in res["decompositions"]:
        r = d["lemma818"]
        if not (r["partition_ok"] and r["eq8.19"] and r["eq8.23"]["ok"]):
            fails.append(f"{d['root']}: decomposition bounds fail")
    return _fail(fails) if fails else EXIT_OK


def emit_report(report, out: Path, stem: str = "report") -> tuple[Path, Path, Path]:
    """``<stem>.json`` (full report), ``<stem>.csv`` (one row per check), ``constants.csv``."""
    return (
        write_json(out / f"{stem}.json", report.to_dict()),
        write_csv(out / f"{stem}.csv", report.summary_rows()),
        write_csv(out / "constants.csv", report.constant_rows()),
    )


def cmd_verify(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    from .pipeline import run_full_verification

    report = run_full_verification(cfg, jobs)
    emit_report(report, out)
    return _fail(report.failures()) if not report.passed else EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    from .pipeline import run_full_verification, sweep_configs

    if cfg.sweep is None:
        raise ConfigError("sweep needs a sweep block in the config")
    rows, fails = [], []
    for value, sub in sweep_configs(cfg):
        for kernel in sub.kernels:
            one = sub.replace(kernels=[kernel], cache_dir=sub.cache_dir) if len(sub.kernels) > 1 else sub
            report = run_full_verification(one, jobs)
            for r in report.constant_rows():
                rows.append({"sweep_param": cfg.sweep["param"], "sweep_value": value, "kernel": kernel["name"], **r})
            fails += [f"{cfg.sweep['param']}={value} {kernel['name']}: {f}" for f in report.failures()]
    write_csv(out / "sweep.csv", rows, SWEEP_COLUMNS[:2] + ("kernel",) + SWEEP_COLUMNS[2:])
    return _fail(fails) if fails else EXIT_OK


def cmd_oracle(cfg: ExperimentConfig, out: Path, jobs: int) -> int:
    from .oracle import write_golden

    res = write_golden(cfg, out)
    fails = [f"{k}: deviation {v:.3e}" for k, v in res["deviations"].items() if not v <= res["tolerance"]]
    return _fail(fails) if fails else EXIT_OK


COMMANDS = {
    "grid-check": cmd_grid_check,
    "decompose": cmd_decompose,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed_override, args.tolerance_scale)
        jobs = _jobs(args.jobs)
        return COMMANDS[args.subcommand](cfg, Path(args.out), jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
