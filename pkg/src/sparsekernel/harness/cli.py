"""Command-line entry point: ``sparsekernel <subcommand> --config FILE``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import experiments
from .config import ConfigError, build_scenario, int_list, lengthscale_scenarios, load_config
from .io import TIDY_COLUMNS, tidy, write_csv
from .oracles import fixture30, validate_suite

log = logging.getLogger("sparsekernel")

SUBCOMMANDS = ("validate", "regress", "optimize", "coverage", "bench")

PLOT_SPECS = {
    "regress_summary": ("n", ("linf_error", "bound", "info_gain")),
    "optimize_summary": ("N", ("mean_regret", "normalized_ratio", "regret_per_step")),
    "coverage_summary": ("seed", ("upper", "lower", "uniform_both")),
    "bench": ("n", ("exact_fit", "sparse_fit", "sparse_info_fit")),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsekernel", description=__doc__)
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", type=Path, help="YAML experiment file (optional for validate)")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory for CSV files")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
    p.add_argument("--audit", action="store_true", help="enable exact-posterior audits")
    p.add_argument("--plotdata", action="store_true", help="also write tidy long-format tables")
    return p


def _validate_config(command: str, cfg: dict) -> None:
    """Reject malformed settings before any computation or output."""
    if command == "regress":
        int_list(cfg, "n_grid", [50, 100, 200])
        if cfg.get("refresh", "every") not in ("every", "log"):
            raise ConfigError("refresh must be 'every' or 'log'")
    elif command == "optimize":
        grid = cfg.get("N_grid", [cfg.get("N", 64)])
        int_list({"N_grid": grid}, "N_grid")
        if min(grid) < 2:
            raise ConfigError("horizons must be at least 2")
        if cfg.get("variant", "finite") not in ("finite", "continuous"):
            raise ConfigError("variant must be 'finite' or 'continuous'")
    elif command == "coverage":
        for key in ("n", "trials"):
            if not isinstance(cfg.get(key, 1), int) or cfg.get(key, 1) < 1:
                raise ConfigError(f"{key} must be a positive integer")
    elif command == "bench":
        grid = int_list(cfg, "n_grid", [500, 1000, 2000, 4000])
        if grid != sorted(grid):
            raise ConfigError("n_grid must be ascending")
    if command in ("regress", "optimize", "coverage") and cfg.get("objective") is None:
        raise ConfigError(f"{command} needs an 'objective' section")


def run(args) -> int:
    if args.command == "validate":
        reports = validate_suite(audit=True)
        rows = [r.row() for r in reports]
        write_csv(args.out / "validate.csv", rows, ("identity", "max_abs_dev", "instance", "tolerance", "passed"))
        kernel, data, Z, Q, _, _ = fixture30()
        snap = experiments.posterior_snapshot(kernel, data, Z, Q)
        write_csv(args.out / "posterior_snapshot.csv", snap.rows, snap.columns)
        failed = [r for r in reports if not r.passed]
        for r in failed:
            print(f"FAILED {r.name}: deviation {r.max_abs_dev:.3e} > {r.tolerance:.1e} ({r.instance})", file=sys.stderr)
        log.info("validate: %d identities, %d failed", len(reports), len(failed))
        return 1 if failed else 0

    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    cfg = load_config(args.config)
    sc = build_scenario(cfg)
    _validate_config(args.command, cfg)
    if args.command == "regress":
        scenarios = lengthscale_scenarios(cfg)
        res = experiments.regress(scenarios, audit=args.audit or bool(cfg.get("audit", False)), jobs=args.jobs)
    elif args.command == "optimize":
        res = experiments.optimize(sc, jobs=args.jobs)
    elif args.command == "coverage":
        res = experiments.coverage(sc, jobs=args.jobs)
    else:
        res = experiments.bench(sc)

    for name, table in res.tables.items():
        write_csv(args.out / f"{name}.csv", table.rows, table.columns)
        if args.plotdata and name in PLOT_SPECS:
            x, ys = PLOT_SPECS[name]
            write_csv(args.out / f"{name}_tidy.csv", tidy(table.rows, name, x, ys), TIDY_COLUMNS)
    for msg in res.failures:
        print(f"FAILED {msg}", file=sys.stderr)
    return 1 if res.failures else 0


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SPARSEKERNEL_LOG", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 1
    if args.jobs < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return 1
    try:
        return run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
