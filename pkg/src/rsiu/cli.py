"""Command-line entry point: ``rsiu <command> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import sys

from . import harness
from .errors import ConfigError, DomainError, InfeasibleBudgetError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _common(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--testbed")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="CSV output path (stdout when omitted)")
    p.add_argument("--records", help="also write per-replication rows here")


def _fc_flags(p):
    p.add_argument("--procedure", choices=harness.fc.VARIANTS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--n0", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--stage-cap", dest="stage_cap", type=int)
    p.add_argument("--oracle", action="store_const", const=True, default=None)


def _fb_flags(p):
    p.add_argument("--T", dest="T", help="budget or comma-separated budgets")
    p.add_argument("--cd", help="data cost per source (comma-separated)")
    p.add_argument("--cs", type=float)
    p.add_argument("--N0", dest="N0", type=int)
    p.add_argument("--rho0", type=float)
    p.add_argument("--pi0", type=float)
    p.add_argument("--m0", type=int)
    p.add_argument("--delta", type=int)
    p.add_argument("--oracle", action="store_const", const=True, default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="rsiu", description="Selection of the best design under input uncertainty.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fixed-confidence", help="PCS and stage counts of a fixed-confidence procedure")
    _common(p)
    _fc_flags(p)

    p = sub.add_parser("fixed-budget", help="PCS of OCBAIU over one or more budgets")
    _common(p)
    _fb_flags(p)

    p = sub.add_parser("grid", help="PCS over a grid of data fractions plus OCBAIU's fraction")
    _common(p)
    _fb_flags(p)
    p.add_argument("--fractions", help="comma-separated data fractions")

    p = sub.add_parser("table1", help="expected stages over batch sizes and procedures")
    _common(p)
    _fc_flags(p)
    p.add_argument("--batches", help="comma-separated batch sizes")

    p = sub.add_parser("regions", help="continuation-region trajectories as long-format CSV")
    _common(p)
    _fc_flags(p)
    p.add_argument("--replication", type=int, default=0)
    return parser


_SKIP = {"command", "config", "records", "replication"}


def make_config(args):
    overrides = {k: v for k, v in vars(args).items() if k not in _SKIP and v is not None}
    if args.config:
        try:
            return harness.ExperimentConfig.load(args.config, **overrides)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    if args.command == "fixed-budget" or args.command == "grid":
        overrides.setdefault("procedure", "OCBAIU")
    return harness.ExperimentConfig.from_mapping(overrides)


def _emit(text, path):
    if path:
        harness.write_text(path, text)
    else:
        sys.stdout.write(text)


def run(args):
    cfg = make_config(args)
    if args.command == "fixed-confidence":
        records, summary = harness.run_fixed_confidence_experiment(cfg)
        summaries = [summary]
    elif args.command == "fixed-budget":
        records, summaries = harness.run_fixed_budget_experiment(cfg)
    elif args.command == "grid":
        records, summaries = None, harness.grid_fraction(cfg)
    elif args.command == "table1":
        records, summaries = None, harness.table_expected_stages(cfg)
    else:
        logs = harness.region_trajectories(cfg, replication=args.replication)
        _emit(harness.emit_region_plot_data(logs), cfg.out)
        return
    _emit(harness.summary_csv(summaries), cfg.out)
    if args.records and records is not None:
        harness.write_text(args.records, harness.records_csv(records))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run(args)
    except (ConfigError, DomainError, InfeasibleBudgetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
