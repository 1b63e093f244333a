"""Command line entry point.

    opsgd run CONFIG.json [--out DIR] [--seed N] [--jobs N]
    opsgd list-regimes
    opsgd verify-minimax CONFIG.json [--out DIR]

Exit codes: 0 when every verdict passes, 2 when any verdict fails, 1 on
configuration errors. The output directory defaults to ``$OPSGD_OUTPUT_DIR``
and then to ``./opsgd-out``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional, Sequence

from .experiments import (
    ConfigError,
    ExperimentConfig,
    list_regimes,
    load_config,
    minimax_report,
    run_config,
)
from .harness import atomic_write_text, results_csv

ENV_OUTPUT_DIR = "OPSGD_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "opsgd-out"

EXIT_PASS, EXIT_CONFIG, EXIT_FAIL = 0, 1, 2


def _output_dir(cli_value: Optional[str], cfg: Optional[ExperimentConfig]) -> str:
    if cli_value:
        return cli_value
    if cfg is not None and cfg.output_dir:
        return cfg.output_dir
    return os.environ.get(ENV_OUTPUT_DIR, DEFAULT_OUTPUT_DIR)


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def write_outputs(out_dir: str, cfg: ExperimentConfig, res) -> None:
    """Write results.csv, plotdata.csv and summary.json (each atomically)."""
    atomic_write_text(os.path.join(out_dir, "results.csv"),
                      results_csv(res.rows, ["series", "t", "mean_err", "se_err", "n"]))
    atomic_write_text(os.path.join(out_dir, "plotdata.csv"),
                      results_csv(res.plot, ["series", "log_t", "log_mean_err", "log_fit"]))
    atomic_write_text(os.path.join(out_dir, "summary.json"), _json(res.summary(cfg)))


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        res = run_config(cfg, jobs=args.jobs)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _output_dir(args.out, cfg)
    write_outputs(out, cfg, res)
    for v in res.verdicts:
        print(f"{v['verdict']}  {v['name']}")
    print(f"overall {'PASS' if res.passed else 'FAIL'}  ({res.runtime_seconds:.1f}s, outputs in {out})")
    return EXIT_PASS if res.passed else EXIT_FAIL


def format_regimes(rows: list[dict]) -> str:
    head = f"{'regularity':<10} {'error':<10} {'schedule':<9} {'s':>4} {'r':>4}  " \
           f"{'exponent':>8} {'log':>3}  {'step':>6}  {'minimax':>7} {'gap':>7}"
    lines = [head, "-" * len(head)]
    for row in rows:
        lines.append(
            f"{row['regularity']:<10} {row['error']:<10} {row['schedule']:<9} {row['s']:>4g} {row['r']:>4g}  "
            f"{row['exponent']:>8.4f} {'yes' if row['log_factor'] else 'no':>3}  {row['step_parameter']:>6.4f}  "
            f"{row['minimax']:>7.4f} {row['minimax_gap']:>7.4f}"
        )
    return "\n".join(lines)


def cmd_list_regimes(args) -> int:
    print(format_regimes(list_regimes()))
    return EXIT_PASS


def cmd_verify_minimax(args) -> int:
    try:
        cfg = load_config(args.config)
        rep = minimax_report(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _output_dir(args.out, cfg)
    atomic_write_text(os.path.join(out, "minimax_report.json"), _json(rep))
    ok = True
    for rec in rep["families"]:
        good = (rec["packing_size"] >= rec["packing_target"] and rec["separation_ok"] and rec["kl_ok"]
                and rec.get("kl_mc", {}).get("within_3se", True))
        ok &= good
        print(f"{'PASS' if good else 'FAIL'}  {rec['regime']} m={rec['m']}: size {rec['packing_size']}, "
              f"KL ratio {rec['kl_max_ratio']:.3g}, norm_within_R={rec['norm_within_R']}")
    return EXIT_PASS if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="opsgd", description="SGD for linear operators: rate experiments")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (default ${ENV_OUTPUT_DIR} or ./{DEFAULT_OUTPUT_DIR})")
    run.add_argument("--seed", type=int, help="override master_seed")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for replicates")
    run.set_defaults(func=cmd_run)
    lr = sub.add_parser("list-regimes", help="print the rate exponent table")
    lr.set_defaults(func=cmd_list_regimes)
    vm = sub.add_parser("verify-minimax", help="build and check hard-instance families")
    vm.add_argument("config")
    vm.add_argument("--out")
    vm.set_defaults(func=cmd_verify_minimax)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
