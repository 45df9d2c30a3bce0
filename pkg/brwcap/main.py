#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Command-line entry point: run, fit, report, selftest and green-table.
"""

import sys
import os
import logging
import argparse
import datetime
import traceback
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

ROOT_DIRECTORY = os.getcwd()


def setup_logging(debug: bool = False, log_directory: Optional[str] = None) -> str:
    """File handler at DEBUG plus a console handler; returns the log file path"""
    log_directory = log_directory or os.path.join(ROOT_DIRECTORY, "logs")
    os.makedirs(log_directory, exist_ok=True)
    log_file = os.path.join(log_directory, f"brwcap_{datetime.datetime.now().strftime('%Y%m%d_%H%M%S')}.log")

    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(logging.DEBUG)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(logging.DEBUG if debug else logging.INFO)

    formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    file_handler.setFormatter(formatter)
    console_handler.setFormatter(formatter)

    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)
    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)

    logger.info(f"Starting brwcap. Log file: {log_file}")
    return log_file


def exception_hook(exctype, value, traceback_obj):
    """Global exception hook to log unhandled exceptions"""
    logger.critical("Unhandled exception:", exc_info=(exctype, value, traceback_obj))
    try:
        dump_dir = os.path.join(ROOT_DIRECTORY, "crash_dumps")
        os.makedirs(dump_dir, exist_ok=True)

        timestamp = datetime.datetime.now().strftime("%Y%m%d_%H%M%S")
        dump_file = os.path.join(dump_dir, f"crash_dump_{timestamp}.log")

        with open(dump_file, "w") as f:
            f.write("=== BRWCAP CRASH REPORT ===\n")
            f.write(f"Time: {datetime.datetime.now()}\n")
            f.write(f"Command: {' '.join(sys.argv)}\n")
            f.write(f"Exception type: {exctype}\n")
            f.write(f"Exception value: {value}\n\n")
            f.write("=== TRACEBACK ===\n")
            traceback.print_exception(exctype, value, traceback_obj, file=f)

        logger.info(f"Crash dump written to {dump_file}")
    except Exception as e:
        logger.error(f"Failed to write crash dump: {str(e)}")

    sys.__excepthook__(exctype, value, traceback_obj)


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments"""
    parser = argparse.ArgumentParser(
        prog="brwcap",
        description="Capacity of branching random walk ranges: simulation and exponent fits")
    parser.add_argument("--debug", action="store_true", default=False,
                        help="Verbose console logging and full forest invariant checks")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a numerical setting for this run (repeatable)")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run seeded trials and append them to a CSV")
    run.add_argument("--config", type=str, default=None,
                     help="Experiment document (JSON or key=value lines); flags override it")
    run.add_argument("--mode", choices=["vertices", "subtrees", "conditioned"], default=None)
    run.add_argument("--dim", type=int, default=None)
    run.add_argument("--mu", type=str, default=None, help="Offspring law, e.g. geometric:0.5")
    run.add_argument("--theta", type=str, default=None, help="Tree walk step law, e.g. srw")
    run.add_argument("--eta", type=str, default=None, help="Capacity walk step law, e.g. lazy-srw:0.5")
    run.add_argument("--n-min", type=int, default=None)
    run.add_argument("--n-max", type=int, default=None)
    run.add_argument("--ratio", type=float, default=None)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--capacity-policy", choices=["hybrid", "exact", "monte-carlo", "bounds"], default=None)
    run.add_argument("--out", type=str, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--no-progress", action="store_true", default=False)

    fit = commands.add_parser("fit", help="Fit log-log exponents from a results CSV")
    fit.add_argument("--in", dest="input", required=True)
    fit.add_argument("--stat", action="append", default=None,
                     help="Statistic to fit (repeatable); all known statistics by default")
    fit.add_argument("--n-min", type=int, default=None)
    fit.add_argument("--n-max", type=int, default=None)
    fit.add_argument("--config-hash", type=str, default=None)
    fit.add_argument("--window", type=int, default=4, help="Grid points per trend window")
    fit.add_argument("--out", type=str, default="fits.json")

    report = commands.add_parser("report", help="Write the markdown summary and SVG plots")
    report.add_argument("--in", dest="input", required=True)
    report.add_argument("--fits", required=True)
    report.add_argument("--out-dir", default="report")

    selftest = commands.add_parser("selftest", help="Run the oracle and invariant suite")
    selftest.add_argument("--quick", action="store_true", default=False,
                          help="Reduced sample sizes")
    selftest.add_argument("--seed", type=int, default=2024)

    table = commands.add_parser("green-table", help="Evaluate G on a box and export it as CSV")
    table.add_argument("--eta", type=str, default="lazy-srw:0.5")
    table.add_argument("--dim", type=int, default=3)
    table.add_argument("--radius", type=int, default=4)
    table.add_argument("--out", type=str, default="green.csv")

    return parser.parse_args(argv)


def _parse_overrides(items: List[str]) -> Dict[str, Any]:
    from brwcap.utils.config import _coerce
    overrides = {}
    for item in items:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip().replace("-", "_")] = _coerce(value)
    return overrides


def experiment_settings(args: argparse.Namespace) -> Dict[str, Any]:
    """Experiment document values overridden by any flag given on the command line"""
    from brwcap.utils.config import load_document
    settings: Dict[str, Any] = load_document(args.config) if args.config else {}
    for key in ("mode", "dim", "mu", "theta", "eta", "n_min", "n_max", "ratio", "trials",
                "seed", "capacity_policy", "out"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    return settings


def command_run(args, config) -> int:
    from brwcap.controllers.harness import ExperimentRunner
    from brwcap.models.records import ExperimentConfig
    from brwcap.utils.memory_monitor import memory_monitor

    settings = experiment_settings(args)
    workers = settings.pop("workers", None)
    if args.workers is not None:
        workers = args.workers
    cfg = ExperimentConfig.from_mapping(settings)
    memory_monitor.memory_fraction = float(config.get("memory_fraction"))
    memory_monitor.start_monitoring()
    try:
        runner = ExperimentRunner(cfg, config=config, workers=workers,
                                  show_progress=not args.no_progress)
        records = runner.run()
    finally:
        memory_monitor.stop_monitoring()
    failed = sum(1 for r in records if r.error_tag)
    print(f"{len(records)} records appended to {cfg.out} ({failed} with errors)")
    return 0 if runner.sandwich_violations == 0 else 2


def command_fit(args, config) -> int:
    from brwcap.controllers.harness import STATISTICS, fit_all, load_records
    from brwcap.utils.reporting import ExperimentReport, save_fits

    records = load_records(args.input, args.config_hash)
    statistics = args.stat or list(STATISTICS)
    fits = fit_all(records, statistics, args.n_min, args.n_max, window=args.window)
    save_fits(fits, args.out)
    report = ExperimentReport(os.path.dirname(os.path.abspath(args.out)))
    report.add_fits(fits)
    print(report.summary_table(statistics))
    return 0


def command_report(args, config) -> int:
    from brwcap.controllers.harness import STATISTIC_COLUMNS, load_records
    from brwcap.utils.reporting import ExperimentReport, load_fits

    records = load_records(args.input)
    fits = load_fits(args.fits)
    report = ExperimentReport(args.out_dir)
    report.set_summary_stats({
        "results": args.input,
        "records": len(records),
        "configurations": int(records["config_hash"].nunique()) if len(records) else 0,
        "grid points": int(records["n"].nunique()) if len(records) else 0,
    })
    report.add_fits(fits)
    paths = report.write_all(records, columns=STATISTIC_COLUMNS)
    report.save_json_report("report.json")
    print("\n".join(paths))
    return 0


def command_selftest(args, config) -> int:
    from brwcap.controllers.selftest import SelfTest, SuiteSizes

    sizes = SuiteSizes.quick() if args.quick else SuiteSizes()
    results = SelfTest(sizes, seed=args.seed, config=config).run()
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.elapsed_s:7.1f}s  {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def command_green_table(args, config) -> int:
    import numpy as np
    from brwcap.controllers.green import GreenEvaluator
    from brwcap.models.lattice import parse_step_distribution

    ev = GreenEvaluator(parse_step_distribution(args.eta, args.dim), config=config)
    axes = np.arange(-args.radius, args.radius + 1)
    box = np.stack(np.meshgrid(*([axes] * args.dim), indexing="ij"), axis=-1).reshape(-1, args.dim)
    ev.green_many(box)
    ev.export_table_csv(args.out)
    print(f"{ev.table_size()} canonical values written to {args.out}")
    return 0


COMMANDS = {
    "run": command_run,
    "fit": command_fit,
    "report": command_report,
    "selftest": command_selftest,
    "green-table": command_green_table,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    args = parse_arguments(argv)
    setup_logging(args.debug)
    sys.excepthook = exception_hook
    logger.info("Global exception handler installed")

    from brwcap.utils.config import Config
    config = Config()
    config.update(_parse_overrides(args.set))
    if args.debug:
        config.update({"debug_checks": True})

    exit_code = COMMANDS[args.command](args, config)
    logger.info("brwcap shutting down")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
