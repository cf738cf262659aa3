"""Command-line entry point: ``caden simulate | analyze | scenarios``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .config import ConfigError, RunConfig, load_config, resolve_scenario
from .datasets import DataValidationError, analyze_stage1, ingest_dataset
from .harness import DESIGNS, run_campaign, write_campaign
from .records import Cohort
from .simgen import scenario_catalogue

logger = logging.getLogger("caden")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _alpha_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number list: {text!r}") from None
    if not values or any(not 0 < v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"alpha_2 values must lie in (0, 1): {text!r}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="caden", description="Adaptive enrichment trial simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte Carlo operating characteristics for one scenario")
    sim.add_argument("--scenario", required=True, help="catalogue name or path to a config file")
    sim.add_argument("--design", choices=DESIGNS, default=None)
    sim.add_argument("--runs", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--alpha2", type=_alpha_list, action="append", default=None,
                     help="promise-test level(s); repeat or comma-separate (default 0.05,0.1,0.2)")
    sim.add_argument("--parallel", type=int, default=None, help="worker processes")
    sim.add_argument("--averaging", choices=("macro", "micro"), default=None,
                     help="how sensitivity/specificity are combined across runs")
    sim.add_argument("--out", required=True, help="output directory")

    ana = sub.add_parser("analyze", help="interim analysis of an observed stage-1 dataset")
    ana.add_argument("--data", required=True, help="delimited file with id, treatment, response, covariates")
    ana.add_argument("--config", default=None, help="config file (design levels, column names)")
    ana.add_argument("--seed", type=int, default=None, help="seed for the cross-validation folds")
    ana.add_argument("--out", required=True, help="output directory")

    sub.add_parser("scenarios", help="list the built-in scenario catalogue")
    return parser


def _simulate(args) -> int:
    source = Path(args.scenario)
    if source.is_file():
        run = load_config(source)
        if run.scenario is None:
            raise ConfigError(f"{source}: no scenario section")
    else:
        run = RunConfig(scenario=resolve_scenario(args.scenario))
    if args.design is not None:
        run.design = args.design
    if args.runs is not None:
        run.runs = args.runs
    if args.seed is not None:
        run.seed = args.seed
    if args.parallel is not None:
        run.parallel = args.parallel
    if args.averaging is not None:
        run.averaging = args.averaging
    if args.alpha2 is not None:
        run.alpha_2_values = tuple(v for group in args.alpha2 for v in group)
    if run.runs < 1 or run.parallel < 1:
        raise ConfigError("--runs and --parallel must be at least 1")
    run.design_config(run.scenario.N1, run.scenario.N2)  # validates the design section early

    start = time.perf_counter()
    result = run_campaign(run.scenario, run.design, run.runs, run.seed, run.parallel, run.alpha_2_values,
                          design_overrides=run.design_overrides, averaging=run.averaging)
    write_campaign(result, args.out)
    logger.info("%d runs in %.1f s -> %s", run.runs, time.perf_counter() - start, args.out)
    sys.stdout.write(result.csv_text())
    return EXIT_OK


def _analyze(args) -> int:
    run = load_config(args.config) if args.config else RunConfig()
    records = ingest_dataset(args.data, run.data_schema)
    cohort = Cohort.from_records(records)
    if cohort.treatment.min() == cohort.treatment.max():
        raise DataValidationError("dataset must contain patients in both arms")
    cfg = run.design_config(len(cohort))
    seed = args.seed if args.seed is not None else run.seed
    report = analyze_stage1(cohort, cfg, seed)
    report["data"] = str(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    sys.stdout.write(f"strategy={report['strategy']} p_overall={report['p_overall']:.4g} "
                     f"p_promise={report['p_promise'] if report['p_promise'] is None else format(report['p_promise'], '.4g')}\n")
    return EXIT_OK


def _scenarios(args) -> int:
    for name, cfg in scenario_catalogue().items():
        extra = f" RR_3={cfg.RR_3} prev_harmful={cfg.prev_harmful}" if cfg.RR_3 is not None else ""
        sys.stdout.write(f"{name:16s} RR_0={cfg.RR_0} RR_1={cfg.RR_1} RR_2={cfg.RR_2} "
                         f"prev_sensitive={cfg.prev_sensitive}{extra} N1={cfg.N1} N2={cfg.N2}\n")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"simulate": _simulate, "analyze": _analyze, "scenarios": _scenarios}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except DataValidationError as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - any other failure maps to the runtime exit code
        logger.error("runtime failure: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
