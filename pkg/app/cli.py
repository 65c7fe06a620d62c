"""
Command-line entry point: python -m app.cli <verb> --config path [options]

Verbs:
  simulate    one block through the configured channel, written as TSV
  fit-params  surrogate parameter table per launch power
  air         AIR reports for every power point and receiver, plus the peak over power
  sweep       like air, with power points dispatched to the worker pool
"""

import os
import sys
import argparse
import logging
from typing import List, Optional

from dotenv import load_dotenv

from app.models.schemas import ExperimentConfig
from app.services.experiment_pipeline import (
    default_workers,
    emit_param_table,
    param_table_path,
    run_experiment_full,
    run_sweep,
    simulate_block,
)
from app.utils.config_loader import ConfigLoader, parse_power_grid
from app.utils.errors import SicError
from app.utils.file_formats import dump_waveform, format_simulation_tsv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MODEL_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sic", description="SIC receivers for nonlinear fiber channels")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Experiment config (.ini or .json)")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--output", default=None, help="Override the output path")
    common.add_argument("--workers", type=int, default=None, help="Worker processes (default SIC_WORKERS)")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    verbs = parser.add_subparsers(dest="verb", required=True)
    simulate = verbs.add_parser("simulate", parents=[common], help="Propagate one block")
    simulate.add_argument("--waveform", default=None, help="Also dump the transmitted WDM waveform")
    verbs.add_parser("fit-params", parents=[common], help="Emit the surrogate parameter table")
    verbs.add_parser("air", parents=[common], help="Estimate AIRs")
    sweep = verbs.add_parser("sweep", parents=[common], help="Estimate AIRs over a power grid")
    sweep.add_argument("--powers", default=None, help='Power grid, "start:stop:step" or a comma list')
    return parser


def _configure_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else os.getenv("SIC_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    update = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.output is not None:
        update["output_path"] = args.output
    if getattr(args, "powers", None):
        update["powers_dbm"] = parse_power_grid(args.powers)
    if not update:
        return cfg
    # re-validate so overrides obey the same invariants as the file
    return ConfigLoader.from_dict({**cfg.model_dump(), **update})


def _simulate(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    x, y, tx = simulate_block(cfg)
    path = cfg.output_path
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_simulation_tsv(x, y))
    logger.info(f"Wrote {x.size} symbols to {path}")
    if args.waveform:
        if tx is None:
            logger.warning("Waveform dump is only available on the fiber channel")
        else:
            dump_waveform(tx.samples, tx.sample_rate_hz, args.waveform)
            logger.info(f"Wrote {tx.samples.size} waveform samples to {args.waveform}")


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    workers = args.workers or default_workers()

    try:
        cfg = _apply_overrides(ConfigLoader.load(args.config), args)

        if args.verb == "simulate":
            _simulate(cfg, args)
        elif args.verb == "fit-params":
            rows = emit_param_table(cfg, workers)
            logger.info(f"Wrote {len(rows)} parameter rows to {param_table_path(cfg)}")
        elif args.verb in ("air", "sweep"):
            runner = run_experiment_full if args.verb == "air" else run_sweep
            outcome = runner(cfg, workers)
            logger.info(f"Wrote {len(outcome.reports)} AIR reports to {cfg.output_path}")
            for peak in outcome.peaks:
                logger.info(
                    f"Peak {peak.receiver} S={peak.stages}: {peak.total_bpcu:.4f} bpcu at {peak.power_dbm:g} dBm"
                )
        return EXIT_OK

    except SicError as e:
        logger.error(f"{args.verb} failed: {e}")
        return EXIT_MODEL_ERROR
    except Exception as e:
        logger.error(f"{args.verb} failed unexpectedly: {e}")
        return EXIT_FAILURE


def main() -> None:
    load_dotenv()
    sys.exit(run())


if __name__ == "__main__":
    main()
