"""Experiment flow — THE entry point. Load, train, report."""

from __future__ import annotations

import argparse
import logging
import sys

from prefect import flow
from pydantic import ValidationError

from engine.context import init as init_context
from engine.errors import EngineError
from engine.tracer import RunTrace
from intake.config import build_config
from intake.schema import Algorithm, ExperimentConfig, ModelKind
from tasks.load import load_data
from tasks.report import report
from tasks.train import train

logger = logging.getLogger(__name__)


@flow(name="Experiment Flow")
def run_experiment(config: ExperimentConfig, project_dir: str | None = None) -> RunTrace:
    """Run one configured experiment and return its trace."""
    init_context(project_dir)

    logger.info("Starting data load...")
    data = load_data(config)

    logger.info("Starting training...")
    result = train(config, data)

    logger.info("Starting report...")
    report(config, data, result)

    logger.info("Flow completed successfully.")
    return result.trace


def add_experiment_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every experiment CLI; unset flags leave lower layers alone."""
    parser.add_argument("--model", choices=[m.value for m in ModelKind], default=None)
    parser.add_argument("--algo", choices=[a.value for a in Algorithm], default=None)
    parser.add_argument("--topics", type=int, default=None, help="Number of topics/components K")
    parser.add_argument("--topk", type=int, default=None, help="Top-k cutoff C (esvi-topk)")
    parser.add_argument("--workers", type=int, default=None, help="Worker count P")
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--eta", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--max-epochs", type=float, default=None)
    parser.add_argument("--max-updates", type=int, default=None)
    parser.add_argument("--max-seconds", type=float, default=None)
    parser.add_argument("--eval-every", type=int, default=None, help="Updates between snapshots")
    parser.add_argument("--test-fraction", type=float, default=None)
    parser.add_argument("--docword", default=None, help="UCI docword file")
    parser.add_argument("--vocab", default=None, help="UCI vocab file")
    parser.add_argument("--data", default=None, help="Dense numeric matrix file")
    parser.add_argument("--out", default=None, help="Trace CSV path")
    parser.add_argument("--strict", action="store_true", default=None,
                        help="Fail on any ELBO decrease")
    parser.add_argument("--config", default=None, help="key=value file overriding config.yml")
    parser.add_argument(
        "--project-dir",
        default=None,
        help="Path to an external project directory (default: engine root)",
    )


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    flags = {
        key: value
        for key, value in vars(args).items()
        if key not in ("config", "project_dir")
    }
    return build_config(args.config, flags)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Run an ESVI experiment")
    add_experiment_arguments(parser)
    args = parser.parse_args(argv)
    init_context(args.project_dir)
    try:
        config = config_from_args(args)
        trace = run_experiment(config, project_dir=args.project_dir)
    except (EngineError, ValidationError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    final = trace.final
    print(f"updates={final.updates} elbo={final.elbo:.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
