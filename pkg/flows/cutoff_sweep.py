"""Sweep flows — esvi-topk at several cutoffs C, or at several topic counts K for a fixed C."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from prefect import flow
from pydantic import ValidationError

from engine.context import get_results_dir, init as init_context
from engine.errors import EngineError
from engine.tracer import RunTrace
from flows.experiment_flow import add_experiment_arguments, config_from_args
from intake.schema import Algorithm, ExperimentConfig
from tasks.load import LoadedData, load_data
from tasks.report import report
from tasks.train import train

logger = logging.getLogger(__name__)


def default_cutoffs(num_topics: int) -> list[int]:
    """1, K/8, K/4, K/2 and K, clipped to [1, K] and deduplicated."""
    candidates = (1, num_topics // 8, num_topics // 4, num_topics // 2, num_topics)
    return sorted({min(num_topics, max(1, c)) for c in candidates})


def default_topic_counts(cutoff: int) -> list[int]:
    """K = 4C, 8C and 16C."""
    return [4 * cutoff, 8 * cutoff, 16 * cutoff]


def _variant(config: ExperimentConfig, out: Path, **changes) -> ExperimentConfig:
    values = config.model_dump()
    values.update(algo=Algorithm.ESVI_TOPK, out=out, **changes)
    return ExperimentConfig(**values)


def _run_variants(
    variants: dict[int, ExperimentConfig], data: LoadedData, label: str
) -> dict[int, RunTrace]:
    traces: dict[int, RunTrace] = {}
    for value, run_config in variants.items():
        logger.info("Starting training with %s=%d...", label, value)
        result = train(run_config, data)
        report(run_config, data, result)
        traces[value] = result.trace
    return traces


def write_summary(path: Path, column: str, traces: dict[int, RunTrace]) -> None:
    """One row per swept value with the final updates, ELBO and perplexity."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow((column, "updates", "elbo", "perplexity"))
        for value, trace in traces.items():
            final = trace.final
            perplexity = "" if final.perplexity is None else format(final.perplexity, ".17g")
            writer.writerow((value, final.updates, format(final.elbo, ".17g"), perplexity))
    logger.info("Sweep summary written to %s", path)


@flow(name="Cutoff Sweep")
def cutoff_sweep(
    config: ExperimentConfig,
    cutoffs: list[int] | None = None,
    project_dir: str | None = None,
) -> dict[int, RunTrace]:
    """One esvi-topk run per cutoff, sharing the loaded corpus; writes a summary CSV."""
    init_context(project_dir)
    cutoffs = cutoffs or default_cutoffs(config.topics)
    out_dir = Path(config.out) if config.out is not None else get_results_dir() / "cutoff-sweep"

    logger.info("Starting data load...")
    data = load_data(config)
    variants = {c: _variant(config, out_dir / f"cutoff-{c}.csv", topk=c) for c in cutoffs}
    traces = _run_variants(variants, data, "C")
    write_summary(out_dir / "summary.csv", "cutoff", traces)
    return traces


@flow(name="Topic Sweep")
def topic_sweep(
    config: ExperimentConfig,
    topic_counts: list[int] | None = None,
    project_dir: str | None = None,
) -> dict[int, RunTrace]:
    """esvi-topk at a fixed cutoff C for each topic count K on one corpus.

    C is ``config.topk`` when set and K/4 of the configured topic count otherwise.
    The corpus is loaded once with the configured K, so synthetic corpora stay
    identical across runs.
    """
    init_context(project_dir)
    cutoff = config.topk or max(1, config.topics // 4)
    topic_counts = topic_counts or default_topic_counts(cutoff)
    if min(topic_counts) < cutoff:
        raise ValueError(f"every topic count must be at least C={cutoff}, got {topic_counts}")
    out_dir = Path(config.out) if config.out is not None else get_results_dir() / "topic-sweep"

    logger.info("Starting data load...")
    data = load_data(config)
    variants = {
        k: _variant(config, out_dir / f"topics-{k}.csv", topics=k, topk=cutoff)
        for k in topic_counts
    }
    traces = _run_variants(variants, data, "K")
    write_summary(out_dir / "summary.csv", "topics", traces)
    return traces


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Sweep the esvi-topk cutoff C or topic count K")
    add_experiment_arguments(parser)
    parser.add_argument("--sweep", choices=["cutoff", "topics"], default="cutoff")
    parser.add_argument("--cutoffs", type=int, nargs="+", default=None)
    parser.add_argument("--topic-counts", type=int, nargs="+", default=None)
    args = parser.parse_args(argv)
    init_context(args.project_dir)
    sweep, cutoffs, topic_counts = args.sweep, args.cutoffs, args.topic_counts
    del args.sweep, args.cutoffs, args.topic_counts
    try:
        config = config_from_args(args)
        if sweep == "topics":
            traces = topic_sweep(config, topic_counts, project_dir=args.project_dir)
        else:
            traces = cutoff_sweep(config, cutoffs, project_dir=args.project_dir)
    except (EngineError, ValidationError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    label = "K" if sweep == "topics" else "C"
    for value, trace in traces.items():
        print(f"{label}={value} updates={trace.final.updates} elbo={trace.final.elbo:.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
