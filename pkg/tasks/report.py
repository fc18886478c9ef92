"""Report task — write the CSV trace and log what the run found."""

import logging
from pathlib import Path

from prefect import task
from prefect.cache_policies import NO_CACHE

from engine.context import get_results_dir
from engine.lda import top_words
from engine.runners import LdaRun, TrainingResult
from engine.tracer import hash_config, record_run, write_trace
from intake.schema import ExperimentConfig
from tasks.load import LoadedData

logger = logging.getLogger(__name__)


def default_trace_path(config: ExperimentConfig) -> Path:
    name = f"{config.model.value}-{config.algo.value}-K{config.topics}"
    if config.topk is not None:
        name += f"-C{config.topk}"
    return get_results_dir() / f"{name}-P{config.workers}-seed{config.seed}.csv"


@task(name="report", cache_policy=NO_CACHE)
def report(config: ExperimentConfig, data: LoadedData, result: TrainingResult) -> Path:
    """Write the trace to ``config.out`` (or the results dir) and record provenance."""
    path = Path(config.out) if config.out is not None else default_trace_path(config)
    write_trace(result.trace, path)
    final = result.trace.final
    logger.info("Trace written to %s (%d records)", path, len(result.trace.records))

    if isinstance(result.run, LdaRun):
        for k, words in enumerate(top_words(result.run.state, data.train.vocabulary, n=8)):
            logger.info("topic %d: %s", k, " ".join(words))

    summary = {"updates": final.updates, "elbo": final.elbo}
    if final.perplexity is not None:
        summary["perplexity"] = final.perplexity
    record_run(
        task="report",
        inputs=[data.source],
        outputs=[str(path)],
        config_hash=hash_config(config.model_dump(mode="json")),
        summary=summary,
    )
    return path
