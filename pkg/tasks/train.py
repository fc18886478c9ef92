"""Train task — run the configured inference algorithm."""

from prefect import task
from prefect.cache_policies import NO_CACHE

from engine.runners import TrainingResult, train_model
from engine.tracer import hash_config, record_run
from intake.schema import ExperimentConfig
from tasks.load import LoadedData


@task(name="train", cache_policy=NO_CACHE)
def train(config: ExperimentConfig, data: LoadedData) -> TrainingResult:
    result = train_model(config, data.train, data.test)
    final = result.trace.final
    record_run(
        task="train",
        inputs=[data.source],
        outputs=[],
        config_hash=hash_config(config.model_dump(mode="json")),
        summary={
            "updates": final.updates,
            "elbo": final.elbo,
            "records": len(result.trace.records),
        },
    )
    return result
