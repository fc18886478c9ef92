from intake.schema import ExperimentConfig


def make_config(**overrides) -> ExperimentConfig:
    """Validated config with a short budget and strict ELBO checks."""
    values = {"max_epochs": 3, "strict": True}
    values.update(overrides)
    return ExperimentConfig(**values)
