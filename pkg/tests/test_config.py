import pytest
from pydantic import ValidationError

from engine.context import ENGINE_ROOT, load_defaults
from intake.config import build_config, merge_config, parse_key_value
from intake.schema import Algorithm, ExperimentConfig, ModelKind


def test_parse_key_value():
    text = """
    # experiment overrides
    algo = esvi-topk
    max-epochs=5   # trailing comment
    out =
    vocab = none
    """
    assert parse_key_value(text) == {
        "algo": "esvi-topk",
        "max_epochs": "5",
        "out": None,
        "vocab": None,
    }


def test_parse_key_value_reports_line():
    with pytest.raises(ValueError, match="line 2"):
        parse_key_value("topics=4\njust words\n")


def test_layers_override_in_order():
    defaults = {"topics": 8, "algo": "vi", "max_epochs": 20, "seed": 0}
    file_values = {"topics": "16", "seed": "3"}
    flags = {"topics": 4, "seed": None, "max-epochs": 2}
    config = merge_config(defaults, file_values, flags)
    assert config.topics == 4
    assert config.seed == 3
    assert config.max_epochs == 2
    assert config.algo == Algorithm.VI


def test_build_config_reads_file(tmp_path):
    (tmp_path / "run.cfg").write_text("model=mixmult\ntopics=5\n")
    config = build_config(tmp_path / "run.cfg", {"workers": 2})
    assert config.model == ModelKind.MIXMULT
    assert (config.topics, config.workers) == (5, 2)


def test_shipped_defaults_are_valid():
    defaults = load_defaults(ENGINE_ROOT / "config.yml")
    config = ExperimentConfig(**defaults)
    assert config.algo == Algorithm.ESVI
    assert config.max_epochs is not None


def test_missing_defaults_file_is_empty(tmp_path):
    assert load_defaults(tmp_path / "absent.yml") == {}


@pytest.mark.parametrize(
    "overrides",
    [
        {"algo": "svi", "workers": 2},
        {"algo": "esvi-topk"},
        {"algo": "esvi", "topk": 2},
        {"algo": "esvi-topk", "topk": 9, "topics": 8},
        {"model": "gmm", "algo": "esvi-topk", "topk": 2},
        {"model": "mixmult", "algo": "esvi", "topics": 2, "subset_size": 3},
        {"model": "mixmult", "algo": "esvi", "subset_size": 1},
        {"model": "gmm", "test_fraction": 0.2},
        {"max_epochs": None, "max_updates": None, "max_seconds": None},
        {"docword": "docword.txt"},
        {"model": "gmm", "docword": "d.txt", "vocab": "v.txt"},
        {"docword": "d.txt", "vocab": "v.txt", "data": "x.csv"},
        {"topics": 0},
        {"workers": 0},
        {"algo": "gibbs"},
        {"unknown_knob": 1},
    ],
)
def test_contradictory_configs_are_rejected(overrides):
    values = {"max_epochs": 1}
    values.update(overrides)
    with pytest.raises(ValidationError):
        ExperimentConfig(**values)


def test_metadata_reports_cutoff():
    dense = ExperimentConfig(max_epochs=1, topics=6)
    topk = ExperimentConfig(max_epochs=1, topics=6, algo="esvi-topk", topk=2)
    assert dense.metadata()["C"] == 6
    assert topk.metadata()["C"] == 2
    assert topk.metadata()["algo"] == "esvi-topk"
