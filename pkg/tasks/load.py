"""Load task — read the configured corpus (or generate one) and split off a test set."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from prefect import task
from prefect.cache_policies import NO_CACHE

from engine.corpus import Corpus
from engine.tracer import hash_config, record_run
from intake.corpus import (
    load_count_matrix,
    load_dense_matrix,
    load_uci_files,
    split_train_test,
)
from intake.schema import ExperimentConfig, ModelKind
from intake.synthetic import (
    planted_block_lda,
    planted_gaussian_mixture,
    planted_lda,
    planted_multinomial_mixture,
)

logger = logging.getLogger(__name__)


@dataclass
class LoadedData:
    train: Corpus
    test: Corpus | None = None
    source: str = "synthetic"


def _synthetic(config: ExperimentConfig) -> Corpus:
    rng = np.random.default_rng(config.seed)
    if config.model == ModelKind.GMM:
        planted = planted_gaussian_mixture(
            config.synthetic_points, config.synthetic_dim, config.topics, rng
        )
    elif config.model == ModelKind.MIXMULT:
        planted = planted_multinomial_mixture(
            config.synthetic_points, config.synthetic_vocab, config.synthetic_length,
            config.topics, rng,
        )
    elif config.synthetic_blocks:
        planted = planted_block_lda(
            config.synthetic_docs, config.synthetic_vocab, config.synthetic_length,
            config.topics, rng,
        )
    else:
        planted = planted_lda(
            config.synthetic_docs, config.synthetic_vocab, config.synthetic_length,
            config.topics, rng, alpha=config.alpha,
        )
    return planted.corpus


def read_corpus(config: ExperimentConfig) -> tuple[Corpus, str]:
    """The corpus named by the config and a label for provenance."""
    if config.docword is not None:
        return load_uci_files(config.docword, config.vocab), str(config.docword)
    if config.data is not None:
        if config.model == ModelKind.GMM:
            return load_dense_matrix(config.data), str(config.data)
        return load_count_matrix(config.data), str(config.data)
    return _synthetic(config), "synthetic"


@task(name="load", cache_policy=NO_CACHE)
def load_data(config: ExperimentConfig) -> LoadedData:
    """Load or generate the corpus, validate it, and split by documents when asked."""
    corpus, source = read_corpus(config)
    corpus.validate()
    test = None
    if config.test_fraction > 0:
        corpus, test = split_train_test(corpus, config.test_fraction, config.seed)
        logger.info("split %d train / %d test documents", corpus.num_docs, test.num_docs)

    record_run(
        task="load",
        inputs=[source],
        outputs=[],
        config_hash=hash_config(config.model_dump(mode="json")),
        summary={"docs": corpus.num_docs, "words": corpus.num_words, "entries": corpus.nnz},
    )
    return LoadedData(train=corpus, test=test, source=source)
