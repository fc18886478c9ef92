"""Planted synthetic data for desk-scale runs and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from engine.corpus import Corpus


@dataclass
class PlantedData:
    """Generated corpus with the ground truth it was drawn from."""

    corpus: Corpus
    components: np.ndarray
    labels: np.ndarray | None = None
    proportions: np.ndarray | None = None


def planted_lda(
    num_docs: int,
    vocab_size: int,
    doc_length: int,
    num_topics: int,
    rng: np.random.Generator,
    alpha: float = 0.1,
    topic_concentration: float = 0.1,
) -> PlantedData:
    """Draw topics β_k ~ Dir, proportions θ_d ~ Dir(α), then Poisson-length documents.

    Token counts per document are a single multinomial draw from θ_d·β, which has
    the same distribution as sampling a topic and then a word for every token.
    """
    topics = rng.dirichlet(np.full(vocab_size, topic_concentration), size=num_topics)
    proportions = rng.dirichlet(np.full(num_topics, alpha), size=num_docs)
    lengths = np.maximum(1, rng.poisson(doc_length, size=num_docs))
    matrix = np.zeros((num_docs, vocab_size), dtype=np.int64)
    for d in range(num_docs):
        word_probs = proportions[d] @ topics
        matrix[d] = rng.multinomial(lengths[d], word_probs / word_probs.sum())
    vocabulary = [f"w{v}" for v in range(vocab_size)]
    return PlantedData(
        corpus=Corpus.from_count_matrix(matrix, vocabulary),
        components=topics,
        proportions=proportions,
    )


def planted_block_lda(
    num_docs: int,
    vocab_size: int,
    doc_length: int,
    num_topics: int,
    rng: np.random.Generator,
    alpha: float = 0.05,
) -> PlantedData:
    """LDA corpus whose topics live on disjoint word blocks.

    Topic k draws Dirichlet(1) weights over the k-th block of ``vocab_size // K``
    words and gives every other word zero mass, so each word belongs to exactly
    one topic and the generating topics are identifiable.
    """
    width = vocab_size // num_topics
    if width < 1:
        raise ValueError(f"vocab_size={vocab_size} leaves no words for {num_topics} topics")
    topics = np.zeros((num_topics, vocab_size))
    for k in range(num_topics):
        topics[k, k * width : (k + 1) * width] = rng.dirichlet(np.ones(width))
    proportions = rng.dirichlet(np.full(num_topics, alpha), size=num_docs)
    lengths = np.maximum(1, rng.poisson(doc_length, size=num_docs))
    matrix = np.zeros((num_docs, vocab_size), dtype=np.int64)
    for d in range(num_docs):
        word_probs = proportions[d] @ topics
        matrix[d] = rng.multinomial(lengths[d], word_probs / word_probs.sum())
    keep = matrix.sum(axis=0) > 0
    vocabulary = [f"w{v}" for v in np.flatnonzero(keep)]
    return PlantedData(
        corpus=Corpus.from_count_matrix(matrix[:, keep], vocabulary),
        components=topics[:, keep],
        proportions=proportions,
    )


def planted_multinomial_mixture(
    num_points: int,
    vocab_size: int,
    doc_length: int,
    num_components: int,
    rng: np.random.Generator,
    concentration: float = 0.1,
) -> PlantedData:
    """One component per document; all its tokens come from that component's word distribution."""
    components = rng.dirichlet(np.full(vocab_size, concentration), size=num_components)
    labels = rng.integers(num_components, size=num_points)
    matrix = np.array([rng.multinomial(doc_length, components[z]) for z in labels]).reshape(
        num_points, vocab_size
    )
    return PlantedData(
        corpus=Corpus.from_count_matrix(matrix), components=components, labels=labels
    )


def planted_gaussian_mixture(
    num_points: int,
    dim: int,
    num_components: int,
    rng: np.random.Generator,
    separation: float = 10.0,
    scale: float = 1.0,
) -> PlantedData:
    """Isotropic clusters whose means sit ``separation``·scale apart along the first axis."""
    means = np.zeros((num_components, dim))
    means[:, 0] = separation * scale * np.arange(num_components)
    labels = rng.integers(num_components, size=num_points)
    points = means[labels] + scale * rng.standard_normal((num_points, dim))
    return PlantedData(corpus=Corpus.from_dense(points), components=means, labels=labels)
