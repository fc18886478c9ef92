"""Corpus ingestion — UCI bag-of-words files, dense numeric rows, train/test splits."""

from __future__ import annotations

import logging
from collections.abc import Iterable
from pathlib import Path

import numpy as np

from engine.corpus import Corpus
from engine.errors import CorpusParseError

logger = logging.getLogger(__name__)


def _header_value(lines, number: int, name: str) -> int:
    try:
        raw = next(lines)
    except StopIteration:
        raise CorpusParseError(number, f"missing header line for {name}") from None
    try:
        value = int(raw.strip())
    except ValueError:
        raise CorpusParseError(number, f"{name} must be an integer, got {raw.strip()!r}") from None
    if value < 0:
        raise CorpusParseError(number, f"{name} must be nonnegative, got {value}")
    return value


def load_uci_corpus(docword: Iterable[str], vocab: Iterable[str] | None = None) -> Corpus:
    """Parse a UCI docword stream (D, V, NNZ header, then 1-indexed triples).

    ``vocab``, when given, must hold exactly V lines.
    """
    lines = iter(docword)
    num_docs = _header_value(lines, 1, "D")
    num_words = _header_value(lines, 2, "V")
    nnz = _header_value(lines, 3, "NNZ")

    doc_ids = np.empty(nnz, dtype=np.int64)
    word_ids = np.empty(nnz, dtype=np.int64)
    counts = np.empty(nnz, dtype=np.int64)
    seen = 0
    number = 3
    for number, raw in enumerate(lines, start=4):
        line = raw.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 3:
            raise CorpusParseError(number, f"expected 'docID wordID count', got {line!r}")
        try:
            doc, word, count = (int(f) for f in fields)
        except ValueError:
            raise CorpusParseError(number, f"non-integer field in {line!r}") from None
        if not 1 <= doc <= num_docs:
            raise CorpusParseError(number, f"docID {doc} outside 1..{num_docs}")
        if not 1 <= word <= num_words:
            raise CorpusParseError(number, f"wordID {word} outside 1..{num_words}")
        if count < 1:
            raise CorpusParseError(number, f"count must be >= 1, got {count}")
        if seen == nnz:
            raise CorpusParseError(number, f"more entries than the header's NNZ={nnz}")
        doc_ids[seen], word_ids[seen], counts[seen] = doc - 1, word - 1, count
        seen += 1
    if seen != nnz:
        raise CorpusParseError(number + 1, f"header says NNZ={nnz} but found {seen} entries")

    vocabulary = None
    if vocab is not None:
        vocabulary = [line.strip() for line in vocab if line.strip()]
        if len(vocabulary) != num_words:
            raise CorpusParseError(
                len(vocabulary) + 1, f"vocab has {len(vocabulary)} words, header says V={num_words}"
            )

    corpus = Corpus(doc_ids, word_ids, counts, num_docs, num_words, vocabulary)
    logger.info(
        "loaded corpus: D=%d V=%d NNZ=%d tokens=%d",
        num_docs, num_words, nnz, corpus.total_tokens,
    )
    return corpus


def load_uci_files(docword_path: str | Path, vocab_path: str | Path | None = None) -> Corpus:
    with open(docword_path) as docword:
        if vocab_path is None:
            return load_uci_corpus(docword)
        with open(vocab_path) as vocab:
            return load_uci_corpus(docword, vocab)


def _numeric_rows(path: str | Path) -> tuple[np.ndarray, list[int]]:
    """Rows separated by commas or whitespace, with the file line each came from."""
    rows: list[list[float]] = []
    numbers: list[int] = []
    width = None
    with open(path) as f:
        for number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(",", " ").split()
            try:
                row = [float(x) for x in fields]
            except ValueError:
                raise CorpusParseError(number, f"non-numeric field in {line!r}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise CorpusParseError(number, f"expected {width} columns, got {len(row)}")
            if not all(np.isfinite(row)):
                raise CorpusParseError(number, f"non-finite value in {line!r}")
            rows.append(row)
            numbers.append(number)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0), numbers


def load_dense_matrix(path: str | Path) -> Corpus:
    """Numeric rows separated by commas or whitespace; '#' lines are comments."""
    points, _ = _numeric_rows(path)
    logger.info("loaded dense matrix: %d rows x %d columns", *points.shape)
    return Corpus.from_dense(points)


def load_count_matrix(path: str | Path) -> Corpus:
    """Dense document-by-word counts; every field must be a nonnegative integer."""
    values, numbers = _numeric_rows(path)
    for row, number in zip(values, numbers):
        bad = (row < 0) | (row != np.round(row))
        if bad.any():
            column = int(np.argmax(bad)) + 1
            raise CorpusParseError(
                number, f"column {column} is not a nonnegative integer count: {row[column - 1]:g}"
            )
    logger.info("loaded count matrix: %d documents x %d words", *values.shape)
    return Corpus.from_count_matrix(values.astype(np.int64))


def split_train_test(corpus: Corpus, fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Document-level split: ``fraction`` of the documents, chosen by ``seed``, go to test."""
    if not 0 < fraction < 1:
        raise ValueError(f"test fraction must lie in (0, 1), got {fraction}")
    num_test = int(round(fraction * corpus.num_docs))
    if num_test == 0 or num_test == corpus.num_docs:
        raise ValueError(
            f"fraction {fraction} of {corpus.num_docs} documents leaves one side empty"
        )
    order = np.random.default_rng(seed).permutation(corpus.num_docs)
    test_docs = np.sort(order[:num_test])
    train_docs = np.sort(order[num_test:])
    return corpus.subset(train_docs), corpus.subset(test_docs)
