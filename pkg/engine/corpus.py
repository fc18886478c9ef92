"""Corpus container shared by the loaders, the models and the runners."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Corpus:
    """Bag-of-words entries (doc, word, count), or dense real rows for the GMM.

    Entries are kept sorted by document; within a document they keep file order.
    """

    doc_ids: np.ndarray
    word_ids: np.ndarray
    counts: np.ndarray
    num_docs: int
    num_words: int
    vocabulary: list[str] | None = None
    dense: np.ndarray | None = None

    def __post_init__(self):
        self.doc_ids = np.asarray(self.doc_ids, dtype=np.int64)
        self.word_ids = np.asarray(self.word_ids, dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        order = np.argsort(self.doc_ids, kind="stable")
        if not np.array_equal(order, np.arange(order.shape[0])):
            self.doc_ids = self.doc_ids[order]
            self.word_ids = self.word_ids[order]
            self.counts = self.counts[order]

    def validate(self) -> None:
        if not (self.doc_ids.shape == self.word_ids.shape == self.counts.shape):
            raise ValueError("doc_ids, word_ids and counts must have equal length")
        if self.nnz and (self.doc_ids.min() < 0 or self.doc_ids.max() >= self.num_docs):
            raise ValueError("document index out of range")
        if self.nnz and (self.word_ids.min() < 0 or self.word_ids.max() >= self.num_words):
            raise ValueError("word index out of range")
        if self.nnz and self.counts.min() < 1:
            raise ValueError("counts must be >= 1")
        if self.vocabulary is not None and len(self.vocabulary) != self.num_words:
            raise ValueError(
                f"vocabulary has {len(self.vocabulary)} entries, header says {self.num_words}"
            )
        if self.dense is not None and self.dense.shape[0] != self.num_docs:
            raise ValueError("dense rows must match the document count")

    @classmethod
    def from_dense(cls, points: np.ndarray) -> Corpus:
        points = np.asarray(points, dtype=np.float64)
        empty = np.zeros(0, dtype=np.int64)
        return cls(empty, empty, empty, points.shape[0], points.shape[1], dense=points)

    @classmethod
    def from_count_matrix(cls, matrix: np.ndarray, vocabulary: list[str] | None = None) -> Corpus:
        matrix = np.asarray(matrix)
        docs, words = np.nonzero(matrix)
        return cls(docs, words, matrix[docs, words], matrix.shape[0], matrix.shape[1], vocabulary)

    @property
    def nnz(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total_tokens(self) -> int:
        return int(np.sum(self.counts))

    @property
    def is_dense(self) -> bool:
        return self.dense is not None

    def doc_lengths(self) -> np.ndarray:
        return np.bincount(self.doc_ids, weights=self.counts, minlength=self.num_docs)

    def doc_entries(self, doc: int) -> np.ndarray:
        """Entry indices of one document."""
        lo, hi = np.searchsorted(self.doc_ids, [doc, doc + 1])
        return np.arange(lo, hi)

    def to_dense(self) -> np.ndarray:
        """Document × word count matrix."""
        matrix = np.zeros((self.num_docs, self.num_words))
        np.add.at(matrix, (self.doc_ids, self.word_ids), self.counts)
        return matrix

    def subset(self, docs: np.ndarray) -> Corpus:
        """Corpus restricted to ``docs``, renumbered 0..len(docs)-1 in the given order."""
        docs = np.asarray(docs, dtype=np.int64)
        remap = np.full(self.num_docs, -1, dtype=np.int64)
        remap[docs] = np.arange(docs.shape[0])
        keep = remap[self.doc_ids] >= 0
        dense = self.dense[docs] if self.dense is not None else None
        return Corpus(
            remap[self.doc_ids[keep]],
            self.word_ids[keep],
            self.counts[keep],
            docs.shape[0],
            self.num_words,
            self.vocabulary,
            dense,
        )
