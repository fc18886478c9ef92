"""ESVI-LDA: per-entry φ updates with γ/λ bookkeeping and top-k truncated storage.

A corpus entry is a (doc, word, count) triple.  The ``count`` identical tokens of
an entry share one φ, and every change to φ is applied to γ_d, λ^w and the topic
normalizers π_k = Σ_v λ_k^v scaled by that count.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from engine.corpus import Corpus
from engine.errors import BookkeepingError, InvalidStateError
from engine.expfam import FLOOR_TOLERANCE, update_z_full
from engine.special import digamma, dirichlet_expectation, dirichlet_kl

logger = logging.getLogger(__name__)

DEFAULT_REFRESH = 4


@dataclass
class TopKAssignment:
    """The C heaviest topics of one φ, kept as a min-heap of (weight, −topic)."""

    heap: list[tuple[float, int]]
    cutoff: int

    @classmethod
    def from_pairs(cls, topics, weights, cutoff: int) -> TopKAssignment:
        if cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {cutoff}")
        heap: list[tuple[float, int]] = []
        seen = 0
        for topic, weight in zip(topics, weights):
            seen += 1
            item = (float(weight), -int(topic))
            if len(heap) < cutoff:
                heapq.heappush(heap, item)
            elif item > heap[0]:
                heapq.heapreplace(heap, item)
        if len(heap) < seen:
            total = sum(weight for weight, _ in heap)
            heap = [(weight / total, neg) for weight, neg in heap]
        return cls(heap, cutoff)

    @property
    def topics(self) -> np.ndarray:
        return np.array([-neg for _, neg in self.heap], dtype=np.intp)

    @property
    def weights(self) -> np.ndarray:
        return np.array([weight for weight, _ in self.heap])

    @property
    def stored_mass(self) -> float:
        return float(sum(weight for weight, _ in self.heap))

    def to_dense(self, num_topics: int) -> np.ndarray:
        dense = np.zeros(num_topics)
        for weight, neg in self.heap:
            dense[-neg] = weight
        return dense


def topk_truncate(phi: np.ndarray, cutoff: int) -> TopKAssignment:
    """Keep the ``cutoff`` largest weights (lower topic wins ties), renormalized."""
    return TopKAssignment.from_pairs(range(len(phi)), phi, cutoff)


@dataclass
class LdaState:
    """Variational parameters λ (K×V), γ (D×K), stored φ and the normalizers π_k."""

    lam: np.ndarray
    gamma: np.ndarray
    normalizers: np.ndarray
    alpha: float
    eta: float
    phi: np.ndarray | None = None
    topk: list[TopKAssignment] | None = None
    cutoff: int | None = None

    @property
    def num_topics(self) -> int:
        return self.lam.shape[0]

    def phi_of(self, entry: int) -> np.ndarray:
        """Dense φ of an entry."""
        if self.topk is not None:
            return self.topk[entry].to_dense(self.num_topics)
        return self.phi[entry]

    def phi_matrix(self) -> np.ndarray:
        """Dense φ for every entry, shape (nnz, K)."""
        if self.topk is not None:
            return np.array([a.to_dense(self.num_topics) for a in self.topk]).reshape(
                len(self.topk), self.num_topics
            )
        return self.phi


@dataclass
class PhiUpdate:
    dense: np.ndarray
    stored: TopKAssignment | None
    scored: int


def batch_lda_globals(
    corpus: Corpus, phi: np.ndarray, alpha: float, eta: float, num_topics: int
) -> tuple[np.ndarray, np.ndarray]:
    """γ_d = α + Σ_n φ_dn and λ_k^v = η + Σ φ_dn^k·1[w_dn = v], from every stored φ."""
    weighted = phi * corpus.counts[:, np.newaxis]
    gamma = np.full((corpus.num_docs, num_topics), alpha)
    np.add.at(gamma, corpus.doc_ids, weighted)
    lam = np.full((num_topics, corpus.num_words), eta)
    np.add.at(lam.T, corpus.word_ids, weighted)
    return gamma, lam


def init_lda_state(
    corpus: Corpus,
    num_topics: int,
    alpha: float,
    eta: float,
    rng: np.random.Generator,
    cutoff: int | None = None,
) -> LdaState:
    """Dirichlet(1) φ per entry, then γ, λ and π_k from one batch pass."""
    if num_topics == 1:
        phi = np.ones((corpus.nnz, 1))
    else:
        phi = rng.dirichlet(np.ones(num_topics), size=corpus.nnz)
    topk = None
    if cutoff is not None:
        topk = [topk_truncate(row, cutoff) for row in phi]
        phi = np.array([a.to_dense(num_topics) for a in topk]).reshape(corpus.nnz, num_topics)
    gamma, lam = batch_lda_globals(corpus, phi, alpha, eta, num_topics)
    return LdaState(
        lam=lam,
        gamma=gamma,
        normalizers=np.sum(lam, axis=1),
        alpha=alpha,
        eta=eta,
        phi=None if topk is not None else phi,
        topk=topk,
        cutoff=cutoff,
    )


def update_phi(
    state: LdaState,
    corpus: Corpus,
    entry: int,
    normalizers: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    refresh: int = DEFAULT_REFRESH,
) -> PhiUpdate:
    """φ ∝ exp{ψ(γ_d^k) + ψ(λ_k^w) − ψ(π_k)} over the entry's active topics.

    Dense storage scores all K topics.  Under top-k the active set is the stored
    topics plus ``refresh`` random ones, and the result is truncated back to C.
    """
    k = state.num_topics
    if normalizers is None:
        normalizers = state.normalizers
    doc, word = corpus.doc_ids[entry], corpus.word_ids[entry]

    if state.topk is None:
        active = np.arange(k)
    else:
        stored = state.topk[entry].topics
        if stored.shape[0] < k and refresh > 0:
            draws = rng.choice(k, size=min(refresh, k), replace=False)
            active = np.union1d(stored, draws)
        elif stored.shape[0] < k:
            active = np.sort(stored)
        else:
            active = np.arange(k)

    gamma_d = state.gamma[doc, active]
    lam_w = state.lam[active, word]
    if np.any(gamma_d <= 0) or np.any(lam_w <= 0):
        raise InvalidStateError(f"nonpositive gamma or lambda while scoring entry {entry}")
    scores = digamma(gamma_d) + digamma(lam_w) - digamma(normalizers[active])
    probs = update_z_full(scores).weights

    if state.topk is None:
        return PhiUpdate(dense=probs, stored=None, scored=k)
    stored = TopKAssignment.from_pairs(active, probs, state.cutoff)
    return PhiUpdate(dense=stored.to_dense(k), stored=stored, scored=int(active.shape[0]))


def apply_phi_delta(
    state: LdaState,
    corpus: Corpus,
    entry: int,
    old: np.ndarray,
    new: np.ndarray,
    normalizers: np.ndarray | None = None,
) -> np.ndarray:
    """Push count·(new − old) into γ_d, λ^w and the normalizers; returns that delta."""
    if normalizers is None:
        normalizers = state.normalizers
    doc, word = corpus.doc_ids[entry], corpus.word_ids[entry]
    delta = corpus.counts[entry] * (new - old)
    state.gamma[doc] += delta
    state.lam[:, word] += delta
    normalizers += delta
    column = state.lam[:, word]
    if np.any(column < state.eta - FLOOR_TOLERANCE):
        topic = int(np.argmin(column))
        raise BookkeepingError("lambda", topic, float(column[topic]), state.eta)
    return delta


def store_phi(state: LdaState, entry: int, update: PhiUpdate) -> None:
    if state.topk is not None:
        state.topk[entry] = update.stored
    else:
        state.phi[entry] = update.dense


def sweep_entry(
    state: LdaState,
    corpus: Corpus,
    entry: int,
    normalizers: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    refresh: int = DEFAULT_REFRESH,
) -> tuple[int, np.ndarray]:
    """Update one entry's φ and apply its delta; returns (topics scored, delta)."""
    old = state.phi_of(entry)
    if state.topk is None:
        old = old.copy()
    update = update_phi(state, corpus, entry, normalizers, rng, refresh)
    delta = apply_phi_delta(state, corpus, entry, old, update.dense, normalizers)
    store_phi(state, entry, update)
    return update.scored, delta


def group_entries_by_word(
    corpus: Corpus, entries: np.ndarray | None = None
) -> dict[int, np.ndarray]:
    """Word id → entry indices holding that word, in entry order."""
    if entries is None:
        entries = np.arange(corpus.nnz)
    words = corpus.word_ids[entries]
    order = np.argsort(words, kind="stable")
    sorted_words = words[order]
    bounds = np.flatnonzero(np.diff(sorted_words)) + 1
    groups = np.split(entries[order], bounds)
    return {int(corpus.word_ids[group[0]]): group for group in groups if group.shape[0]}


def expected_log_parameters(state: LdaState) -> tuple[np.ndarray, np.ndarray]:
    """E[log θ_d] (D×K) and E[log β_k] (K×V) under the current γ, λ and normalizers."""
    elog_theta = dirichlet_expectation(state.gamma)
    elog_beta = digamma(state.lam) - digamma(state.normalizers)[:, np.newaxis]
    return elog_theta, elog_beta


def optimal_phi(
    corpus: Corpus, entries: np.ndarray, elog_theta: np.ndarray, elog_beta: np.ndarray
) -> np.ndarray:
    """Row-wise softmax of E[log θ] + E[log β] for the given entries."""
    scores = elog_theta[corpus.doc_ids[entries]] + elog_beta[:, corpus.word_ids[entries]].T
    shifted = np.exp(scores - np.max(scores, axis=1, keepdims=True))
    return shifted / np.sum(shifted, axis=1, keepdims=True)


def lda_vi_epoch(state: LdaState, corpus: Corpus) -> LdaState:
    """Every φ from the current γ and λ, then γ, λ and π_k in batch."""
    if corpus.nnz:
        elog_theta, elog_beta = expected_log_parameters(state)
        state.phi[:] = optimal_phi(corpus, np.arange(corpus.nnz), elog_theta, elog_beta)
    state.gamma, state.lam = batch_lda_globals(
        corpus, state.phi, state.alpha, state.eta, state.num_topics
    )
    state.normalizers = np.sum(state.lam, axis=1)
    return state


def lda_elbo(state: LdaState, corpus: Corpus) -> float:
    """ELBO with every Dirichlet KL term included."""
    k, v = state.lam.shape
    elog_beta = dirichlet_expectation(state.lam)
    score = -float(np.sum(dirichlet_kl(state.lam, np.full(v, state.eta))))
    if corpus.num_docs:
        elog_theta = dirichlet_expectation(state.gamma)
        score -= float(np.sum(dirichlet_kl(state.gamma, np.full(k, state.alpha))))
    if corpus.nnz:
        phi = state.phi_matrix()
        expected = elog_theta[corpus.doc_ids] + elog_beta[:, corpus.word_ids].T
        positive = phi > 0
        log_phi = np.zeros_like(phi)
        log_phi[positive] = np.log(phi[positive])
        score += float(np.sum(corpus.counts[:, np.newaxis] * phi * (expected - log_phi)))
    if not np.isfinite(score):
        raise InvalidStateError("LDA ELBO is not finite")
    return score


@dataclass
class Perplexity:
    value: float
    scored_tokens: int
    skipped_docs: int


def completion_split(
    tokens: np.ndarray, rng: np.random.Generator, fold_in_fraction: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle a document's tokens and cut them into fold-in and held-out parts.

    Stored entries are sorted by word id, so an unshuffled prefix would fold in on
    the low word ids and score only the high ones.
    """
    shuffled = rng.permutation(tokens)
    split = max(1, int(shuffled.shape[0] * fold_in_fraction))
    return shuffled[:split], shuffled[split:]


def heldout_perplexity(
    state: LdaState,
    test: Corpus,
    iterations: int = 20,
    fold_in_fraction: float = 0.5,
    seed: int = 0,
) -> Perplexity:
    """Document-completion perplexity with λ frozen.

    γ is folded in on a random half of each test document's tokens and the other
    half is scored under the mean topic and word proportions. The halves depend
    only on ``seed``, so every snapshot of a run scores the same tokens.
    """
    elog_beta = dirichlet_expectation(state.lam)
    beta_mean = state.lam / np.sum(state.lam, axis=1, keepdims=True)
    k = state.num_topics
    rng = np.random.default_rng(seed)
    log_likelihood = 0.0
    scored = 0
    skipped = 0
    for doc in range(test.num_docs):
        entries = test.doc_entries(doc)
        tokens = np.repeat(test.word_ids[entries], test.counts[entries])
        if tokens.shape[0] < 2:
            skipped += 1
            continue
        observed, held_out = completion_split(tokens, rng, fold_in_fraction)
        gamma = np.full(k, state.alpha + observed.shape[0] / k)
        for _ in range(iterations):
            scores = dirichlet_expectation(gamma)[np.newaxis, :] + elog_beta[:, observed].T
            shifted = np.exp(scores - np.max(scores, axis=1, keepdims=True))
            phi = shifted / np.sum(shifted, axis=1, keepdims=True)
            gamma = state.alpha + np.sum(phi, axis=0)
        theta_mean = gamma / np.sum(gamma)
        log_likelihood += float(np.sum(np.log(theta_mean @ beta_mean[:, held_out])))
        scored += held_out.shape[0]
    if skipped:
        logger.warning("perplexity: skipped %d test documents with fewer than 2 tokens", skipped)
    if scored == 0:
        return Perplexity(value=float("nan"), scored_tokens=0, skipped_docs=skipped)
    return Perplexity(
        value=float(np.exp(-log_likelihood / scored)), scored_tokens=scored, skipped_docs=skipped
    )


def top_words(state: LdaState, vocabulary: list[str] | None, n: int = 10) -> list[list[str]]:
    """The ``n`` highest-weight words of every topic."""
    order = np.argsort(-state.lam, axis=1, kind="stable")[:, :n]
    if vocabulary is None:
        return [[str(v) for v in row] for row in order]
    return [[vocabulary[v] for v in row] for row in order]
