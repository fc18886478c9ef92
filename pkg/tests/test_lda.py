import numpy as np
import pytest
from scipy.special import gammaln, psi

from engine.corpus import Corpus
from engine.errors import BookkeepingError
from engine.lda import (
    LdaState,
    TopKAssignment,
    apply_phi_delta,
    batch_lda_globals,
    completion_split,
    group_entries_by_word,
    heldout_perplexity,
    init_lda_state,
    lda_elbo,
    lda_vi_epoch,
    sweep_entry,
    top_words,
    topk_truncate,
    update_phi,
)

K = 4
ALPHA, ETA = 0.1, 0.01


@pytest.fixture
def state(small_corpus):
    return init_lda_state(small_corpus, K, ALPHA, ETA, np.random.default_rng(0))


def _assert_conserved(state, corpus):
    lengths = corpus.doc_lengths()
    np.testing.assert_allclose(np.sum(state.gamma - ALPHA, axis=1), lengths, atol=1e-8)
    assert np.sum(state.lam - ETA) == pytest.approx(corpus.total_tokens, abs=1e-6)


def _assert_matches_batch(state, corpus):
    gamma, lam = batch_lda_globals(corpus, state.phi_matrix(), ALPHA, ETA, K)
    np.testing.assert_allclose(state.gamma, gamma, rtol=1e-8)
    np.testing.assert_allclose(state.lam, lam, rtol=1e-8)
    np.testing.assert_allclose(state.normalizers, lam.sum(axis=1), rtol=1e-8)


# ── Top-k storage ────────────────────────────────────────────────────────────


def test_topk_matches_full_sort(rng):
    for _ in range(200):
        phi = rng.dirichlet(np.ones(12))
        cutoff = int(rng.integers(1, 12))
        kept = topk_truncate(phi, cutoff)
        expected = np.argsort(-phi, kind="stable")[:cutoff]
        assert set(kept.topics.tolist()) == set(expected.tolist())
        assert kept.stored_mass == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(kept.to_dense(12)[expected], phi[expected] / phi[expected].sum())


def test_topk_ties_prefer_lower_topic():
    kept = topk_truncate(np.full(4, 0.25), 2)
    assert sorted(kept.topics.tolist()) == [0, 1]


def test_topk_without_truncation_is_untouched(rng):
    phi = rng.dirichlet(np.ones(6))
    assert np.array_equal(topk_truncate(phi, 6).to_dense(6), phi)


def test_topk_rejects_zero_cutoff():
    with pytest.raises(ValueError):
        TopKAssignment.from_pairs([0, 1], [0.5, 0.5], 0)


# ── Bookkeeping ──────────────────────────────────────────────────────────────


def test_initial_state_is_conserved(state, small_corpus):
    _assert_conserved(state, small_corpus)
    _assert_matches_batch(state, small_corpus)


def test_sweeps_conserve_counts_and_match_batch(state, small_corpus):
    rng = np.random.default_rng(1)
    for entry in rng.integers(small_corpus.nnz, size=5_000):
        sweep_entry(state, small_corpus, int(entry))
    _assert_conserved(state, small_corpus)
    _assert_matches_batch(state, small_corpus)
    np.testing.assert_allclose(state.phi.sum(axis=1), 1.0, atol=1e-12)


def test_topk_sweeps_conserve_counts(small_corpus):
    state = init_lda_state(small_corpus, K, ALPHA, ETA, np.random.default_rng(0), cutoff=2)
    rng = np.random.default_rng(2)
    for entry in rng.integers(small_corpus.nnz, size=3_000):
        sweep_entry(state, small_corpus, int(entry), rng=rng, refresh=2)
    _assert_conserved(state, small_corpus)
    _assert_matches_batch(state, small_corpus)
    assert all(len(a.heap) <= 2 for a in state.topk)
    assert all(a.stored_mass == pytest.approx(1.0, abs=1e-12) for a in state.topk)


def test_sweep_delta_is_scaled_by_count():
    corpus = Corpus([0], [1], [3], num_docs=1, num_words=2)
    state = init_lda_state(corpus, 2, ALPHA, ETA, np.random.default_rng(0))
    old = state.phi[0].copy()
    _, delta = sweep_entry(state, corpus, 0)
    np.testing.assert_allclose(delta, 3 * (state.phi[0] - old))
    assert np.sum(state.gamma[0] - ALPHA) == pytest.approx(3.0)


def test_lambda_floor_violation_is_reported():
    corpus = Corpus([0], [0], [1], num_docs=1, num_words=1)
    state = LdaState(
        lam=np.full((2, 1), ETA),
        gamma=np.full((1, 2), ALPHA),
        normalizers=np.full(2, ETA),
        alpha=ALPHA,
        eta=ETA,
        phi=np.array([[1.0, 0.0]]),
    )
    with pytest.raises(BookkeepingError) as info:
        apply_phi_delta(state, corpus, 0, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert info.value.parameter == "lambda"
    assert info.value.index == 0


def test_entries_grouped_by_word(small_corpus):
    groups = group_entries_by_word(small_corpus)
    assert sum(len(g) for g in groups.values()) == small_corpus.nnz
    for word, entries in groups.items():
        assert np.all(small_corpus.word_ids[entries] == word)
        assert np.all(np.diff(entries) > 0)


# ── Local updates ────────────────────────────────────────────────────────────


def _single_entry_state(gamma, lam, phi):
    lam = np.asarray(lam, dtype=np.float64)
    return LdaState(
        lam=lam,
        gamma=np.atleast_2d(np.asarray(gamma, dtype=np.float64)),
        normalizers=lam.sum(axis=1),
        alpha=ALPHA,
        eta=ETA,
        phi=np.atleast_2d(np.asarray(phi, dtype=np.float64)),
    )


def test_symmetric_state_gives_uniform_phi():
    corpus = Corpus([0], [1], [2], num_docs=1, num_words=3)
    state = _single_entry_state(np.full(5, 0.7), np.full((5, 3), 1.3), np.full(5, 0.2))
    update = update_phi(state, corpus, 0)
    assert np.all(update.dense == update.dense[0])
    np.testing.assert_allclose(update.dense, 0.2, rtol=1e-15)
    assert update.scored == 5


def test_two_topic_phi_matches_digamma_oracle():
    # ψ(a + 1) − ψ(a) = 1/a, and equal λ columns cancel
    a = 0.5
    corpus = Corpus([0], [0], [1], num_docs=1, num_words=2)
    state = _single_entry_state([a + 1.0, a], np.full((2, 2), 0.8), [0.5, 0.5])
    expected = np.exp([1.0 / a, 0.0]) / np.sum(np.exp([1.0 / a, 0.0]))
    np.testing.assert_allclose(update_phi(state, corpus, 0).dense, expected, atol=1e-12)


def test_phi_matches_scipy_oracle(state, small_corpus):
    for entry in (0, 17, small_corpus.nnz - 1):
        doc, word = small_corpus.doc_ids[entry], small_corpus.word_ids[entry]
        scores = psi(state.gamma[doc]) + psi(state.lam[:, word]) - psi(state.normalizers)
        expected = np.exp(scores - scores.max()) / np.sum(np.exp(scores - scores.max()))
        np.testing.assert_allclose(
            update_phi(state, small_corpus, entry).dense, expected, atol=1e-12
        )


def test_update_phi_leaves_state_untouched(state, small_corpus):
    before = (state.lam.copy(), state.gamma.copy(), state.phi.copy(), state.normalizers.copy())
    first = update_phi(state, small_corpus, 3).dense
    second = update_phi(state, small_corpus, 3).dense
    assert np.array_equal(first, second)
    for kept, now in zip(before, (state.lam, state.gamma, state.phi, state.normalizers)):
        assert np.array_equal(kept, now)


def test_phi_update_is_idempotent_at_its_fixed_point():
    corpus = Corpus([0], [1], [1], num_docs=1, num_words=2)
    state = init_lda_state(corpus, 2, ALPHA, ETA, np.random.default_rng(4))
    for _ in range(200):
        sweep_entry(state, corpus, 0)
    settled = state.phi[0].copy()
    np.testing.assert_allclose(update_phi(state, corpus, 0).dense, settled, atol=1e-12)
    sweep_entry(state, corpus, 0)
    np.testing.assert_allclose(state.phi[0], settled, atol=1e-12)


# ── Objective ────────────────────────────────────────────────────────────────


def test_vi_epochs_never_decrease_elbo(state, small_corpus):
    previous = lda_elbo(state, small_corpus)
    for _ in range(15):
        lda_vi_epoch(state, small_corpus)
        current = lda_elbo(state, small_corpus)
        assert current >= previous - 1e-9 * abs(previous)
        previous = current
    _assert_conserved(state, small_corpus)


def test_word_column_sweeps_never_decrease_elbo(state, small_corpus):
    groups = group_entries_by_word(small_corpus)
    previous = lda_elbo(state, small_corpus)
    for word in np.random.default_rng(3).permutation(small_corpus.num_words):
        for entry in groups.get(int(word), []):
            sweep_entry(state, small_corpus, int(entry))
        current = lda_elbo(state, small_corpus)
        assert current >= previous - 1e-9 * abs(previous)
        previous = current


def test_ten_thousand_serial_sweeps_never_decrease_elbo(lda_corpus):
    state = init_lda_state(lda_corpus, 8, ALPHA, ETA, np.random.default_rng(6))
    groups = group_entries_by_word(lda_corpus)
    words = np.random.default_rng(8).permutation(lda_corpus.num_words)
    order = np.concatenate([groups[int(w)] for w in words if int(w) in groups])
    previous = lda_elbo(state, lda_corpus)
    for step in range(10_000):
        sweep_entry(state, lda_corpus, int(order[step % order.shape[0]]))
        current = lda_elbo(state, lda_corpus)
        assert current >= previous - 1e-9 * abs(previous), step
        previous = current
    _assert_conserved(state, lda_corpus)


def _kl_oracle(q, p):
    return (
        gammaln(q.sum()) - gammaln(q).sum() - gammaln(p.sum()) + gammaln(p).sum()
        + np.sum((q - p) * (psi(q) - psi(q.sum())))
    )


@pytest.mark.parametrize("vocab_size", [2, 5, 40])
@pytest.mark.parametrize("eta", [0.01, 0.5, 2.0])
def test_single_token_single_topic_elbo(vocab_size, eta):
    # γ = α + 1 has no spread with one topic, and the λ terms collapse to −log V
    corpus = Corpus([0], [0], [1], num_docs=1, num_words=vocab_size)
    state = init_lda_state(corpus, 1, ALPHA, eta, np.random.default_rng(0))
    assert state.gamma[0, 0] == pytest.approx(ALPHA + 1.0)
    lam = np.full(vocab_size, eta)
    lam[0] += 1.0
    np.testing.assert_allclose(state.lam[0], lam)
    expected_log_beta = psi(eta + 1.0) - psi(vocab_size * eta + 1.0)
    oracle = expected_log_beta - _kl_oracle(lam, np.full(vocab_size, eta))
    assert oracle == pytest.approx(-np.log(vocab_size), abs=1e-10)
    assert lda_elbo(state, corpus) == pytest.approx(-np.log(vocab_size), abs=1e-9)


def test_empty_corpus_elbo_is_the_prior_kl():
    empty = Corpus([], [], [], num_docs=0, num_words=3)
    at_prior = LdaState(
        lam=np.full((2, 3), 0.5), gamma=np.zeros((0, 2)), normalizers=np.full(2, 1.5),
        alpha=ALPHA, eta=0.5, phi=np.zeros((0, 2)),
    )
    assert lda_elbo(at_prior, empty) == pytest.approx(0.0, abs=1e-12)
    lam = np.array([[1.0, 2.0, 0.5], [0.3, 0.3, 4.0]])
    moved = LdaState(
        lam=lam, gamma=np.zeros((0, 2)), normalizers=lam.sum(axis=1),
        alpha=ALPHA, eta=0.5, phi=np.zeros((0, 2)),
    )
    oracle = -sum(_kl_oracle(row, np.full(3, 0.5)) for row in lam)
    assert oracle < 0
    assert lda_elbo(moved, empty) == pytest.approx(oracle, abs=1e-12)


def test_completion_split_is_a_seeded_shuffle():
    tokens = np.repeat(np.arange(10), 3)
    observed, held_out = completion_split(tokens, np.random.default_rng(0))
    assert observed.shape[0] == held_out.shape[0] == 15
    assert np.array_equal(np.sort(np.concatenate([observed, held_out])), tokens)
    again = completion_split(tokens, np.random.default_rng(0))
    assert np.array_equal(again[0], observed) and np.array_equal(again[1], held_out)
    # a sorted prefix would fold in on words 0..4 only
    assert held_out.min() < 5 <= observed.max()


def test_perplexity_split_depends_only_on_seed(lda_corpus):
    train = lda_corpus.subset(np.arange(40))
    test = lda_corpus.subset(np.arange(40, 50))
    state = init_lda_state(train, 8, ALPHA, ETA, np.random.default_rng(0))
    for _ in range(5):
        lda_vi_epoch(state, train)
    first = heldout_perplexity(state, test, seed=3)
    assert heldout_perplexity(state, test, seed=3).value == first.value
    assert heldout_perplexity(state, test, seed=4).value != first.value


def test_perplexity_is_bounded_after_training(lda_corpus):
    train = lda_corpus.subset(np.arange(40))
    test = lda_corpus.subset(np.arange(40, 50))
    state = init_lda_state(train, 8, ALPHA, ETA, np.random.default_rng(0))
    for _ in range(30):
        lda_vi_epoch(state, train)
    result = heldout_perplexity(state, test)
    assert 1.0 < result.value < train.num_words
    assert result.skipped_docs == 0
    assert result.scored_tokens > 0


def test_perplexity_skips_tiny_documents(state):
    test = Corpus([0, 1, 1], [3, 4, 5], [1, 2, 1], num_docs=2, num_words=50)
    result = heldout_perplexity(state, test)
    assert result.skipped_docs == 1
    assert result.scored_tokens == 2
    empty = heldout_perplexity(state, Corpus([0], [3], [1], num_docs=1, num_words=50))
    assert np.isnan(empty.value)


def test_top_words_uses_vocabulary(state, small_corpus):
    words = top_words(state, small_corpus.vocabulary, n=3)
    assert len(words) == K
    assert all(len(row) == 3 and all(w.startswith("w") for w in row) for row in words)
