"""Training drivers for every (model, algorithm) pair.

Serial VI, SVI, ESVI and ESVI-TOPK, the synchronized parallel VI baseline, and
the adapters that hand ESVI to the nomad scheduler when more than one worker is
requested.  All drivers count coordinate updates of the local assignments and
snapshot through a ``Checkpointer``.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from engine.corpus import Corpus
from engine.errors import ElboRegressionError, InvalidStateError
from engine.expfam import (
    GlobalMixtureState,
    ModelFamily,
    esvi_step,
    initialize_mixture,
    mixture_elbo,
    sample_subset,
    score_matrix,
    svi_step,
    vi_epoch,
)
from engine.families import DiagonalGaussianFamily, MultinomialFamily
from engine.lda import (
    LdaState,
    batch_lda_globals,
    expected_log_parameters,
    group_entries_by_word,
    heldout_perplexity,
    init_lda_state,
    lda_elbo,
    lda_vi_epoch,
    optimal_phi,
    sweep_entry,
)
from engine.nomad import (
    NomadicModel,
    NormalizerRing,
    ParameterToken,
    SchedulerConfig,
    StopCondition,
    TokenKind,
    WorkerContext,
    WorkerTopology,
    run_async,
)
from engine.tracer import RunTrace, TraceRecord
from intake.schema import Algorithm, ExperimentConfig, ModelKind

logger = logging.getLogger(__name__)

ELBO_SLACK = 1e-9


def check_elbo(before: float, after: float, strict: bool = False, where: str = "") -> None:
    """Flag a decrease beyond relative slack: an error when strict, a warning otherwise."""
    if after >= before - ELBO_SLACK * max(1.0, abs(before)):
        return
    if strict:
        raise ElboRegressionError(before, after, where)
    logger.warning("ELBO decreased from %.12g to %.12g at %s", before, after, where or "snapshot")


def update_budget(config: ExperimentConfig, work_per_epoch: int) -> int | None:
    """Coordinate-update budget from max_updates and max_epochs, whichever is smaller."""
    limits = []
    if config.max_updates is not None:
        limits.append(config.max_updates)
    if config.max_epochs is not None:
        limits.append(int(math.ceil(config.max_epochs * work_per_epoch)))
    return min(limits) if limits else None


def worker_rng(seed: int, worker: int = 0) -> np.random.Generator:
    """The generator the nomad scheduler hands to ``worker``; serial runs use worker 0's."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(worker + 1)[worker])


class Checkpointer:
    """Decides when to snapshot and when the budget is spent.

    ``step`` is called after every unit of work with the running update count.
    A snapshot is taken at each ``eval_every`` boundary crossed and once more
    when the budget runs out.
    """

    def __init__(
        self,
        trace: RunTrace,
        evaluate: Callable[[], tuple[float, float | None]],
        eval_every: int | None = None,
        max_updates: int | None = None,
        max_seconds: float | None = None,
        monotone: bool = False,
        strict: bool = False,
    ):
        self.trace = trace
        self.evaluate = evaluate
        self.eval_every = eval_every
        self.max_updates = max_updates
        self.max_seconds = max_seconds
        self.monotone = monotone
        self.strict = strict
        self._next = eval_every
        self._start = time.monotonic()
        self._recorded: int | None = None

    def elapsed(self) -> float:
        return time.monotonic() - self._start

    def record(self, updates: int) -> None:
        if updates == self._recorded:
            return
        elbo, perplexity = self.evaluate()
        if self.monotone and self.trace.records:
            check_elbo(self.trace.final.elbo, elbo, self.strict, f"{updates} updates")
        self.trace.append(TraceRecord(updates, self.elapsed(), elbo, perplexity))
        self._recorded = updates

    def start(self) -> bool:
        self._start = time.monotonic()
        self.record(0)
        return self._spent(0)

    def _spent(self, updates: int) -> bool:
        if self.max_updates is not None and updates >= self.max_updates:
            return True
        return self.max_seconds is not None and self.elapsed() >= self.max_seconds

    def step(self, updates: int) -> bool:
        """Snapshot if a boundary was crossed; return True once the budget is spent."""
        done = self._spent(updates)
        due = self._next is not None and updates >= self._next
        if due or done:
            self.record(updates)
        if due:
            while self._next <= updates:
                self._next += self.eval_every
        return done


def _scheduler_config(config: ExperimentConfig) -> SchedulerConfig:
    return SchedulerConfig(
        seed=config.seed,
        eval_every=config.eval_every,
        sync_every=config.sync_every,
        watchdog_seconds=config.watchdog_seconds,
        hold_patience=config.hold_patience,
    )


# ── Mixture models ───────────────────────────────────────────────────────────


def make_family(config: ExperimentConfig, corpus: Corpus) -> ModelFamily:
    if config.model == ModelKind.GMM:
        return DiagonalGaussianFamily(
            config.topics,
            corpus.num_words,
            config.alpha,
            m0=config.m0,
            kappa0=config.kappa0,
            a0=config.a0,
            b0=config.b0,
        )
    return MultinomialFamily(config.topics, corpus.num_words, config.alpha, config.eta)


def mixture_statistics(family: ModelFamily, corpus: Corpus) -> np.ndarray:
    data = corpus.dense if corpus.is_dense else corpus.to_dense()
    return family.sufficient_statistics(data)


@dataclass
class MixtureRun:
    family: ModelFamily
    stats: np.ndarray
    state: GlobalMixtureState
    assignments: np.ndarray

    @classmethod
    def initialize(
        cls, family: ModelFamily, stats: np.ndarray, seed: int
    ) -> tuple[MixtureRun, np.random.Generator]:
        rng = np.random.default_rng(seed)
        state, assignments = initialize_mixture(family, stats, rng)
        return cls(family, stats, state, assignments), rng

    @property
    def num_points(self) -> int:
        return self.stats.shape[0]

    def elbo(self) -> float:
        return mixture_elbo(self.state, self.family, self.stats, self.assignments)

    def evaluate(self) -> tuple[float, float | None]:
        return self.elbo(), None


def _local_vi(run: MixtureRun, shard: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    stats = run.stats[shard]
    u = score_matrix(run.state, run.family, stats)
    shifted = np.exp(u - np.max(u, axis=1, keepdims=True))
    weights = shifted / np.sum(shifted, axis=1, keepdims=True)
    run.assignments[shard] = weights
    return np.sum(weights, axis=0), weights.T @ stats


def parallel_vi_epoch(
    run: MixtureRun, pool: ThreadPoolExecutor, shards: list[np.ndarray]
) -> GlobalMixtureState:
    """Map local updates over shards, reduce the sufficient statistics, update globals."""
    partials = list(pool.map(lambda shard: _local_vi(run, shard), shards))
    mass = sum(p[0] for p in partials)
    weighted = sum(p[1] for p in partials)
    return GlobalMixtureState(
        pi_tilde=run.family.alpha + mass,
        n_tilde=run.family.prior_strength + mass,
        nu_tilde=run.family.prior_offset + weighted,
    )


class MixtureNomadModel(NomadicModel):
    """Component columns (π̃_k, ñ_k, ν̃_k) as tokens; a worker acts on a held subset."""

    def __init__(self, run: MixtureRun, subset_size: int):
        self.run = run
        self.tokens_per_step = subset_size

    @property
    def num_items(self) -> int:
        return self.run.num_points

    def make_tokens(self) -> list[ParameterToken]:
        state = self.run.state
        return [
            ParameterToken(
                k,
                TokenKind.COMPONENT,
                payload={
                    "pi_tilde": state.pi_tilde[k : k + 1],
                    "n_tilde": state.n_tilde[k : k + 1],
                    "nu_tilde": state.nu_tilde[k],
                },
            )
            for k in range(state.num_components)
        ]

    def process(self, ctx: WorkerContext, tokens: list[ParameterToken]) -> int:
        subset = np.array([token.column for token in tokens], dtype=np.intp)
        if not all([ctx.holds(int(k)) for k in subset]) or ctx.shard.shape[0] == 0:
            return 0
        i = int(ctx.shard[ctx.rng.integers(ctx.shard.shape[0])])
        run = self.run
        esvi_step(run.state, run.family, run.stats, run.assignments, i, subset)
        return int(subset.shape[0])

    def evaluate(self) -> tuple[float, float | None]:
        return self.run.evaluate()


def run_mixture(config: ExperimentConfig, corpus: Corpus, trace: RunTrace) -> MixtureRun:
    family = make_family(config, corpus)
    stats = mixture_statistics(family, corpus)
    if stats.shape[0] == 0:
        raise InvalidStateError("no data points to train on")
    run, rng = MixtureRun.initialize(family, stats, config.seed)
    k, n = config.topics, run.num_points
    budget = update_budget(config, n * k)

    if config.algo == Algorithm.ESVI and config.workers > 1:
        topology = WorkerTopology.contiguous(n, config.workers)
        model = MixtureNomadModel(run, config.subset_size)
        stop = StopCondition(max_updates=budget, max_seconds=config.max_seconds)
        run_async(model, topology, stop, _scheduler_config(config), trace)
        for before, after in itertools.pairwise(trace.records):
            check_elbo(before.elbo, after.elbo, config.strict, f"{after.updates} updates")
        return run

    checkpointer = Checkpointer(
        trace,
        run.evaluate,
        eval_every=config.eval_every,
        max_updates=budget,
        max_seconds=config.max_seconds,
        monotone=True,
        strict=config.strict,
    )
    done = checkpointer.start()
    updates = 0

    if config.algo == Algorithm.VI:
        shards = np.array_split(np.arange(n), config.workers)
        pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
        try:
            while not done:
                if pool is None:
                    run.state = vi_epoch(run.state, family, stats, run.assignments)
                else:
                    run.state = parallel_vi_epoch(run, pool, shards)
                updates += n * k
                done = checkpointer.step(updates)
        finally:
            if pool is not None:
                pool.shutdown()
    elif config.algo == Algorithm.SVI:
        while not done:
            svi_step(run.state, family, stats, run.assignments, int(rng.integers(n)))
            updates += k
            done = checkpointer.step(updates)
    else:
        while not done:
            i = int(rng.integers(n))
            subset = sample_subset(rng, k, config.subset_size)
            esvi_step(run.state, family, stats, run.assignments, i, subset)
            updates += config.subset_size
            done = checkpointer.step(updates)
    return run


# ── LDA ──────────────────────────────────────────────────────────────────────


@dataclass
class LdaRun:
    corpus: Corpus
    state: LdaState
    order: np.ndarray
    test: Corpus | None = None
    split_seed: int = 0

    @classmethod
    def initialize(
        cls, corpus: Corpus, config: ExperimentConfig, test: Corpus | None = None
    ) -> LdaRun:
        """Seeded φ initialization, then a seeded word order for column sweeps."""
        rng = np.random.default_rng(config.seed)
        state = init_lda_state(
            corpus, config.topics, config.alpha, config.eta, rng, cutoff=config.topk
        )
        return cls(corpus, state, rng.permutation(corpus.num_words), test, config.seed)

    def evaluate(self) -> tuple[float, float | None]:
        elbo = lda_elbo(self.state, self.corpus)
        if self.test is None:
            return elbo, None
        return elbo, heldout_perplexity(self.state, self.test, seed=self.split_seed).value


def parallel_lda_vi_epoch(
    run: LdaRun, pool: ThreadPoolExecutor, shards: list[np.ndarray]
) -> LdaState:
    """φ for each shard's entries in the pool, then γ, λ and π_k in one batch pass."""
    state, corpus = run.state, run.corpus
    elog_theta, elog_beta = expected_log_parameters(state)

    def local(entries: np.ndarray) -> None:
        if entries.shape[0]:
            state.phi[entries] = optimal_phi(corpus, entries, elog_theta, elog_beta)

    list(pool.map(local, shards))
    state.gamma, state.lam = batch_lda_globals(
        corpus, state.phi, state.alpha, state.eta, state.num_topics
    )
    state.normalizers = np.sum(state.lam, axis=1)
    return state


def shard_entries(corpus: Corpus, docs: np.ndarray) -> np.ndarray:
    """Entry indices of a contiguous document range."""
    if docs.shape[0] == 0:
        return np.zeros(0, dtype=np.intp)
    lo, hi = np.searchsorted(corpus.doc_ids, [docs[0], docs[-1] + 1])
    return np.arange(lo, hi)


class LdaNomadModel(NomadicModel):
    """Word columns λ^v as tokens; topic normalizers travel on the ring."""

    uses_normalizers = True

    def __init__(self, run: LdaRun, refresh: int):
        self.run = run
        self.refresh = refresh
        self._local: list[dict[int, np.ndarray]] = []

    @property
    def num_items(self) -> int:
        return self.run.corpus.num_docs

    def make_tokens(self) -> list[ParameterToken]:
        lam = self.run.state.lam
        return [ParameterToken(int(v), TokenKind.WORD, payload=lam[:, v]) for v in self.run.order]

    def prepare(self, topology: WorkerTopology) -> None:
        corpus = self.run.corpus
        self._local = [
            group_entries_by_word(corpus, shard_entries(corpus, shard))
            for shard in topology.shards
        ]

    def initial_normalizers(self) -> np.ndarray:
        return self.run.state.normalizers

    def process(self, ctx: WorkerContext, tokens: list[ParameterToken]) -> int:
        word = tokens[0].column
        if not ctx.holds(word):
            return 0
        entries = self._local[ctx.index].get(word)
        if entries is None:
            return 0
        updates = 0
        for entry in entries:
            scored, delta = sweep_entry(
                self.run.state,
                self.run.corpus,
                int(entry),
                ctx.ledger.values,
                ctx.rng,
                self.refresh,
            )
            ctx.ledger.record(delta)
            updates += scored
        return updates

    def evaluate(self) -> tuple[float, float | None]:
        return self.run.evaluate()

    def finish(self, ring: NormalizerRing | None) -> None:
        self.run.state.normalizers = ring.ledgers[0].values.copy()


def run_lda(
    config: ExperimentConfig, corpus: Corpus, test: Corpus | None, trace: RunTrace
) -> LdaRun:
    if corpus.nnz == 0:
        raise InvalidStateError("corpus has no entries to train on")
    run = LdaRun.initialize(corpus, config, test)
    budget = update_budget(config, corpus.nnz * config.topics)

    if config.algo in (Algorithm.ESVI, Algorithm.ESVI_TOPK) and config.workers > 1:
        topology = WorkerTopology.contiguous(corpus.num_docs, config.workers)
        stop = StopCondition(max_updates=budget, max_seconds=config.max_seconds)
        model = LdaNomadModel(run, config.refresh)
        run_async(model, topology, stop, _scheduler_config(config), trace)
        return run

    checkpointer = Checkpointer(
        trace,
        run.evaluate,
        eval_every=config.eval_every,
        max_updates=budget,
        max_seconds=config.max_seconds,
        monotone=config.algo != Algorithm.ESVI_TOPK,
        strict=config.strict,
    )
    done = checkpointer.start()
    updates = 0
    k = config.topics

    if config.algo == Algorithm.VI:
        doc_shards = np.array_split(np.arange(corpus.num_docs), config.workers)
        shards = [shard_entries(corpus, docs) for docs in doc_shards]
        pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
        try:
            while not done:
                if pool is None:
                    lda_vi_epoch(run.state, corpus)
                else:
                    parallel_lda_vi_epoch(run, pool, shards)
                updates += corpus.nnz * k
                done = checkpointer.step(updates)
        finally:
            if pool is not None:
                pool.shutdown()
    elif config.algo == Algorithm.SVI:
        rng = worker_rng(config.seed)
        while not done:
            scored, _ = sweep_entry(run.state, corpus, int(rng.integers(corpus.nnz)))
            updates += scored
            done = checkpointer.step(updates)
    else:
        rng = worker_rng(config.seed)
        groups = group_entries_by_word(corpus)
        for word in itertools.cycle(run.order):
            if done:
                break
            entries = groups.get(int(word))
            if entries is None:
                continue
            for entry in entries:
                scored, _ = sweep_entry(
                    run.state, corpus, int(entry), rng=rng, refresh=config.refresh
                )
                updates += scored
            done = checkpointer.step(updates)
    return run


# ── Dispatch ─────────────────────────────────────────────────────────────────


@dataclass
class TrainingResult:
    trace: RunTrace
    run: LdaRun | MixtureRun


def train_model(
    config: ExperimentConfig, train: Corpus, test: Corpus | None = None
) -> TrainingResult:
    """Run the configured algorithm on ``train`` and return its trace and final state."""
    trace = RunTrace(metadata=config.metadata())
    logger.info(
        "training %s/%s with K=%d on %d worker(s)",
        config.model.value, config.algo.value, config.topics, config.workers,
    )
    if config.is_mixture:
        run = run_mixture(config, train, trace)
    else:
        run = run_lda(config, train, test, trace)
    final = trace.final
    logger.info("finished after %d updates: elbo=%.6f", final.updates, final.elbo)
    return TrainingResult(trace, run)
