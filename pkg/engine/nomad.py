"""Nomadic, lock-free execution of ESVI across in-process workers.

Global parameter columns circulate as ``ParameterToken``s through per-worker job
queues.  A worker updates only the columns it currently holds (owner-computes),
then forwards them to a uniformly chosen other worker.  No lock guards parameter
state; queues are the only shared structures.  Snapshots and the token census
are taken at a cooperative barrier triggered by update-count checkpoints.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from engine.errors import CensusError, EngineError
from engine.tracer import RunTrace, TraceRecord

logger = logging.getLogger(__name__)


class TokenKind(str, Enum):
    COMPONENT = "component"
    WORD = "word"


@dataclass
class ParameterToken:
    """Exclusive right to update one global column; ``payload`` views the owned values."""

    column: int
    kind: TokenKind
    payload: object = None
    version: int = 0


class Transport(ABC):
    """Per-worker multi-producer single-consumer channels."""

    @property
    @abstractmethod
    def num_workers(self) -> int: ...

    @abstractmethod
    def push(self, worker: int, item) -> None:
        """Enqueue ``item`` for ``worker``; never blocks."""

    @abstractmethod
    def pop(self, worker: int):
        """Dequeue the next item for ``worker``, or ``None`` if there is none."""

    @abstractmethod
    def pending(self, worker: int) -> int:
        """Approximate number of queued items."""

    def drain(self, worker: int) -> list:
        items = []
        while (item := self.pop(worker)) is not None:
            items.append(item)
        return items


class InProcessTransport(Transport):
    """Transport over ``queue.SimpleQueue`` channels, one per worker."""

    def __init__(self, num_workers: int):
        self._queues = [queue.SimpleQueue() for _ in range(num_workers)]

    @property
    def num_workers(self) -> int:
        return len(self._queues)

    def push(self, worker: int, item) -> None:
        self._queues[worker].put(item)

    def pop(self, worker: int):
        try:
            return self._queues[worker].get_nowait()
        except queue.Empty:
            return None

    def pending(self, worker: int) -> int:
        return self._queues[worker].qsize()


@dataclass
class WorkerTopology:
    """P workers, their data shards ℐ_p, inbound job queues Q_p and sender queues q_s."""

    shards: list[np.ndarray]
    jobs: Transport
    outbox: Transport

    @classmethod
    def contiguous(cls, num_items: int, num_workers: int) -> WorkerTopology:
        if num_workers < 1:
            raise ValueError(f"num_workers must be >= 1, got {num_workers}")
        return cls(
            shards=np.array_split(np.arange(num_items), num_workers),
            jobs=InProcessTransport(num_workers),
            outbox=InProcessTransport(num_workers),
        )

    @property
    def num_workers(self) -> int:
        return len(self.shards)


@dataclass
class NormalizerLedger:
    """One worker's copy of π_k = Σ_v λ_k^v and its not-yet-broadcast changes."""

    worker: int
    values: np.ndarray
    pending: np.ndarray

    def record(self, delta: np.ndarray) -> None:
        """Note a change already applied to ``values``."""
        self.pending += delta


class NormalizerRing:
    """Round-robin broadcast of normalizer deltas.

    A worker's pending delta travels once around the ring; every other worker
    applies it exactly once and the origin never sees it again.
    """

    def __init__(self, initial: np.ndarray, num_workers: int):
        self.ledgers = [
            NormalizerLedger(
                p, initial.astype(np.float64).copy(), np.zeros_like(initial, dtype=np.float64)
            )
            for p in range(num_workers)
        ]
        self._inbox = InProcessTransport(num_workers)
        self.messages_sent = 0

    @property
    def num_workers(self) -> int:
        return len(self.ledgers)

    def _next(self, worker: int) -> int:
        return (worker + 1) % self.num_workers

    def _flush(self, worker: int) -> None:
        ledger = self.ledgers[worker]
        if self.num_workers > 1 and np.any(ledger.pending != 0.0):
            self._inbox.push(self._next(worker), (worker, ledger.pending.copy()))
            self.messages_sent += 1
        ledger.pending[:] = 0.0

    def _deliver(self, worker: int) -> int:
        ledger = self.ledgers[worker]
        delivered = 0
        while (message := self._inbox.pop(worker)) is not None:
            origin, delta = message
            ledger.values += delta
            delivered += 1
            if self._next(worker) != origin:
                self._inbox.push(self._next(worker), message)
        return delivered

    def sync_normalizers(self, worker: int) -> NormalizerLedger:
        """Send this worker's pending delta along the ring and apply what has arrived."""
        self._flush(worker)
        self._deliver(worker)
        return self.ledgers[worker]

    def quiesce(self) -> None:
        """Deliver every outstanding delta; only call once workers have stopped."""
        for worker in range(self.num_workers):
            self._flush(worker)
        while sum(self._deliver(worker) for worker in range(self.num_workers)):
            pass


@dataclass
class WorkerContext:
    index: int
    shard: np.ndarray
    rng: np.random.Generator
    ledger: NormalizerLedger | None = None
    held: dict[int, ParameterToken] = field(default_factory=dict)
    updates: int = 0
    steps: int = 0
    idle_polls: int = 0
    violations: int = 0
    last_progress: float = field(default_factory=time.monotonic)
    starvation_reported: bool = False

    def holds(self, column: int) -> bool:
        """Owner-computes check; counts an attempted update to a foreign column."""
        if column in self.held:
            return True
        self.violations += 1
        return False


class NomadicModel(ABC):
    """What the scheduler needs from a model: tokens, a shard-local step, and a snapshot."""

    tokens_per_step: int = 1
    uses_normalizers: bool = False

    @property
    @abstractmethod
    def num_items(self) -> int:
        """Number of data items to shard across workers."""

    @abstractmethod
    def make_tokens(self) -> list[ParameterToken]:
        """Every global column as a token, in initial distribution order."""

    def prepare(self, topology: WorkerTopology) -> None:
        """Build per-worker indexes once the shards are known."""

    def initial_normalizers(self) -> np.ndarray | None:
        return None

    @abstractmethod
    def process(self, ctx: WorkerContext, tokens: list[ParameterToken]) -> int:
        """Apply updates for the held tokens; return the coordinate updates performed."""

    @abstractmethod
    def evaluate(self) -> tuple[float, float | None]:
        """(ELBO, perplexity) of the quiesced state."""

    def finish(self, ring: NormalizerRing | None) -> None:
        """Fold worker-local state back into the model after the final drain."""


@dataclass
class StopCondition:
    max_updates: int | None = None
    max_seconds: float | None = None

    def __post_init__(self):
        if self.max_updates is None and self.max_seconds is None:
            raise ValueError("StopCondition needs max_updates or max_seconds")


@dataclass
class SchedulerConfig:
    seed: int = 0
    eval_every: int | None = None
    sync_every: int = 1
    watchdog_seconds: float = 5.0
    hold_patience: int = 64
    poll_interval: float = 0.001


class NomadScheduler:
    """Runs a ``NomadicModel`` on P worker threads with nomadic token circulation."""

    def __init__(
        self, model: NomadicModel, topology: WorkerTopology, config: SchedulerConfig | None = None
    ):
        self.model = model
        self.topology = topology
        self.config = config or SchedulerConfig()
        p = topology.num_workers
        seeds = np.random.SeedSequence(self.config.seed).spawn(p)
        self.ring = None
        if model.uses_normalizers:
            self.ring = NormalizerRing(model.initial_normalizers(), p)
        self.workers = [
            WorkerContext(
                index=i,
                shard=topology.shards[i],
                rng=np.random.default_rng(seeds[i]),
                ledger=self.ring.ledgers[i] if self.ring else None,
            )
            for i in range(p)
        ]
        self.alive = [False] * p
        self.census_checks = 0
        self._columns: list[int] = []
        self._stop = threading.Event()
        self._pause = threading.Event()
        self._barrier = threading.Barrier(p + 1)
        self._budget_reached = False
        self._failure: BaseException | None = None
        self._next_checkpoint: int | None = None
        self._max_updates: int | None = None

    # ── Token movement ──────────────────────────────────────────────────────

    def push_token(self, target: int, token: ParameterToken, rng=None) -> None:
        """Enqueue a token; a stopped target's tokens are rerouted to a live worker."""
        if not self.alive[target]:
            live = [p for p, up in enumerate(self.alive) if up]
            if live:
                target = live[int(rng.integers(len(live)))] if rng is not None else live[0]
        self.topology.jobs.push(target, token)

    def pop_token(self, worker: int) -> ParameterToken | None:
        return self.topology.jobs.pop(worker)

    def _destination(self, ctx: WorkerContext) -> int:
        p = self.topology.num_workers
        if p == 1:
            return ctx.index
        target = int(ctx.rng.integers(p - 1))
        return target if target < ctx.index else target + 1

    def _release(self, ctx: WorkerContext) -> None:
        """Hand held tokens to the sender queue, then send them on."""
        for token in ctx.held.values():
            self.topology.outbox.push(ctx.index, token)
        ctx.held.clear()
        while (token := self.topology.outbox.pop(ctx.index)) is not None:
            self.push_token(self._destination(ctx), token, ctx.rng)

    def _return_held(self, ctx: WorkerContext) -> None:
        for token in ctx.held.values():
            self.topology.jobs.push(ctx.index, token)
        ctx.held.clear()

    # ── Census ──────────────────────────────────────────────────────────────

    def census(self) -> int:
        """Check every column has exactly one holder; only valid while workers are parked."""
        seen: Counter[int] = Counter()
        for transport in (self.topology.jobs, self.topology.outbox):
            for worker in range(self.topology.num_workers):
                items = transport.drain(worker)
                seen.update(token.column for token in items)
                for token in items:
                    transport.push(worker, token)
        for ctx in self.workers:
            seen.update(ctx.held)
        expected = set(self._columns)
        missing = sorted(c for c in expected if seen[c] == 0)
        duplicated = sorted(c for c, n in seen.items() if n > 1 or c not in expected)
        if missing or duplicated:
            raise CensusError(missing, duplicated)
        self.census_checks += 1
        return sum(seen.values())

    @property
    def non_owner_updates(self) -> int:
        return sum(ctx.violations for ctx in self.workers)

    def total_updates(self) -> int:
        return sum(ctx.updates for ctx in self.workers)

    # ── Worker loop ─────────────────────────────────────────────────────────

    def _park(self, ctx: WorkerContext) -> None:
        self._return_held(ctx)
        self._barrier.wait()
        self._barrier.wait()

    def _work(self, ctx: WorkerContext) -> None:
        need = self.model.tokens_per_step
        try:
            while True:
                if self._pause.is_set():
                    self._park(ctx)
                    continue
                if self._stop.is_set():
                    break
                token = self.pop_token(ctx.index)
                if token is None:
                    ctx.idle_polls += 1
                    if ctx.held and ctx.idle_polls > self.config.hold_patience:
                        self._release(ctx)
                    if self.ring is not None:
                        self.ring.sync_normalizers(ctx.index)
                    time.sleep(0)
                    continue
                ctx.idle_polls = 0
                ctx.held[token.column] = token
                if len(ctx.held) < need:
                    continue
                tokens = list(ctx.held.values())
                ctx.updates += self.model.process(ctx, tokens)
                ctx.steps += 1
                ctx.last_progress = time.monotonic()
                for held in tokens:
                    held.version += 1
                self._release(ctx)
                if self.ring is not None and ctx.steps % self.config.sync_every == 0:
                    self.ring.sync_normalizers(ctx.index)
                self._check_budget()
        except threading.BrokenBarrierError:
            pass
        except BaseException as exc:  # surfaced by the monitor thread
            self._failure = exc
            self._barrier.abort()
        finally:
            self._return_held(ctx)
            self.alive[ctx.index] = False

    def _check_budget(self) -> None:
        total = self.total_updates()
        if self._max_updates is not None and total >= self._max_updates:
            self._budget_reached = True
            self._pause.set()
        elif self._next_checkpoint is not None and total >= self._next_checkpoint:
            self._pause.set()

    # ── Monitor ─────────────────────────────────────────────────────────────

    def _snapshot(self, trace: RunTrace, start: float) -> None:
        elbo, perplexity = self.model.evaluate()
        updates = self.total_updates()
        trace.append(TraceRecord(updates, time.monotonic() - start, elbo, perplexity))
        logger.debug("snapshot at %d updates: elbo=%.6f", updates, elbo)

    def _watchdog(self) -> None:
        now = time.monotonic()
        for ctx in self.workers:
            waiting = self.topology.jobs.pending(ctx.index)
            if waiting and now - ctx.last_progress > self.config.watchdog_seconds:
                if not ctx.starvation_reported:
                    logger.warning(
                        "worker %d made no progress for %.1fs with %d queued tokens",
                        ctx.index, now - ctx.last_progress, waiting,
                    )
                    ctx.starvation_reported = True
            else:
                ctx.starvation_reported = False

    def run(self, stop: StopCondition, trace: RunTrace | None = None) -> RunTrace:
        """Circulate tokens until ``stop``; returns the snapshot trace."""
        trace = trace if trace is not None else RunTrace()
        tokens = self.model.make_tokens()
        self._columns = [token.column for token in tokens]
        p = self.topology.num_workers
        for i, token in enumerate(tokens):
            self.topology.jobs.push(i % p, token)
        self.model.prepare(self.topology)

        self._max_updates = stop.max_updates
        self._next_checkpoint = self.config.eval_every
        start = time.monotonic()
        self._snapshot(trace, start)
        if stop.max_updates is not None and stop.max_updates <= 0:
            self.census()
            self.model.finish(self.ring)
            return trace

        threads = [
            threading.Thread(target=self._work, args=(ctx,), name=f"nomad-worker-{ctx.index}")
            for ctx in self.workers
        ]
        for ctx in self.workers:
            self.alive[ctx.index] = True
            ctx.last_progress = time.monotonic()
        for thread in threads:
            thread.start()

        try:
            self._monitor(stop, trace, start)
        finally:
            self._stop.set()
            self._barrier.abort()
            for thread in threads:
                thread.join()

        if self._failure is not None:
            raise self._failure
        self.census()
        if self.ring is not None:
            self.ring.quiesce()
        self.model.finish(self.ring)
        logger.info(
            "nomad run finished: %d updates on %d workers, %d census checks",
            self.total_updates(), p, self.census_checks,
        )
        return trace

    def _monitor(self, stop: StopCondition, trace: RunTrace, start: float) -> None:
        while True:
            if self._failure is not None:
                return
            if stop.max_seconds is not None and time.monotonic() - start >= stop.max_seconds:
                self._budget_reached = True
                self._pause.set()
            if self._pause.is_set():
                try:
                    self._barrier.wait()
                except threading.BrokenBarrierError:
                    return
                finished = self._checkpoint(trace, start)
                self._pause.clear()
                if finished:
                    self._stop.set()
                for ctx in self.workers:
                    ctx.last_progress = time.monotonic()
                try:
                    self._barrier.wait()
                except threading.BrokenBarrierError:
                    return
                if finished:
                    return
                continue
            self._watchdog()
            time.sleep(self.config.poll_interval)

    def _checkpoint(self, trace: RunTrace, start: float) -> bool:
        """Evaluate and census at the barrier; returns True when the budget is spent."""
        self.census()
        self._snapshot(trace, start)
        total = self.total_updates()
        if self._next_checkpoint is not None:
            while self._next_checkpoint <= total:
                self._next_checkpoint += self.config.eval_every
        return self._budget_reached


def run_async(
    model: NomadicModel,
    topology: WorkerTopology,
    stop: StopCondition,
    config: SchedulerConfig | None = None,
    trace: RunTrace | None = None,
) -> RunTrace:
    """Run ``model`` to ``stop`` under nomadic circulation and return its trace."""
    scheduler = NomadScheduler(model, topology, config)
    trace = scheduler.run(stop, trace)
    if scheduler.non_owner_updates:
        raise EngineError(f"{scheduler.non_owner_updates} updates touched columns not held")
    return trace
