"""Run traces — ELBO/perplexity records, their CSV format, and the provenance spine.

Each run produces a ``RunTrace`` written as CSV.  Every flow run also appends a
provenance entry to ``state/TRACE.json``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from engine.context import get_state_dir

TRACE_HEADER = ("updates", "seconds", "elbo", "perplexity")


@dataclass(frozen=True)
class TraceRecord:
    updates: int
    seconds: float
    elbo: float
    perplexity: float | None = None


@dataclass
class RunTrace:
    """Time-ordered records plus the metadata describing the run."""

    metadata: dict[str, object] = field(default_factory=dict)
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if record.updates < last.updates:
                raise ValueError(
                    f"update count went backwards: {last.updates} -> {record.updates}"
                )
            if record.seconds < last.seconds:
                raise ValueError(f"wallclock went backwards: {last.seconds} -> {record.seconds}")
        self.records.append(record)

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def elbos(self) -> list[float]:
        return [r.elbo for r in self.records]


def _format_float(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return format(float(value), ".17g")


def _format_metadata(metadata: dict[str, object]) -> str:
    return " ".join(f"{key}={metadata[key]}" for key in sorted(metadata))


def write_trace(trace: RunTrace, path: str | Path) -> None:
    """Write the trace as CSV: one '#' metadata line, the header, then one row per record."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# {_format_metadata(trace.metadata)}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for record in trace.records:
            writer.writerow(
                [
                    record.updates,
                    _format_float(record.seconds),
                    _format_float(record.elbo),
                    _format_float(record.perplexity),
                ]
            )


def iter_trace(path: str | Path) -> Iterator[TraceRecord]:
    """Stream records from a trace CSV without loading the whole file."""
    with open(path, newline="") as f:
        rows = csv.reader(line for line in f if not line.startswith("#"))
        header = next(rows, None)
        if header is not None and tuple(header) != TRACE_HEADER:
            raise ValueError(f"unexpected trace header: {header}")
        for row in rows:
            updates, seconds, elbo, perplexity = row
            yield TraceRecord(
                updates=int(updates),
                seconds=float(seconds),
                elbo=float(elbo),
                perplexity=float(perplexity) if perplexity else None,
            )


def read_trace(path: str | Path) -> RunTrace:
    """Load a trace CSV back into a ``RunTrace``."""
    metadata: dict[str, object] = {}
    with open(path) as f:
        first = f.readline()
    if first.startswith("#"):
        for pair in first[1:].split():
            key, _, value = pair.partition("=")
            metadata[key] = value
    trace = RunTrace(metadata=metadata)
    for record in iter_trace(path):
        trace.append(record)
    return trace


# ── Provenance spine ─────────────────────────────────────────────────────────


def _trace_path() -> Path:
    """Return the path to TRACE.json in the active project's state dir."""
    return get_state_dir() / "TRACE.json"


def hash_config(config: dict) -> str:
    """Return a SHA-256 prefix of the canonical JSON form of a config."""
    canonical = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def record_run(
    task: str,
    inputs: list[str],
    outputs: list[str],
    config_hash: str | None = None,
    summary: dict | None = None,
) -> None:
    """Append a provenance entry to TRACE.json."""
    entries = _load_provenance()
    entry: dict = {
        "task": task,
        "inputs": inputs,
        "outputs": outputs,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    if config_hash:
        entry["config_hash"] = config_hash
    if summary:
        entry["summary"] = summary
    entries.append(entry)
    path = _trace_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(entries, indent=2) + "\n")


def _load_provenance() -> list[dict]:
    """Load the current TRACE.json entries."""
    tp = _trace_path()
    if not tp.exists():
        return []
    text = tp.read_text().strip()
    if not text:
        return []
    return json.loads(text)
