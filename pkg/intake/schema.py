"""Experiment config schema — the single authoritative contract for every run."""

from __future__ import annotations

from enum import Enum
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ModelKind(str, Enum):
    LDA = "lda"
    MIXMULT = "mixmult"
    GMM = "gmm"


class Algorithm(str, Enum):
    VI = "vi"
    SVI = "svi"
    ESVI = "esvi"
    ESVI_TOPK = "esvi-topk"


class ExperimentConfig(BaseModel):
    """Everything a training run needs, after YAML defaults, file and flags are merged."""

    model_config = ConfigDict(extra="forbid", use_enum_values=False)

    model: ModelKind = ModelKind.LDA
    algo: Algorithm = Algorithm.ESVI
    topics: int = Field(default=8, ge=1, description="Number of topics/components K")
    topk: int | None = Field(default=None, ge=1, description="Top-k cutoff C")
    workers: int = Field(default=1, ge=1)
    alpha: float = Field(default=0.1, gt=0)
    eta: float = Field(default=0.01, gt=0)
    seed: int = Field(default=0, ge=0)

    max_epochs: float | None = Field(default=None, gt=0)
    max_updates: int | None = Field(default=None, ge=1)
    max_seconds: float | None = Field(default=None, gt=0)
    eval_every: int | None = Field(default=None, ge=1)
    test_fraction: float = Field(default=0.0, ge=0, lt=1)

    subset_size: int = Field(default=2, ge=1)
    refresh: int = Field(default=4, ge=0)
    sync_every: int = Field(default=1, ge=1)
    watchdog_seconds: float = Field(default=5.0, gt=0)
    hold_patience: int = Field(default=64, ge=0)

    m0: float = 0.0
    kappa0: float = Field(default=1.0, gt=0)
    a0: float = Field(default=1.0, gt=0)
    b0: float = Field(default=1.0, gt=0)

    synthetic_docs: int = Field(default=50, ge=1)
    synthetic_vocab: int = Field(default=200, ge=1)
    synthetic_length: int = Field(default=80, ge=1)
    synthetic_points: int = Field(default=200, ge=1)
    synthetic_dim: int = Field(default=2, ge=1)
    synthetic_blocks: bool = False

    docword: Path | None = None
    vocab: Path | None = None
    data: Path | None = None
    out: Path | None = None
    strict: bool = False

    @model_validator(mode="after")
    def svi_is_serial(self) -> ExperimentConfig:
        if self.algo == Algorithm.SVI and self.workers > 1:
            raise ValueError("svi is inherently serial; use workers=1 or algo=esvi")
        return self

    @model_validator(mode="after")
    def cutoff_matches_algorithm(self) -> ExperimentConfig:
        if self.algo == Algorithm.ESVI_TOPK and self.topk is None:
            raise ValueError("esvi-topk requires topk")
        if self.algo != Algorithm.ESVI_TOPK and self.topk is not None:
            raise ValueError(f"topk is only meaningful for esvi-topk, not {self.algo.value}")
        if self.topk is not None and self.topk > self.topics:
            raise ValueError(f"topk={self.topk} exceeds topics={self.topics}")
        if self.algo == Algorithm.ESVI_TOPK and self.model != ModelKind.LDA:
            raise ValueError("esvi-topk is only implemented for model=lda")
        return self

    @model_validator(mode="after")
    def mixture_subset_fits(self) -> ExperimentConfig:
        if self.model == ModelKind.LDA or self.algo != Algorithm.ESVI:
            return self
        if self.subset_size < 2:
            raise ValueError("subset_size must be >= 2 for a restricted update")
        if self.topics < self.subset_size:
            raise ValueError(
                f"topics={self.topics} is smaller than subset_size={self.subset_size}"
            )
        return self

    @model_validator(mode="after")
    def heldout_needs_lda(self) -> ExperimentConfig:
        if self.test_fraction > 0 and self.model != ModelKind.LDA:
            raise ValueError("held-out perplexity is only defined for model=lda")
        return self

    @model_validator(mode="after")
    def budget_required(self) -> ExperimentConfig:
        if self.max_epochs is None and self.max_updates is None and self.max_seconds is None:
            raise ValueError("set at least one of max_epochs, max_updates or max_seconds")
        return self

    @model_validator(mode="after")
    def inputs_consistent(self) -> ExperimentConfig:
        if self.docword is not None and self.vocab is None:
            raise ValueError("docword requires a vocab file")
        if self.docword is not None and self.model == ModelKind.GMM:
            raise ValueError("model=gmm reads dense rows from data, not docword")
        if self.data is not None and self.docword is not None:
            raise ValueError("give either docword or data, not both")
        return self

    @property
    def is_mixture(self) -> bool:
        return self.model != ModelKind.LDA

    def metadata(self) -> dict[str, object]:
        """Run metadata written on the trace's comment line."""
        return {
            "model": self.model.value,
            "algo": self.algo.value,
            "K": self.topics,
            "C": self.topk if self.topk is not None else self.topics,
            "P": self.workers,
            "seed": self.seed,
            "alpha": self.alpha,
            "eta": self.eta,
        }
