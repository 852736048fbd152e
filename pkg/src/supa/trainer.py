"""Single-pass, batch-sequential training with early stopping (InsLearn)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError
from .graph import TemporalEdge

log = logging.getLogger(__name__)

EXHAUSTED = "exhausted"
PATIENCE = "patience"
DATA_END = "data_end"


@dataclass
class TrainerConfig:
    s_batch: int = 1024
    n_iter: int = 30
    i_valid: int = 8
    s_valid: int = 150
    mu: int = 3

    def __post_init__(self):
        for name in ("s_batch", "n_iter", "i_valid", "s_valid"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.mu < 0:
            raise ConfigError("mu must be non-negative")
        if self.s_valid >= self.s_batch:
            raise ConfigError("s_valid must be smaller than s_batch")


@dataclass
class BatchOutcome:
    batch: int
    iterations: int
    theta_best: float
    stop_reason: str
    n_train: int
    n_valid: int
    checks: int = 0


def split_batches(edges: Sequence, s_batch: int) -> list[list]:
    return [list(edges[i:i + s_batch]) for i in range(0, len(edges), s_batch)]


def validation_size(n: int, cfg: TrainerConfig) -> int:
    """Validation edges for a batch of ``n``; a short final batch keeps at most a fifth."""
    if n >= cfg.s_batch:
        return cfg.s_valid
    return min(cfg.s_valid, n // 5)


def run_batch(model, batch: Sequence, cfg: TrainerConfig, index: int) -> BatchOutcome:
    """Train on one batch of already-inserted edges and leave the best model loaded."""
    if not batch:
        raise ConfigError("empty batch")
    n_valid = validation_size(len(batch), cfg)
    train = batch[: len(batch) - n_valid]
    valid = batch[len(batch) - n_valid:]
    activity = model.activity()

    if n_valid == 0:
        # nothing to validate against: one plain pass, kept as is
        model.train_edges(train)
        return BatchOutcome(index, 1, 0.0, DATA_END, len(train), 0)

    theta_best = 0.0
    patience = 0
    best = model.snapshot(include_rng=False)
    reason = EXHAUSTED
    checks = 0
    i = 0
    for i in range(1, cfg.n_iter + 1):
        # every pass replays the batch from the same activity timestamps
        model.set_activity(activity)
        model.train_edges(train)
        if i % cfg.i_valid:
            continue
        theta = model.validate(valid)
        checks += 1
        if theta > theta_best:
            theta_best = theta
            best = model.snapshot(include_rng=False)
            patience = 0
        else:
            patience += 1
        log.info("batch=%d iter=%d theta=%.6f best=%.6f patience=%d", index, i, theta, theta_best, patience)
        if patience > cfg.mu:
            reason = PATIENCE
            break
    model.restore(best, rng=False)
    return BatchOutcome(index, i, theta_best, reason, len(train), n_valid, checks)


def run_inslearn(edges: Sequence[TemporalEdge], cfg: TrainerConfig, model) -> list[BatchOutcome]:
    """Sort ``edges`` by time, cut into batches and train on each in order.

    Each batch's edges enter the graph once, when the batch starts; only the
    parameter updates repeat across iterations.  ``model`` must provide
    ``observe``, ``train_edges``, ``validate``, ``snapshot``, ``restore``,
    ``activity`` and ``set_activity``.
    """
    ordered = sorted(edges, key=lambda e: e.timestamp)
    outcomes = []
    for b, batch in enumerate(split_batches(ordered, cfg.s_batch)):
        indexed = [model.observe(e) for e in batch]
        outcome = run_batch(model, indexed, cfg, b)
        log.debug("batch %d done: %s", b, outcome)
        outcomes.append(outcome)
    return outcomes
