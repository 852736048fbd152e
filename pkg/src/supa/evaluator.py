"""Ranking metrics and the evaluation protocols.

Ranks are 1-based and pessimistic: a candidate scoring equal to the true
target is counted as ranked above it, so reported metrics are lower bounds.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .graph import GraphStore, IndexedEdge, TemporalEdge

log = logging.getLogger(__name__)

CSV_COLUMNS = ("protocol", "step", "eta", "H20", "H50", "NDCG10", "MRR", "n_edges", "seed")
DISTURBANCE_ETAS = (5, 10, 20, 50, 100, None)


@dataclass
class EvalConfig:
    """How evaluation edges are ranked.

    ``n_sampled`` None ranks against every candidate, otherwise against that
    many sampled ones.  ``drop_unseen`` leaves out evaluation edges with an
    endpoint the trained graph has never seen (transductive evaluation);
    otherwise such nodes are registered with their initial state and ranked.
    """

    filtered: bool = True
    n_sampled: int | None = None
    seed: int = 0
    drop_unseen: bool = True


@dataclass
class RankingResult:
    ranks: np.ndarray
    mode: str

    @property
    def metrics(self) -> dict[str, float]:
        return compute_metrics(self.ranks)


def rank_of(scores: np.ndarray, target: int) -> int:
    """Pessimistic 1-based rank of ``scores[target]``."""
    s = scores[target]
    return int(np.count_nonzero(scores >= s))


def compute_metrics(ranks) -> dict[str, float]:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("no ranks to aggregate")
    if np.any(ranks < 1):
        raise ValueError("ranks are 1-based")
    ndcg = np.where(ranks <= 10, 1.0 / np.log2(ranks + 1.0), 0.0)
    return {
        "H20": float(np.mean(ranks <= 20)),
        "H50": float(np.mean(ranks <= 50)),
        "NDCG10": float(np.mean(ndcg)),
        "MRR": float(np.mean(1.0 / ranks)),
    }


# -- scorers --------------------------------------------------------------------


class EmbeddingScorer:
    """Dot products of inference-form embeddings, cached per relation.

    Build a fresh scorer after the model changes; nothing here mutates it.
    """

    def __init__(self, model):
        self.model = model
        self._cache: dict[int, np.ndarray] = {}

    def _table(self, relation: int) -> np.ndarray:
        table = self._cache.get(relation)
        if table is None or len(table) < len(self.model.store):
            table = self._cache[relation] = self.model.embeddings(relation, np.arange(len(self.model.store)))
        return table

    def __call__(self, u: int, relation: int, candidates: np.ndarray) -> np.ndarray:
        table = self._table(relation)
        return table[candidates] @ table[u]


class PopularityScorer:
    """Scores every candidate by its current degree in the graph."""

    def __init__(self, store: GraphStore):
        self.store = store
        self.degrees = np.array([store.degree(i) for i in range(len(store))], dtype=np.float64)

    def __call__(self, u: int, relation: int, candidates: np.ndarray) -> np.ndarray:
        return self.degrees[candidates]


# -- ranking --------------------------------------------------------------------


def candidate_pool(store: GraphStore, e: IndexedEdge, filtered: bool) -> np.ndarray:
    """Nodes of the target's type other than the query node; filtered mode also
    drops nodes already linked to the query under the edge's relation (except the target)."""
    u, v, r, _ = e
    pool = np.asarray(store.nodes_of_type(store.types[v]), dtype=np.int64)
    drop = {u}
    if filtered:
        drop.update(x.neighbor for x in store.neighbors(u) if x.edge_type == r)
    drop.discard(v)
    if drop:
        pool = pool[~np.isin(pool, np.fromiter(drop, dtype=np.int64))]
    return pool


def rank_edge(scorer, e: IndexedEdge, candidates: np.ndarray) -> int:
    """Rank of ``e.v`` among ``candidates`` (which must contain it) for query ``e.u``."""
    candidates = np.asarray(candidates, dtype=np.int64)
    hits = np.flatnonzero(candidates == e.v)
    if len(hits) == 0:
        raise ValueError("candidates must include the true target")
    scores = scorer(e.u, e.edge_type, candidates)
    return rank_of(scores, int(hits[0]))


def rank_edges(model_or_scorer, edges: Sequence[IndexedEdge], cfg: EvalConfig | None = None,
               store: GraphStore | None = None) -> np.ndarray:
    """Ranks for every edge; ``model_or_scorer`` is a model or a scorer callable."""
    cfg = cfg or EvalConfig()
    if hasattr(model_or_scorer, "embeddings"):
        scorer = EmbeddingScorer(model_or_scorer)
        store = store or model_or_scorer.store
    else:
        scorer = model_or_scorer
    if store is None:
        raise ValueError("a graph store is needed to build candidate sets")
    rng = np.random.default_rng(cfg.seed)
    ranks = np.empty(len(edges), dtype=np.int64)
    for i, e in enumerate(edges):
        pool = candidate_pool(store, e, cfg.filtered)
        if cfg.n_sampled is not None:
            others = pool[pool != e.v]
            if cfg.n_sampled < len(others):
                others = np.sort(rng.choice(others, size=cfg.n_sampled, replace=False))
            pool = np.concatenate(([e.v], others))
        ranks[i] = rank_edge(scorer, e, pool)
    return ranks


# -- protocols ------------------------------------------------------------------


@dataclass
class MetricRow:
    protocol: str
    step: int
    eta: int | None
    metrics: dict[str, float]
    n_edges: int
    seed: int

    def as_csv(self) -> list[str]:
        m = self.metrics
        return [self.protocol, str(self.step), "inf" if self.eta is None else str(self.eta),
                *(f"{m[k]:.6f}" for k in ("H20", "H50", "NDCG10", "MRR")),
                str(self.n_edges), str(self.seed)]


def write_metrics_csv(path: str | Path, rows: Sequence[MetricRow]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow(row.as_csv())


def format_table(rows: Sequence[MetricRow]) -> str:
    lines = [f"{'protocol':<14}{'step':>5}{'eta':>6}{'H@20':>9}{'H@50':>9}{'NDCG@10':>9}{'MRR':>9}{'edges':>8}"]
    for row in rows:
        m = row.metrics
        eta = "inf" if row.eta is None else str(row.eta)
        lines.append(f"{row.protocol:<14}{row.step:>5}{eta:>6}{m['H20']:>9.4f}{m['H50']:>9.4f}"
                     f"{m['NDCG10']:>9.4f}{m['MRR']:>9.4f}{row.n_edges:>8}")
    return "\n".join(lines)


def chronological_split(edges: Sequence[TemporalEdge], fractions=(0.8, 0.01, 0.19)):
    """Sort by time and cut into consecutive parts with the given fractions."""
    if not math.isclose(sum(fractions), 1.0):
        raise ValueError("split fractions must sum to 1")
    ordered = sorted(edges, key=lambda e: e.timestamp)
    n = len(ordered)
    cuts = np.round(np.cumsum(fractions) * n).astype(int)
    out, start = [], 0
    for c in cuts:
        out.append(ordered[start:c])
        start = c
    return out


def seen_edges(model, edges: Sequence[TemporalEdge]) -> list[TemporalEdge]:
    """The edges whose two endpoints are already in the model's graph."""
    index = model.store.index
    return [e for e in edges if e.src.id in index and e.dst.id in index]


def observe_for_eval(model, edges: Sequence[TemporalEdge]) -> list[IndexedEdge]:
    """Resolve evaluation edges to indices without adding them to the graph.

    Endpoints never seen before are registered with their deterministic
    initial state so that they can still be ranked.
    """
    out = []
    for e in edges:
        u = model.register_node(e.src, e.timestamp)
        v = model.register_node(e.dst, e.timestamp)
        out.append(IndexedEdge(u, v, e.edge_type, float(e.timestamp)))
    return out


@dataclass
class LinkPredictionResult:
    valid: MetricRow
    test: MetricRow
    baseline_valid: MetricRow
    baseline_test: MetricRow
    outcomes: list


def run_link_prediction(edges: Sequence[TemporalEdge], model, train_fn: Callable,
                        cfg: EvalConfig | None = None, eta: int | None = None,
                        seed: int = 0, protocol: str = "link") -> LinkPredictionResult:
    """80/1/19 chronological protocol.

    ``train_fn(model, train_edges)`` trains on the first 80%.  The 1% slice is
    then scored, added to the graph (not trained on) and the last 19% scored.
    A popularity-rank baseline is scored on the same candidate sets.  With
    ``cfg.drop_unseen`` both slices keep only edges between nodes of the
    training graph.
    """
    cfg = cfg or EvalConfig(seed=seed)
    train, valid, test = chronological_split(edges)
    outcomes = train_fn(model, train)
    if cfg.drop_unseen:
        valid, test = seen_edges(model, valid), seen_edges(model, test)
        log.info("kept %d validation and %d test edges between training nodes", len(valid), len(test))
    if not valid or not test:
        raise ValueError("an evaluation slice is empty")

    def rows(part, step):
        idx = observe_for_eval(model, part)
        ranks = rank_edges(model, idx, cfg)
        base = rank_edges(PopularityScorer(model.store), idx, cfg, store=model.store)
        return (MetricRow(protocol, step, eta, compute_metrics(ranks), len(part), seed),
                MetricRow(f"{protocol}-pop", step, eta, compute_metrics(base), len(part), seed))

    valid_row, base_valid = rows(valid, 1)
    for e in valid:
        model.observe(e)
    test_row, base_test = rows(test, 2)
    return LinkPredictionResult(valid_row, test_row, base_valid, base_test, outcomes)


def split_equal_parts(edges: Sequence[TemporalEdge], n_parts: int = 10) -> list[list[TemporalEdge]]:
    if len(edges) < n_parts:
        raise ValueError(f"need at least {n_parts} edges, got {len(edges)}")
    ordered = sorted(edges, key=lambda e: e.timestamp)
    bounds = [len(ordered) * i // n_parts for i in range(n_parts + 1)]
    return [ordered[bounds[i]:bounds[i + 1]] for i in range(n_parts)]


def run_dynamic_protocol(edges: Sequence[TemporalEdge], model, train_fn: Callable,
                         cfg: EvalConfig | None = None, seed: int = 0,
                         n_parts: int = 10) -> list[MetricRow]:
    """Train on part i (continuing from earlier parts), evaluate on part i + 1."""
    cfg = cfg or EvalConfig(seed=seed)
    parts = split_equal_parts(edges, n_parts)
    rows = []
    for i in range(n_parts - 1):
        train_fn(model, parts[i])
        part = seen_edges(model, parts[i + 1]) if cfg.drop_unseen else parts[i + 1]
        if not part:
            raise ValueError(f"dynamic step {i + 1}: no evaluation edge between known nodes")
        idx = observe_for_eval(model, part)
        ranks = rank_edges(model, idx, cfg)
        rows.append(MetricRow("dynamic", i + 1, None, compute_metrics(ranks), len(part), seed))
        log.info("dynamic step=%d MRR=%.4f", i + 1, rows[-1].metrics["MRR"])
    return rows


def run_disturbance_protocol(edges: Sequence[TemporalEdge], model_factory: Callable, train_fn: Callable,
                             etas: Sequence[int | None] = DISTURBANCE_ETAS,
                             cfg: EvalConfig | None = None, seed: int = 0) -> list[MetricRow]:
    """A fresh model per neighbor cap (``None`` = uncapped), each run through the 80/1/19 protocol."""
    rows = []
    for eta in etas:
        if eta is not None and eta < 1:
            raise ValueError("neighbor caps must be positive")
        model = model_factory(eta)
        result = run_link_prediction(edges, model, train_fn, cfg, eta=eta, seed=seed, protocol="disturbance")
        rows.append(result.test)
        log.info("disturbance eta=%s MRR=%.4f", eta, result.test.metrics["MRR"])
    return rows
