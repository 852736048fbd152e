"""The SUPA model: relation-specific update and time-aware propagation.

The free functions below are the model's formulas on plain numpy values;
they document the mathematics and are what the evaluation and export paths
use.  Training goes through :class:`Supa`.  A single edge can be prepared
in Python (:meth:`Supa.prepare_edge`, handy for inspection) and applied by
the compiled step; whole passes run entirely in compiled code
(:func:`supa._kernels.train_pass`), which draws the same random numbers in
the same order and so ends in the same state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, TrainingError
from .graph import GraphStore, IndexedEdge, NodeRef, TemporalEdge, TypeTables
from .params import AdamState, Checkpoint, ParamStore
from .rng import StreamRng
from .sampler import InfluencedGraph, sample_influenced_graph
from .schema import MetapathSchema, group_by_head, parse_schema

log = logging.getLogger(__name__)

TERMINATED = None


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def log_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def decay(x):
    """Attenuation ``1 / ln(e + x)``: 1 at 0, strictly decreasing."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("decay is defined for non-negative intervals only")
    out = 1.0 / np.log(math.e + x)
    return float(out) if out.ndim == 0 else out


def staleness_filter(x, tau: float):
    """1 while an edge is at most ``tau`` old, else 0."""
    out = (np.asarray(x) <= tau).astype(np.float64)
    return float(out) if out.ndim == 0 else out


def tau_for_decay(level: float) -> float:
    """The age at which :func:`decay` falls to ``level``."""
    if not 0.0 < level < 1.0:
        raise ValueError("decay level must lie in (0, 1)")
    return math.exp(1.0 / level) - math.e


def target_embedding(h_long, h_short, alpha: float, delta: float) -> np.ndarray:
    """Long-term memory plus short-term memory faded by inactivity."""
    return np.asarray(h_long) + np.asarray(h_short) * decay(float(sigmoid(alpha)) * delta)


def final_embedding(h_star, context) -> np.ndarray:
    return 0.5 * (np.asarray(h_star) + np.asarray(context))


def interaction_loss(h_u_r, h_v_r) -> float:
    return float(-log_sigmoid(np.dot(h_u_r, h_v_r)))


def propagate(path, h_star, now: float, tau: float) -> list:
    """Interaction information arriving at each step of ``path`` after the first.

    Returns ``(node, relation, vector)`` per step; once an edge older than
    ``tau`` is crossed the flow stops and that step (and nothing after it)
    carries ``TERMINATED``.
    """
    out = []
    info = np.asarray(h_star, dtype=np.float64)
    for step in path[1:]:
        age = now - step.in_edge_timestamp
        if not staleness_filter(age, tau):
            out.append((step.node, step.in_edge_type, TERMINATED))
            break
        info = decay(max(age, 0.0)) * info
        out.append((step.node, step.in_edge_type, info))
    return out


def propagation_loss(pairs: Iterable[tuple[np.ndarray, np.ndarray | None]]) -> float:
    """``pairs`` of (influenced context, propagated information); terminated steps add nothing."""
    total = 0.0
    for context, info in pairs:
        if info is TERMINATED:
            continue
        total -= float(log_sigmoid(np.dot(context, info)))
    return total


def negative_loss(h_u_star, h_v_star, neg_contexts_u: Sequence, neg_contexts_v: Sequence) -> float:
    """Skip-gram style push-away term.

    ``neg_contexts_u`` are relation-r contexts of nodes sampled against ``u``
    (they have ``v``'s node type), and vice versa.
    """
    total = 0.0
    for c in neg_contexts_u:
        total -= float(log_sigmoid(-np.dot(c, h_u_star)))
    for c in neg_contexts_v:
        total -= float(log_sigmoid(-np.dot(c, h_v_star)))
    return total


@dataclass
class HyperParams:
    dim: int = 128
    walks: int = 4
    walk_length: int = 4
    n_neg: int = 5
    tau: float = field(default_factory=lambda: tau_for_decay(0.3))

    def __post_init__(self):
        if self.dim < 1 or self.walks < 0 or self.walk_length < 1 or self.n_neg < 0:
            raise ConfigError(f"invalid hyperparameters {self}")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")


class LossReport(NamedTuple):
    inter: float
    prop: float
    neg: float

    @property
    def total(self) -> float:
        return self.inter + self.prop + self.neg


@dataclass
class ForwardTrace:
    """Everything sampled for one edge, in the index form the kernel consumes."""

    edge: IndexedEdge
    influenced: InfluencedGraph
    negatives_u: list[int]
    negatives_v: list[int]
    nodes: np.ndarray
    node_types: np.ndarray
    deltas: np.ndarray
    slot_rows: np.ndarray
    slot_keys: list[tuple[int, int]]
    own_slots: np.ndarray
    step_src: np.ndarray
    step_slot: np.ndarray
    step_coef: np.ndarray
    neg_src: np.ndarray
    neg_slot: np.ndarray


def _int_array(values) -> np.ndarray:
    return np.array(values, dtype=np.int64)


class Supa:
    """Streaming embedding model over a :class:`GraphStore`."""

    def __init__(self, tables: TypeTables, schemas: Sequence[MetapathSchema],
                 hp: HyperParams | None = None, seed: int = 0,
                 adam: AdamState | None = None, neighbor_cap: int | None = None):
        self.tables = tables
        self.hp = hp if hp is not None else HyperParams()
        self.seed = seed
        self.schemas = list(schemas)
        self._by_head = group_by_head(self.schemas)
        self.store = GraphStore(tables, neighbor_cap)
        self.params = ParamStore(self.hp.dim, len(tables.node_types), seed, adam)
        self.rng = StreamRng(seed)
        self.relation_types: dict[int, set[tuple[int, int]]] = {}
        self.clamped_intervals = 0
        self.work = 0
        self._out = np.zeros(5)
        self._schema_arrays = None
        self._hop_cache = None
        self.short_negatives = 0
        self.eval_config = None
        self.valid_metric = "MRR"

    # -- graph side ---------------------------------------------------------

    def _sync_nodes(self) -> None:
        store, params = self.store, self.params
        for idx in range(params.n_nodes, len(store)):
            params.init_node(idx, store.ids[idx])

    def observe(self, edge: TemporalEdge) -> IndexedEdge:
        """Insert ``edge`` into the graph (no training)."""
        e = self.store.add_edge(edge)
        self._sync_nodes()
        self.relation_types.setdefault(e.edge_type, set()).add((edge.src.type_id, edge.dst.type_id))
        return e

    def register_node(self, ref: NodeRef, timestamp: float) -> int:
        idx, _ = self.store.add_node(ref, timestamp)
        self._sync_nodes()
        return idx

    def activity(self) -> list[float]:
        return self.store.last_active.tolist()

    def set_activity(self, values: Sequence[float]) -> None:
        self.store.last_active[: len(values)] = values

    # -- training -----------------------------------------------------------

    def prepare_edge(self, e: IndexedEdge) -> ForwardTrace:
        """Sample the influenced graph and negatives for ``e``; allocate contexts."""
        store, params, hp, rng = self.store, self.params, self.hp, self.rng
        u, v, r, t = e
        lookups0 = store.lookups
        if hp.walks > 0:
            ig = sample_influenced_graph(store, u, v, t, self._by_head, hp.walks, hp.walk_length, rng)
        else:
            ig = InfluencedGraph()
        tu, tv = store.types[u], store.types[v]
        negs_u = store.sample_negatives(tv, hp.n_neg, rng, exclude=(u, v))
        negs_v = store.sample_negatives(tu, hp.n_neg, rng, exclude=(u, v))

        deltas = []
        for x in (u, v):
            delta = t - store.last_active[x]
            if delta < 0.0:
                self.clamped_intervals += 1
                delta = 0.0
            deltas.append(delta)

        slot_of: dict[tuple[int, int], int] = {}
        slot_rows: list[int] = []
        slot_keys: list[tuple[int, int]] = []
        ensure = params.ensure_context

        def slot(node: int, rel: int) -> int:
            key = (node, rel)
            s = slot_of.get(key)
            if s is None:
                s = slot_of[key] = len(slot_rows)
                slot_rows.append(ensure(node, rel))
                slot_keys.append(key)
            return s

        own = [slot(u, r), slot(v, r)]
        step_src, step_slot, step_coef = [], [], []
        tau = hp.tau
        e_ = math.e
        log_ = math.log
        for x, paths in ((0, ig.paths_from_u), (1, ig.paths_from_v)):
            for path in paths:
                coef = 1.0
                for step in path[1:]:
                    age = t - step.in_edge_timestamp
                    if age > tau:
                        break
                    coef /= log_(e_ + age)
                    step_src.append(x)
                    step_slot.append(slot(step.node, step.in_edge_type))
                    step_coef.append(coef)
        neg_src = [0] * len(negs_u) + [1] * len(negs_v)
        neg_slot = [slot(n, r) for n in negs_u] + [slot(n, r) for n in negs_v]
        self.work += (store.lookups - lookups0) + len(slot_rows) + 2
        return ForwardTrace(
            edge=e, influenced=ig, negatives_u=negs_u, negatives_v=negs_v,
            nodes=_int_array((u, v)), node_types=_int_array((tu, tv)),
            deltas=np.array(deltas), slot_rows=_int_array(slot_rows), slot_keys=slot_keys,
            own_slots=_int_array(own), step_src=_int_array(step_src),
            step_slot=_int_array(step_slot), step_coef=np.array(step_coef, dtype=np.float64),
            neg_src=_int_array(neg_src), neg_slot=_int_array(neg_slot),
        )

    def gradients(self, trace: ForwardTrace) -> dict:
        """Losses and analytic gradients for a prepared edge, without updating anything."""
        p = self.params
        d = p.dim
        g_long = np.zeros((2, d))
        g_short = np.zeros((2, d))
        g_ctx = np.zeros((len(trace.slot_rows), d))
        g_alpha = np.zeros((2, 1))
        out = np.zeros(5)
        _kernels.forward_backward(
            p.h_long, p.h_short, p.contexts, p.alpha,
            trace.nodes, trace.node_types, trace.deltas, trace.slot_rows, trace.own_slots,
            trace.step_src, trace.step_slot, trace.step_coef, trace.neg_src, trace.neg_slot,
            g_long, g_short, g_ctx, g_alpha, out)
        return {
            "loss": LossReport(out[0], out[1], out[2]), "decay": out[3:5].copy(),
            "h_long": g_long, "h_short": g_short, "contexts": g_ctx, "alpha": g_alpha[:, 0],
        }

    def apply(self, trace: ForwardTrace) -> LossReport:
        p = self.params
        adam = p.adam
        adam.step += 1
        out = self._out
        ok = _kernels.train_step(
            *p.kernel_arrays(),
            trace.nodes, trace.node_types, trace.deltas, trace.slot_rows, trace.own_slots,
            trace.step_src, trace.step_slot, trace.step_coef, trace.neg_src, trace.neg_slot,
            adam.lr, adam.beta1, adam.beta2, adam.eps, adam.weight_decay, adam.step, out)
        u, v, r, t = trace.edge
        if not ok:
            adam.step -= 1
            raise TrainingError(
                f"non-finite loss or gradient on edge ({self.store.ids[u]!r}, {self.store.ids[v]!r}, "
                f"{self.tables.edge_types[r]!r}, t={t!r})")
        self.store.mark_active(u, t)
        self.store.mark_active(v, t)
        return LossReport(out[0], out[1], out[2])

    def train_on_edge(self, e: IndexedEdge) -> LossReport:
        """Sample, compute all three losses, take one optimizer step, refresh activity."""
        return self.apply(self.prepare_edge(e))

    def _compiled_schemas(self):
        """Schemas as flat arrays; each hop refers to a distinct (node type, edge types) constraint."""
        if self._schema_arrays is None:
            n_types = len(self.tables.node_types)
            head_ptr = np.zeros(n_types + 1, dtype=np.int64)
            constraints: dict[tuple[int, frozenset], int] = {}
            head_schema, schema_ptr, hop_constraint = [], [0], []
            for h in range(n_types):
                for schema in self._by_head.get(h, []):
                    head_schema.append(len(schema_ptr) - 1)
                    for hop in schema.hops:
                        hop_constraint.append(constraints.setdefault(hop, len(constraints)))
                    schema_ptr.append(len(hop_constraint))
                head_ptr[h + 1] = len(head_schema)
            self._schema_arrays = (head_ptr, _int_array(head_schema), _int_array(schema_ptr),
                                   _int_array(hop_constraint), list(constraints))
        return self._schema_arrays

    def _hop_index(self, flat):
        """Per constraint, the qualifying adjacency entries of every node (CSR, ascending time)."""
        key = self.store.version
        if self._hop_cache is not None and self._hop_cache[0] == key:
            return self._hop_cache[1]
        constraints = self._compiled_schemas()[4]
        n = len(flat.indptr) - 1
        owner = np.repeat(np.arange(n, dtype=np.int64), np.diff(flat.indptr))
        hop_ptr = np.zeros((max(len(constraints), 1), n + 1), dtype=np.int64)
        parts = []
        offset = 0
        for c, (node_type, edge_types) in enumerate(constraints):
            ok = (flat.node_type[flat.neighbor] == node_type) & np.isin(flat.edge_type, list(edge_types))
            entries = np.flatnonzero(ok)
            counts = np.bincount(owner[entries], minlength=n)
            hop_ptr[c, 1:] = offset + np.cumsum(counts)
            hop_ptr[c, 0] = offset
            parts.append(entries)
            offset += len(entries)
        hop_entries = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        self._hop_cache = (key, (hop_ptr, hop_entries.astype(np.int64)))
        return self._hop_cache[1]

    def train_edges(self, edges: Sequence[IndexedEdge]) -> float:
        """One ordered pass in compiled code; returns the mean total loss."""
        edges = list(edges)
        if not edges:
            return 0.0
        store, p, hp = self.store, self.params, self.hp
        n_store = len(store)
        for e in edges:
            if not (0 <= e.u < n_store and 0 <= e.v < n_store):
                raise KeyError(f"edge {e} refers to a node the graph has not seen")
        flat = store.flat()
        head_ptr, head_schema, schema_ptr, hop_constraint, _ = self._compiled_schemas()
        hop_ptr, hop_entries = self._hop_index(flat)
        cols = list(zip(*edges))
        eu, ev, er = (np.array(c, dtype=np.int64) for c in cols[:3])
        et = np.array(cols[3], dtype=np.float64)
        n_rel = len(self.tables.edge_types)
        per_edge = 2 + 2 * hp.walks * max(hp.walk_length - 1, 0) + 2 * hp.n_neg
        counters = np.zeros(7, dtype=np.int64)
        counters[_kernels.C_N_CTX] = p.n_contexts
        counters[_kernels.C_STEP] = p.adam.step
        losses = np.zeros((len(edges), 3))
        a = p.adam
        while True:
            p.reserve_contexts(int(counters[_kernels.C_N_CTX]) + per_edge * 256, n_rel)
            status = _kernels.train_pass(
                *p.kernel_arrays(), p._ctx_index.data, p._keys.data, p.node_hash, p._seed,
                flat.neighbor, flat.edge_type, flat.timestamp, flat.node_type,
                store._active, flat.type_ptr, flat.noise_items, flat.noise_cum, flat.node_weight,
                head_ptr, head_schema, schema_ptr, hop_constraint, hop_ptr, hop_entries,
                eu, ev, er, et,
                hp.walks, hp.walk_length, hp.n_neg, hp.tau,
                a.lr, a.beta1, a.beta2, a.eps, a.weight_decay,
                self.rng.state, counters, losses)
            p.set_n_contexts(int(counters[_kernels.C_N_CTX]))
            if status != _kernels.PASS_NEED_ROOM:
                break
        a.step = int(counters[_kernels.C_STEP])
        self.work += int(counters[_kernels.C_LOOKUPS] + counters[_kernels.C_SLOTS]) + 2 * len(edges)
        self.clamped_intervals += int(counters[_kernels.C_CLAMPED])
        self.short_negatives += int(counters[_kernels.C_SHORT_NEG])
        if status == _kernels.PASS_NON_FINITE:
            u, v, r, t = edges[int(counters[_kernels.C_NEXT])]
            raise TrainingError(
                f"non-finite loss or gradient on edge ({store.ids[u]!r}, {store.ids[v]!r}, "
                f"{self.tables.edge_types[r]!r}, t={t!r})")
        return float(losses.sum()) / len(edges)

    # -- embeddings and scoring ----------------------------------------------

    def target_embedding(self, idx: int, now: float) -> np.ndarray:
        p = self.params
        delta = now - self.store.last_active[idx]
        if delta < 0:
            raise ValueError("now precedes the node's last activity")
        alpha = float(p.alpha[self.store.types[idx], 0])
        return target_embedding(p.h_long[idx], p.h_short[idx], alpha, delta)

    def final_embedding(self, idx: int, relation: int, now: float | None = None) -> np.ndarray:
        """Training form when ``now`` is given, otherwise the inference form (no decay)."""
        p = self.params
        row = p.ensure_context(idx, relation)
        context = p.contexts[row]
        if now is None:
            return 0.5 * (p.h_long[idx] + p.h_short[idx] + context)
        return final_embedding(self.target_embedding(idx, now), context)

    def embeddings(self, relation: int, nodes: Sequence[int] | np.ndarray) -> np.ndarray:
        """Inference-form embeddings for ``nodes`` without allocating contexts."""
        p = self.params
        nodes = np.asarray(nodes, dtype=np.int64)
        ctx = np.empty((len(nodes), p.dim))
        rows = np.fromiter((p.context_row(int(n), relation) for n in nodes), dtype=np.int64, count=len(nodes))
        have = rows >= 0
        ctx[have] = p.contexts[rows[have]]
        for i in np.flatnonzero(~have):
            ctx[i] = p.initial_context(int(nodes[i]), relation)
        return 0.5 * (p.h_long[nodes] + p.h_short[nodes] + ctx)

    def score(self, u: int, v: int, relation: int) -> float:
        emb = self.embeddings(relation, [u, v])
        return float(emb[0] @ emb[1])

    def scores(self, query: int, relation: int, candidates: np.ndarray) -> np.ndarray:
        q = self.embeddings(relation, [query])[0]
        return self.embeddings(relation, candidates) @ q

    def recommend(self, user: int, relation: int, k: int,
                  candidates: Sequence[int] | None = None) -> list[tuple[int, float]]:
        """Top-``k`` candidates by score, ties broken by node id."""
        if candidates is None:
            candidates = self.candidate_nodes(user, relation)
        cand = np.asarray([c for c in candidates if c != user], dtype=np.int64)
        if len(cand) == 0:
            return []
        s = self.scores(user, relation, cand)
        ids = self.store.ids
        order = sorted(range(len(cand)), key=lambda i: (-s[i], ids[cand[i]]))
        return [(int(cand[i]), float(s[i])) for i in order[:k]]

    def candidate_nodes(self, user: int, relation: int) -> list[int]:
        """Nodes of the type(s) found opposite ``user``'s type under ``relation``."""
        ut = self.store.types[user]
        pairs = self.relation_types.get(relation, set())
        types = sorted({b for a, b in pairs if a == ut} | {a for a, b in pairs if b == ut})
        if not types:
            types = [ut]
        out: list[int] = []
        for t in types:
            out.extend(self.store.nodes_of_type(t))
        return sorted(out)

    def validate(self, edges: Sequence[IndexedEdge]) -> float:
        """Validation score: MRR of ``edges`` under :attr:`eval_config`; mutates nothing."""
        from .evaluator import compute_metrics, rank_edges

        if not edges:
            raise ValueError("no validation edges")
        return compute_metrics(rank_edges(self, edges, self.eval_config))[self.valid_metric]

    # -- state ----------------------------------------------------------------

    def snapshot(self, include_rng: bool = True) -> Checkpoint:
        arrays = self.params.state_arrays()
        arrays["last_active"] = self.store.last_active.copy()
        rng_state = self.rng.getstate() if include_rng else None
        return Checkpoint(
            tables=self.tables.to_dict(),
            node_ids=list(self.store.ids),
            node_types=list(self.store.types),
            dim=self.params.dim,
            arrays=arrays,
            adam=asdict(self.params.adam),
            rng_state=rng_state,
            seed=self.seed,
            hyperparams=asdict(self.hp),
            extra={
                "schemas": [s.format(self.tables) for s in self.schemas],
                "relation_types": {str(r): sorted(map(list, pairs)) for r, pairs in sorted(self.relation_types.items())},
                "neighbor_cap": self.store.neighbor_cap,
            },
        )

    def restore(self, ckpt: Checkpoint, rng: bool = True) -> None:
        """Load learnable, optimizer and activity state (and rng state if asked)."""
        if ckpt.dim != self.params.dim:
            raise ConfigError(f"checkpoint dimension {ckpt.dim} != model dimension {self.params.dim}")
        n = len(ckpt.node_ids)
        if ckpt.node_ids != self.store.ids[:n]:
            raise ConfigError("checkpoint node table does not match the graph")
        self.params.load_state_arrays(ckpt.arrays, ckpt.node_ids)
        self.params.adam = AdamState(**ckpt.adam)
        # nodes that arrived after the snapshot get their deterministic initial state
        self._sync_nodes()
        self.store.last_active[:n] = ckpt.arrays["last_active"]
        if rng and ckpt.rng_state is not None:
            try:
                self.rng.setstate(ckpt.rng_state)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad rng state in checkpoint: {exc}") from None

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "Supa":
        """Rebuild a model (graph without edges) from a checkpoint."""
        tables = TypeTables.from_dict(ckpt.tables)
        schemas = [parse_schema(s, tables) for s in ckpt.extra.get("schemas", [])]
        hp = HyperParams(**ckpt.hyperparams)
        model = cls(tables, schemas, hp, seed=ckpt.seed, adam=AdamState(**ckpt.adam),
                    neighbor_cap=ckpt.extra.get("neighbor_cap"))
        last_active = ckpt.arrays["last_active"]
        for i, (node_id, type_id) in enumerate(zip(ckpt.node_ids, ckpt.node_types)):
            model.store.add_node(NodeRef(node_id, type_id), float(last_active[i]))
        for r, pairs in ckpt.extra.get("relation_types", {}).items():
            model.relation_types[int(r)] = {tuple(p) for p in pairs}
        model._sync_nodes()
        model.restore(ckpt)
        return model
