"""Evolving typed multiplex graph with recency-ordered adjacency.

Nodes are addressed by a dense integer index assigned on first sight; the
string id and node type are kept alongside.  Every edge is stored on both
endpoints (undirected traversal) and the entry remembers which side it was
seen from.  Per-node adjacency is kept in ascending timestamp order, which
makes "oldest entry" eviction, staleness pruning and "edges no newer than t"
queries cheap.
"""

from __future__ import annotations

import bisect
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

NOISE_POWER = 0.75


@dataclass
class TypeTables:
    """Ordered node-type and edge-type names; indices never change once issued."""

    node_types: list[str] = field(default_factory=list)
    edge_types: list[str] = field(default_factory=list)
    frozen: bool = False

    def __post_init__(self):
        for names in (self.node_types, self.edge_types):
            if len(set(names)) != len(names):
                raise ConfigError(f"duplicate type names in {names}")

    def node_type_id(self, name: str) -> int:
        return self._lookup(self.node_types, name, "node")

    def edge_type_id(self, name: str) -> int:
        return self._lookup(self.edge_types, name, "edge")

    def _lookup(self, names: list[str], name: str, kind: str) -> int:
        try:
            return names.index(name)
        except ValueError:
            if self.frozen:
                raise ConfigError(f"unknown {kind} type {name!r}") from None
            names.append(name)
            return len(names) - 1

    def to_dict(self) -> dict:
        return {"node_types": list(self.node_types), "edge_types": list(self.edge_types)}

    @classmethod
    def from_dict(cls, data: dict, frozen: bool = True) -> "TypeTables":
        return cls(list(data["node_types"]), list(data["edge_types"]), frozen=frozen)


class NodeRef(NamedTuple):
    id: str
    type_id: int


class TemporalEdge(NamedTuple):
    src: NodeRef
    dst: NodeRef
    edge_type: int
    timestamp: float


class IndexedEdge(NamedTuple):
    """An edge after its endpoints have been resolved to store indices."""

    u: int
    v: int
    edge_type: int
    timestamp: float


class AdjacencyEntry(NamedTuple):
    neighbor: int
    edge_type: int
    timestamp: float
    outgoing: bool


class NoiseTable:
    """Sampler over items with probability proportional to ``count ** power``.

    Weights are kept per item; the cumulative table used for drawing is
    rebuilt lazily on the first draw after a change.  Within a training
    batch the graph does not change, so the rebuild is paid once per batch
    and every draw is a binary search.
    """

    def __init__(self, power: float = NOISE_POWER):
        self.power = power
        self._weights: list[float] = []
        self.items: list[int] = []
        self._pos: dict[int, int] = {}
        self._cum: list[float] | None = None

    def __len__(self):
        return len(self.items)

    def add(self, item: int) -> None:
        if item in self._pos:
            return
        self._pos[item] = len(self.items)
        self.items.append(item)
        self._weights.append(0.0)

    def set_count(self, item: int, count: int) -> None:
        pos = self._pos[item]
        weight = float(count) ** self.power if count > 0 else 0.0
        if weight != self._weights[pos]:
            self._weights[pos] = weight
            self._cum = None

    def weight(self, item: int) -> float:
        pos = self._pos.get(item)
        return 0.0 if pos is None else self._weights[pos]

    def _cumulative(self) -> list[float]:
        if self._cum is None:
            self._cum = list(itertools.accumulate(self._weights))
        return self._cum

    @property
    def total(self) -> float:
        cum = self._cumulative()
        return cum[-1] if cum else 0.0

    def sample(self, n: int, rng, exclude: Iterable[int] = ()) -> list[int]:
        """Draw ``n`` items i.i.d., rejecting anything in ``exclude``."""
        if n <= 0 or not self.items:
            return []
        exclude = set(exclude)
        cum = self._cumulative()
        total = cum[-1]
        allowed = total - sum(self.weight(x) for x in exclude)
        if total <= 0.0 or allowed <= total * 1e-12:
            return []
        out: list[int] = []
        rand = rng.random
        items = self.items
        last = len(items) - 1
        bisect_right = bisect.bisect_right
        tries = 0
        while len(out) < n:
            tries += 1
            if tries > 1000 * n:
                log.warning("noise table rejection limit hit; returning %d of %d", len(out), n)
                break
            # zero-weight items have zero-width intervals and are never hit
            item = items[min(bisect_right(cum, rand() * total), last)]
            if item in exclude:
                continue
            out.append(item)
        return out


class FlatGraph(NamedTuple):
    """Array form of a store for compiled loops (CSR adjacency, noise tables).

    Adjacency of node ``i`` is ``[indptr[i], indptr[i+1])`` in ascending time
    order.  Noise tables are concatenated by node type: the items and
    cumulative weights of type ``t`` sit at ``[type_ptr[t], type_ptr[t+1])``.
    """

    indptr: np.ndarray
    neighbor: np.ndarray
    edge_type: np.ndarray
    timestamp: np.ndarray
    node_type: np.ndarray
    type_ptr: np.ndarray
    noise_items: np.ndarray
    noise_cum: np.ndarray
    node_weight: np.ndarray


class GraphStore:
    """Adjacency store for a dynamic multiplex heterogeneous graph.

    ``neighbor_cap`` (eta) bounds the number of adjacency entries kept per
    node; the oldest entry is evicted first.  ``None`` disables the cap.
    ``version`` changes whenever nodes or adjacency change.
    """

    def __init__(self, tables: TypeTables, neighbor_cap: int | None = None):
        if neighbor_cap is not None and neighbor_cap < 1:
            raise ConfigError("neighbor cap must be a positive integer or None")
        self.tables = tables
        self.neighbor_cap = neighbor_cap
        self.ids: list[str] = []
        self.types: list[int] = []
        self.index: dict[str, int] = {}
        self._active = np.zeros(64)
        self._adj: list[list[AdjacencyEntry]] = []
        self._times: list[list[float]] = []
        self._cache: list[dict] = []
        self._by_type: dict[int, list[int]] = {}
        self._noise: dict[int, NoiseTable] = {}
        self._latest = -math.inf
        self.n_edges = 0
        self.out_of_order = 0
        self.lookups = 0
        self.version = 0
        self._flat: tuple[int, FlatGraph] | None = None

    def __len__(self):
        return len(self.ids)

    @property
    def last_active(self) -> np.ndarray:
        """Per-node time of last interaction (a live view, writable)."""
        return self._active[: len(self.ids)]

    # -- nodes -------------------------------------------------------------

    def add_node(self, ref: NodeRef, timestamp: float) -> tuple[int, bool]:
        """Register ``ref`` if unseen; returns ``(index, created)``."""
        idx = self.index.get(ref.id)
        if idx is not None:
            if self.types[idx] != ref.type_id:
                raise DataError(
                    f"node {ref.id!r} seen with types {self.tables.node_types[self.types[idx]]!r}"
                    f" and {self.tables.node_types[ref.type_id]!r}"
                )
            return idx, False
        if not 0 <= ref.type_id < len(self.tables.node_types):
            raise ConfigError(f"node type index {ref.type_id} out of range")
        idx = len(self.ids)
        if idx == self._active.shape[0]:
            self._active = np.concatenate([self._active, np.zeros(idx)])
        self.ids.append(ref.id)
        self.types.append(ref.type_id)
        self.index[ref.id] = idx
        # first mention defines t', so the first active interval is zero
        self._active[idx] = float(timestamp)
        self.version += 1
        self._adj.append([])
        self._times.append([])
        self._cache.append({})
        self._by_type.setdefault(ref.type_id, []).append(idx)
        noise = self._noise.get(ref.type_id)
        if noise is None:
            noise = self._noise[ref.type_id] = NoiseTable()
        noise.add(idx)
        return idx, True

    def node(self, idx: int) -> NodeRef:
        return NodeRef(self.ids[idx], self.types[idx])

    def lookup(self, node_id: str) -> int:
        try:
            return self.index[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def nodes_of_type(self, type_id: int) -> list[int]:
        return self._by_type.get(type_id, [])

    def last_interaction_time(self, idx: int) -> float:
        if not 0 <= idx < len(self.ids):
            raise KeyError(f"unknown node index {idx}")
        return float(self._active[idx])

    def mark_active(self, idx: int, timestamp: float) -> None:
        self._active[idx] = float(timestamp)

    # -- edges -------------------------------------------------------------

    def add_edge(self, edge: TemporalEdge) -> IndexedEdge:
        if not 0 <= edge.edge_type < len(self.tables.edge_types):
            raise ConfigError(f"edge type index {edge.edge_type} out of range")
        t = float(edge.timestamp)
        if not t >= 0.0:
            raise DataError(f"edge timestamp must be non-negative, got {edge.timestamp!r}")
        if t < self._latest:
            self.out_of_order += 1
            if self.out_of_order <= 5:
                log.warning("edge at t=%g arrived after t=%g", t, self._latest)
        else:
            self._latest = t
        u, _ = self.add_node(edge.src, t)
        v, _ = self.add_node(edge.dst, t)
        r = edge.edge_type
        self._insert(u, AdjacencyEntry(v, r, t, True))
        if v != u:
            self._insert(v, AdjacencyEntry(u, r, t, False))
        self.n_edges += 1
        return IndexedEdge(u, v, r, t)

    def _insert(self, idx: int, entry: AdjacencyEntry) -> None:
        times = self._times[idx]
        adj = self._adj[idx]
        pos = bisect.bisect_right(times, entry.timestamp)
        times.insert(pos, entry.timestamp)
        adj.insert(pos, entry)
        cap = self.neighbor_cap
        if cap is not None and len(adj) > cap:
            del adj[: len(adj) - cap]
            del times[: len(times) - cap]
        self._touched(idx)

    def _touched(self, idx: int) -> None:
        self.version += 1
        self._cache[idx] = {}
        self._noise[self.types[idx]].set_count(idx, len(self._adj[idx]))

    def neighbors(self, idx: int) -> list[AdjacencyEntry]:
        """Adjacency of ``idx``, most recent first."""
        return self._adj[idx][::-1]

    def degree(self, idx: int) -> int:
        return len(self._adj[idx])

    def sample_neighbor(self, idx: int, node_type: int, edge_types: frozenset[int], rng,
                        until: float | None = None) -> AdjacencyEntry | None:
        """Uniform draw among entries of ``idx`` matching the type constraints.

        ``until`` restricts the draw to entries with ``timestamp <= until``.
        """
        self.lookups += 1
        key = (node_type, edge_types)
        cached = self._cache[idx].get(key)
        if cached is None:
            types = self.types
            entries = [e for e in self._adj[idx]
                       if types[e.neighbor] == node_type and e.edge_type in edge_types]
            cached = (entries, [e.timestamp for e in entries])
            self._cache[idx][key] = cached
        entries, times = cached
        n = len(entries) if until is None else bisect.bisect_right(times, until)
        if n == 0:
            return None
        return entries[int(rng.random() * n)]

    def prune_outdated(self, now: float, tau: float) -> int:
        """Drop entries older than ``tau`` relative to ``now``; returns entries removed."""
        if not tau > 0:
            raise ConfigError("tau must be positive")
        cutoff = now - tau
        removed = 0
        for idx, times in enumerate(self._times):
            # entries with now - t > tau, i.e. t < cutoff; ascending order makes them a prefix
            k = bisect.bisect_left(times, cutoff)
            if k:
                del times[:k]
                del self._adj[idx][:k]
                removed += k
                self._touched(idx)
        return removed

    def sample_negatives(self, node_type: int, n: int, rng, exclude: Iterable[int] = ()) -> list[int]:
        """Nodes of ``node_type`` drawn with probability proportional to degree**0.75."""
        noise = self._noise.get(node_type)
        if noise is None:
            return []
        return noise.sample(n, rng, exclude)

    def noise_weight(self, idx: int) -> float:
        return self._noise[self.types[idx]].weight(idx)

    def flat(self) -> FlatGraph:
        """Array view of the current state, rebuilt only after a change."""
        if self._flat is not None and self._flat[0] == self.version:
            return self._flat[1]
        n = len(self.ids)
        sizes = np.fromiter((len(a) for a in self._adj), dtype=np.int64, count=n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(sizes, out=indptr[1:])
        entries = [e for adj in self._adj for e in adj]
        table = np.array(entries, dtype=np.float64).reshape(-1, 4)
        n_types = len(self.tables.node_types)
        type_ptr = np.zeros(n_types + 1, dtype=np.int64)
        items: list[int] = []
        cum: list[float] = []
        weight = np.zeros(n)
        for t in range(n_types):
            noise = self._noise.get(t)
            if noise is not None and len(noise):
                items.extend(noise.items)
                cum.extend(noise._cumulative())
                weight[noise.items] = noise._weights
            type_ptr[t + 1] = len(items)
        flat = FlatGraph(
            indptr=indptr,
            neighbor=table[:, 0].astype(np.int64),
            edge_type=table[:, 1].astype(np.int64),
            timestamp=np.ascontiguousarray(table[:, 2]),
            node_type=np.array(self.types, dtype=np.int64),
            type_ptr=type_ptr,
            noise_items=np.array(items, dtype=np.int64),
            noise_cum=np.array(cum, dtype=np.float64),
            node_weight=weight,
        )
        self._flat = (self.version, flat)
        return flat


def read_edge_list(path: str | Path, tables: TypeTables | None = None) -> tuple[list[TemporalEdge], TypeTables]:
    """Parse a tab-separated edge list.

    Columns: ``src_id src_type dst_id dst_type edge_type timestamp``; lines
    starting with ``#`` and blank lines are skipped.  When ``tables`` is
    frozen, unknown type names raise :class:`ConfigError`.
    """
    tables = tables if tables is not None else TypeTables()
    edges: list[TemporalEdge] = []
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise DataError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
            src, src_type, dst, dst_type, etype, ts = fields
            try:
                t = float(ts)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad timestamp {ts!r}") from None
            if not t >= 0.0 or math.isinf(t):
                raise DataError(f"{path}:{lineno}: timestamp must be finite and non-negative")
            try:
                edges.append(TemporalEdge(
                    NodeRef(src, tables.node_type_id(src_type)),
                    NodeRef(dst, tables.node_type_id(dst_type)),
                    tables.edge_type_id(etype),
                    t,
                ))
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return edges, tables


def write_edge_list(path: str | Path, edges: Iterable[TemporalEdge], tables: TypeTables) -> None:
    nt, et = tables.node_types, tables.edge_types
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("# src_id\tsrc_type\tdst_id\tdst_type\tedge_type\ttimestamp\n")
        for e in edges:
            fh.write(f"{e.src.id}\t{nt[e.src.type_id]}\t{e.dst.id}\t{nt[e.dst.type_id]}"
                     f"\t{et[e.edge_type]}\t{e.timestamp!r}\n")
