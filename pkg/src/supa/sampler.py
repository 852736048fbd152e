"""Influenced-graph sampling: schema-conformant walks around a new edge."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

from .graph import GraphStore
from .schema import MetapathSchema


class PathStep(NamedTuple):
    node: int
    in_edge_type: int | None = None
    in_edge_timestamp: float | None = None


@dataclass
class InfluencedGraph:
    paths_from_u: list[list[PathStep]] = field(default_factory=list)
    paths_from_v: list[list[PathStep]] = field(default_factory=list)

    def __iter__(self):
        yield from self.paths_from_u
        yield from self.paths_from_v

    @property
    def n_steps(self) -> int:
        return sum(len(p) - 1 for p in self)


def sample_path(store: GraphStore, start: int, schema: MetapathSchema, length: int, rng,
                until: float | None = None) -> list[PathStep]:
    """One walk of at most ``length`` nodes following ``schema``.

    The walk stops early at a node with no qualifying neighbor.  ``until``
    hides edges newer than the given time.
    """
    if store.types[start] != schema.head:
        raise ValueError(f"node {store.ids[start]!r} does not match schema head type")
    if length < 1:
        raise ValueError("walk length must be >= 1")
    path = [PathStep(start)]
    node = start
    hops = schema.hops
    period = len(hops)
    draw = store.sample_neighbor
    for i in range(length - 1):
        node_type, edge_types = hops[i % period]
        entry = draw(node, node_type, edge_types, rng, until)
        if entry is None:
            break
        node = entry[0]
        path.append(PathStep(node, entry[1], entry[2]))
    return path


def sample_influenced_graph(store: GraphStore, u: int, v: int, now: float,
                            schemas: dict[int, list[MetapathSchema]], k: int, length: int,
                            rng) -> InfluencedGraph:
    """``k`` walks from each endpoint of the edge ``(u, v)`` established at ``now``.

    Each walk draws its schema uniformly among those whose head type matches
    the start node; a node with no eligible schema gets no walks.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    out = InfluencedGraph()
    for start, paths in ((u, out.paths_from_u), (v, out.paths_from_v)):
        eligible = schemas.get(store.types[start])
        if not eligible:
            continue
        for _ in range(k):
            schema = eligible[0] if len(eligible) == 1 else eligible[int(rng.random() * len(eligible))]
            paths.append(sample_path(store, start, schema, length, rng, until=now))
    return out
