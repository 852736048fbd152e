"""Multiplex metapath schemas.

Text form, one schema per line::

    User -{click,like}- Video -{upload}- Author

Node types alternate with brace-delimited edge-type sets.  Schemas are
symmetrized on load so that a walk of any length can cycle through them,
re-entering at the head once it reaches the tail.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .graph import TypeTables

_HOP = re.compile(r"\s*-\{([^{}]*)\}-\s*")


@dataclass(frozen=True)
class MetapathSchema:
    node_types: tuple[int, ...]
    edge_type_sets: tuple[frozenset[int], ...]

    def __post_init__(self):
        if len(self.node_types) < 2:
            raise ConfigError("a schema needs at least two node types")
        if len(self.edge_type_sets) != len(self.node_types) - 1:
            raise ConfigError("a schema needs exactly one edge-type set per hop")
        if any(not s for s in self.edge_type_sets):
            raise ConfigError("empty edge-type set in schema")
        # constraints for walk positions 2, 3, ..., one period long
        period = len(self.node_types) - 1
        hops = tuple(self.position_constraints(i) for i in range(2, period + 2))
        object.__setattr__(self, "hops", hops)

    def __len__(self):
        return len(self.node_types)

    @property
    def head(self) -> int:
        return self.node_types[0]

    @property
    def is_symmetric(self) -> bool:
        return (self.node_types == self.node_types[::-1]
                and self.edge_type_sets == self.edge_type_sets[::-1])

    def position_constraints(self, i: int) -> tuple[int, frozenset[int] | None]:
        """Node type required at walk position ``i`` (1-based) and the edge
        types allowed on the hop into it (``None`` for the start)."""
        if i < 1:
            raise ValueError("walk positions start at 1")
        period = len(self.node_types) - 1
        node_type = self.node_types[(i - 1) % period]
        if i == 1:
            return node_type, None
        return node_type, self.edge_type_sets[(i - 2) % period]

    def format(self, tables: TypeTables) -> str:
        parts = [tables.node_types[self.node_types[0]]]
        for edges, node in zip(self.edge_type_sets, self.node_types[1:]):
            names = ",".join(tables.edge_types[e] for e in sorted(edges))
            parts.append(f"-{{{names}}}- {tables.node_types[node]}")
        return " ".join(parts)


def parse_schema(text: str, tables: TypeTables) -> MetapathSchema:
    pieces = _HOP.split(text.strip())
    # split yields node, edges, node, edges, ..., node
    if len(pieces) < 3 or len(pieces) % 2 == 0:
        raise ConfigError(f"cannot parse schema {text!r}")
    node_names = [p.strip() for p in pieces[0::2]]
    edge_specs = pieces[1::2]
    if any(not n or re.search(r"\s", n) for n in node_names):
        raise ConfigError(f"cannot parse schema {text!r}")
    node_types = tuple(tables.node_type_id(n) for n in node_names)
    edge_sets = []
    for spec in edge_specs:
        names = [s.strip() for s in spec.split(",") if s.strip()]
        if not names:
            raise ConfigError(f"empty edge-type set in schema {text!r}")
        edge_sets.append(frozenset(tables.edge_type_id(n) for n in names))
    return MetapathSchema(node_types, tuple(edge_sets))


def symmetrize(schema: MetapathSchema) -> MetapathSchema:
    """Mirror an asymmetric schema back onto its head type."""
    if schema.is_symmetric:
        return schema
    return MetapathSchema(
        schema.node_types + schema.node_types[-2::-1],
        schema.edge_type_sets + schema.edge_type_sets[::-1],
    )


def load_schemas(path: str | Path, tables: TypeTables) -> list[MetapathSchema]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"schema file not found: {path}")
    schemas = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            schemas.append(symmetrize(parse_schema(line, tables)))
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not schemas:
        raise ConfigError(f"no schemas in {path}")
    return schemas


def group_by_head(schemas: list[MetapathSchema]) -> dict[int, list[MetapathSchema]]:
    """Eligible schemas per starting node type (symmetrized)."""
    out: dict[int, list[MetapathSchema]] = {}
    for s in schemas:
        out.setdefault(s.head, []).append(symmetrize(s))
    return out
