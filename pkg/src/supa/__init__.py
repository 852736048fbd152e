"""Streaming relation-specific node embeddings for dynamic multiplex heterogeneous graphs."""

from .graph import GraphStore, NodeRef, TemporalEdge, TypeTables, read_edge_list
from .model import HyperParams, Supa
from .schema import load_schemas, parse_schema
from .trainer import TrainerConfig, run_inslearn

__version__ = "0.1.0"

__all__ = [
    "GraphStore", "NodeRef", "TemporalEdge", "TypeTables", "read_edge_list",
    "HyperParams", "Supa", "load_schemas", "parse_schema", "TrainerConfig", "run_inslearn",
]
