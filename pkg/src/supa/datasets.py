"""Conversion of public datasets into the tab-separated edge-list format."""

from __future__ import annotations

import csv
import gzip
import importlib.util
from datetime import datetime
from pathlib import Path

from .errors import DataError
from .graph import NodeRef, TemporalEdge, TypeTables, write_edge_list

TIME_UNITS = {"seconds": 1.0, "minutes": 60.0, "hours": 3600.0, "days": 86400.0}

COLLEGEMSG_FORMAT = "%m/%d/%y %I:%M %p"


def bundled_collegemsg() -> Path:
    """Location of the CollegeMsg (UC Irvine messages) file shipped with networkx-temporal.

    The package itself is not imported, only its data file is located.
    """
    spec = importlib.util.find_spec("networkx_temporal")
    if spec is None or not spec.submodule_search_locations:
        raise DataError("networkx-temporal is not installed; pass --source with a local copy "
                        "or install the 'data' extra")
    root = Path(next(iter(spec.submodule_search_locations)))
    path = root / "generators" / "datasets" / "collegemsg" / "collegemsg.csv.gz"
    if not path.is_file():
        raise DataError(f"CollegeMsg data not found under {root}")
    return path


def read_collegemsg(path: str | Path, time_unit: str = "days") -> tuple[list[TemporalEdge], TypeTables]:
    """Parse ``Source,Target,Timestamp`` rows (gzip or plain) into user-user message edges.

    Timestamps become elapsed ``time_unit`` since the first message.
    """
    if time_unit not in TIME_UNITS:
        raise DataError(f"unknown time unit {time_unit!r}; choose from {sorted(TIME_UNITS)}")
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    rows = []
    with opener(path, "rt", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 comma-separated fields")
            try:
                when = datetime.strptime(row[2].strip(), COLLEGEMSG_FORMAT)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad timestamp {row[2]!r}") from None
            rows.append((row[0].strip(), row[1].strip(), when))
    if not rows:
        raise DataError(f"{path}: no edges")
    # stable sort keeps file order among messages sent in the same minute
    rows.sort(key=lambda r: r[2])
    start = rows[0][2]
    scale = TIME_UNITS[time_unit]
    tables = TypeTables(["U"], ["C"])
    edges = [TemporalEdge(NodeRef(src, 0), NodeRef(dst, 0), 0, (when - start).total_seconds() / scale)
             for src, dst, when in rows]
    return edges, tables


def prepare_uci(out: str | Path, source: str | Path | None = None, time_unit: str = "days") -> int:
    """Write the UCI messages edge list to ``out``; returns the edge count."""
    edges, tables = read_collegemsg(source if source is not None else bundled_collegemsg(), time_unit)
    write_edge_list(out, edges, tables)
    return len(edges)
