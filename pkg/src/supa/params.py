"""Learnable state, lazy AdamW and checkpoint files.

Per node: long-term memory, short-term memory (rows of ``h_long`` /
``h_short``).  Per (node, relation) pair actually encountered: a context
vector, a row of ``contexts`` found through the dense ``ctx_index`` table
(-1 where no context was allocated yet; the table holds only row numbers,
vectors stay lazy).  Per node type: the scalar ``alpha`` steering how fast
short-term memory fades.

Initial values are a pure function of ``(seed, node id, slot)``, so a node
gets the same starting vectors no matter when it is first seen.

Checkpoint layout (a zip archive, entries stored uncompressed with a fixed
timestamp so identical state gives identical bytes)::

    meta.json          format version, type tables, node ids/types, dim,
                       optimizer settings and step, hyperparameters,
                       rng state, context keys count
    <name>.npy         one numpy array per entry of CHECKPOINT_ARRAYS
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConfigError, TrainingError
from .rng import as_u64, fill_uniform

FORMAT_VERSION = 1
_ZIP_DATE = (2020, 1, 1, 0, 0, 0)

CHECKPOINT_ARRAYS = (
    "h_long", "h_short", "contexts", "alpha",
    "m_long", "v_long", "m_short", "v_short", "m_ctx", "v_ctx", "m_alpha", "v_alpha",
    "ctx_keys", "last_active",
)


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass
class AdamState:
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0


class _Table:
    """Row-growable matrix with capacity doubling."""

    def __init__(self, width: int, capacity: int = 64, dtype=np.float64, fill=0):
        self.fill = fill
        self.data = np.full((capacity, width), fill, dtype=dtype)
        self.n = 0

    def reserve(self, n: int) -> None:
        """Make room for ``n`` rows without changing the row count."""
        if n > self.data.shape[0]:
            cap = max(n, 2 * self.data.shape[0])
            new = np.full((cap, self.data.shape[1]), self.fill, dtype=self.data.dtype)
            new[: self.n] = self.data[: self.n]
            self.data = new

    def grow_to(self, n: int) -> None:
        if n <= self.n:
            return
        self.reserve(n)
        # rows past n may hold values from before a restore
        self.data[self.n:n] = self.fill
        self.n = n

    @property
    def view(self) -> np.ndarray:
        return self.data[: self.n]


class ParamStore:
    def __init__(self, dim: int, n_node_types: int, seed: int = 0, adam: AdamState | None = None):
        if dim < 1:
            raise ConfigError("embedding dimension must be >= 1")
        self.dim = dim
        self.seed = seed
        self.adam = adam if adam is not None else AdamState()
        self._long = _Table(dim)
        self._short = _Table(dim)
        self._m_long = _Table(dim)
        self._v_long = _Table(dim)
        self._m_short = _Table(dim)
        self._v_short = _Table(dim)
        self._ctx = _Table(dim)
        self._m_ctx = _Table(dim)
        self._v_ctx = _Table(dim)
        self.alpha = np.zeros((n_node_types, 1))
        self.m_alpha = np.zeros((n_node_types, 1))
        self.v_alpha = np.zeros((n_node_types, 1))
        self._ctx_index = _Table(1, dtype=np.int64, fill=-1)
        self._keys = _Table(2, dtype=np.int64)
        self._hash = _Table(1, dtype=np.uint64)
        self._seed = as_u64(seed)

    # -- views handed to the kernels ----------------------------------------

    @property
    def n_nodes(self) -> int:
        return self._long.n

    @property
    def h_long(self) -> np.ndarray:
        return self._long.view

    @property
    def h_short(self) -> np.ndarray:
        return self._short.view

    @property
    def contexts(self) -> np.ndarray:
        return self._ctx.view

    @property
    def n_contexts(self) -> int:
        return self._keys.n

    @property
    def ctx_keys(self) -> list[tuple[int, int]]:
        """Allocated (node, relation) pairs in row order."""
        return [(int(a), int(b)) for a, b in self._keys.view]

    @property
    def ctx_index(self) -> np.ndarray:
        """Dense (node, relation) -> context row table, -1 where unallocated."""
        return self._ctx_index.view

    @property
    def node_hash(self) -> np.ndarray:
        return self._hash.data[:, 0]

    def kernel_arrays(self) -> tuple[np.ndarray, ...]:
        """Full-capacity buffers in the order :func:`_kernels.train_step` takes them."""
        return (self._long.data, self._short.data, self._ctx.data, self.alpha,
                self._m_long.data, self._v_long.data, self._m_short.data, self._v_short.data,
                self._m_ctx.data, self._v_ctx.data, self.m_alpha, self.v_alpha)

    def reserve_contexts(self, n: int, n_relations: int) -> None:
        """Capacity for ``n`` context rows and an index covering ``n_relations``."""
        for t in (self._ctx, self._m_ctx, self._v_ctx, self._keys):
            t.reserve(n)
        self._widen(n_relations)

    def set_n_contexts(self, n: int) -> None:
        """Adopt rows appended in place by compiled code."""
        for t in (self._ctx, self._m_ctx, self._v_ctx, self._keys):
            t.n = n

    def _widen(self, n_relations: int) -> None:
        idx = self._ctx_index
        width = idx.data.shape[1]
        if n_relations > width:
            new = np.full((idx.data.shape[0], max(n_relations, 2 * width)), -1, dtype=np.int64)
            new[:, :width] = idx.data
            idx.data = new

    # -- initialisation -------------------------------------------------------

    def _init_vector(self, node_hash, a: int, b: int) -> np.ndarray:
        out = np.empty(self.dim)
        fill_uniform(self._seed, node_hash, a, b, 0.5 / self.dim, out)
        return out

    def init_node(self, idx: int, node_id: str) -> None:
        """Random long/short-term memories for node ``idx`` (must be the next index)."""
        if idx != self.n_nodes:
            raise RuntimeError(f"node {idx} initialised out of order or twice")
        n = idx + 1
        self._hash.grow_to(n)
        self._hash.data[idx, 0] = stable_hash(node_id)
        self._ctx_index.grow_to(n)
        for t in (self._long, self._short, self._m_long, self._v_long, self._m_short, self._v_short):
            t.grow_to(n)
        h = self._hash.data[idx, 0]
        self._long.data[idx] = self._init_vector(h, 0, 0)
        self._short.data[idx] = self._init_vector(h, 0, 1)

    def initial_context(self, idx: int, relation: int) -> np.ndarray:
        """The vector a (node, relation) context would be allocated with."""
        return self._init_vector(self._hash.data[idx, 0], 1, relation)

    def context_row(self, idx: int, relation: int) -> int:
        table = self._ctx_index.data
        if relation >= table.shape[1]:
            return -1
        return int(table[idx, relation])

    def ensure_context(self, idx: int, relation: int) -> int:
        if not 0 <= idx < self.n_nodes:
            raise KeyError(f"unknown node index {idx}")
        self._widen(relation + 1)
        table = self._ctx_index.data
        row = table[idx, relation]
        if row >= 0:
            return int(row)
        row = self._keys.n
        for t in (self._ctx, self._m_ctx, self._v_ctx, self._keys):
            t.grow_to(row + 1)
        self._ctx.data[row] = self.initial_context(idx, relation)
        self._keys.data[row] = (idx, relation)
        table[idx, relation] = row
        return row

    def context(self, idx: int, relation: int) -> np.ndarray:
        """Context vector without allocating; unseen pairs give their initial value."""
        row = self.context_row(idx, relation)
        if row < 0:
            return self.initial_context(idx, relation)
        return self._ctx.data[row]

    # -- optimisation ---------------------------------------------------------

    def apply_gradients(self, long: dict[int, np.ndarray] | None = None,
                        short: dict[int, np.ndarray] | None = None,
                        contexts: dict[tuple[int, int], np.ndarray] | None = None,
                        alpha: dict[int, float] | None = None) -> None:
        """One lazy AdamW step over exactly the parameters named in the maps."""
        groups = []
        for grads, table, m, v in (
            (long, self._long.data, self._m_long.data, self._v_long.data),
            (short, self._short.data, self._m_short.data, self._v_short.data),
        ):
            if grads:
                groups.append((table, m, v, list(grads), list(grads.values())))
        if contexts:
            rows = [self.ensure_context(*key) for key in contexts]
            groups.append((self._ctx.data, self._m_ctx.data, self._v_ctx.data, rows, list(contexts.values())))
        if alpha:
            groups.append((self.alpha, self.m_alpha, self.v_alpha, list(alpha),
                           [np.atleast_1d(g) for g in alpha.values()]))
        stacked = []
        for table, m, v, rows, grads in groups:
            g = np.asarray(np.stack([np.asarray(x, dtype=np.float64) for x in grads]), dtype=np.float64)
            if g.shape[1] != table.shape[1]:
                raise ValueError("gradient shape does not match parameter shape")
            if not np.all(np.isfinite(g)):
                raise TrainingError("non-finite gradient")
            stacked.append((table, m, v, np.asarray(rows, dtype=np.int64), g))
        self.adam.step += 1
        a = self.adam
        for table, m, v, rows, g in stacked:
            _kernels.adam_rows(table, m, v, rows, g, a.lr, a.beta1, a.beta2, a.eps,
                               a.weight_decay, a.step)

    # -- snapshots ------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        keys = self._keys.view.copy()
        return {
            "h_long": self.h_long.copy(), "h_short": self.h_short.copy(),
            "contexts": self.contexts.copy(), "alpha": self.alpha.copy(),
            "m_long": self._m_long.view.copy(), "v_long": self._v_long.view.copy(),
            "m_short": self._m_short.view.copy(), "v_short": self._v_short.view.copy(),
            "m_ctx": self._m_ctx.view.copy(), "v_ctx": self._v_ctx.view.copy(),
            "m_alpha": self.m_alpha.copy(), "v_alpha": self.v_alpha.copy(),
            "ctx_keys": keys,
        }

    def load_state_arrays(self, arrays: dict[str, np.ndarray], node_ids: list[str]) -> None:
        if arrays["h_long"].shape[1] != self.dim:
            raise ConfigError(f"checkpoint dimension {arrays['h_long'].shape[1]} != model dimension {self.dim}")
        n = arrays["h_long"].shape[0]
        if len(node_ids) != n:
            raise ConfigError("checkpoint node table does not match its parameter arrays")
        self._hash.n = 0
        self._hash.grow_to(n)
        self._hash.data[:n, 0] = [stable_hash(x) for x in node_ids]
        for name, table in (("h_long", self._long), ("h_short", self._short),
                            ("m_long", self._m_long), ("v_long", self._v_long),
                            ("m_short", self._m_short), ("v_short", self._v_short)):
            table.n = 0
            table.grow_to(n)
            table.data[:n] = arrays[name]
        keys = np.asarray(arrays["ctx_keys"], dtype=np.int64).reshape(-1, 2)
        m = len(keys)
        if m and (keys[:, 0].min() < 0 or keys[:, 0].max() >= n or keys[:, 1].min() < 0):
            raise ConfigError("checkpoint context keys out of range")
        for name, table in (("contexts", self._ctx), ("m_ctx", self._m_ctx),
                            ("v_ctx", self._v_ctx), ("ctx_keys", self._keys)):
            table.n = 0
            table.grow_to(m)
            table.data[:m] = arrays[name]
        index = self._ctx_index
        index.n = 0
        index.grow_to(n)
        if m:
            self._widen(int(keys[:, 1].max()) + 1)
            index.data[keys[:, 0], keys[:, 1]] = np.arange(m)
        if arrays["alpha"].shape != self.alpha.shape:
            raise ConfigError("checkpoint node-type count does not match")
        self.alpha[:] = arrays["alpha"]
        self.m_alpha[:] = arrays["m_alpha"]
        self.v_alpha[:] = arrays["v_alpha"]


@dataclass
class Checkpoint:
    """Complete, self-describing model state."""

    tables: dict
    node_ids: list[str]
    node_types: list[int]
    dim: int
    arrays: dict[str, np.ndarray]
    adam: dict
    rng_state: list | None
    seed: int
    hyperparams: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def meta(self) -> dict:
        return {
            "version": self.version, "tables": self.tables, "node_ids": self.node_ids,
            "node_types": self.node_types, "dim": self.dim, "adam": self.adam,
            "rng_state": self.rng_state, "seed": self.seed,
            "hyperparams": self.hyperparams, "extra": self.extra,
        }


def write_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_ZIP_DATE)
        zf.writestr(info, json.dumps(ckpt.meta(), sort_keys=True).encode("utf-8"))
        for name in CHECKPOINT_ARRAYS:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(ckpt.arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE), buf.getvalue())


def read_checkpoint(path: str | Path, expect_dim: int | None = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("version") != FORMAT_VERSION:
                raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
            arrays = {name: np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
                      for name in CHECKPOINT_ARRAYS}
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ConfigError(f"not a checkpoint file: {path} ({exc})") from None
    if expect_dim is not None and meta["dim"] != expect_dim:
        raise ConfigError(f"checkpoint dimension {meta['dim']} != expected {expect_dim}")
    return Checkpoint(
        tables=meta["tables"], node_ids=meta["node_ids"], node_types=meta["node_types"],
        dim=meta["dim"], arrays=arrays, adam=meta["adam"], rng_state=meta["rng_state"],
        seed=meta["seed"], hyperparams=meta["hyperparams"], extra=meta["extra"],
        version=meta["version"],
    )
