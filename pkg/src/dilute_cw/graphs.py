"""Directed Erdos-Renyi graph realizations and replica seed derivation.

Every ordered pair (i, j), the diagonal included, carries an independent
Bernoulli(p) edge indicator; (i, j) and (j, i) are never symmetrized.

Randomness:

* graphs are drawn from numpy's counter-based ``Philox`` bit generator keyed by
  ``SeedSequence(seed)``; uniforms are consumed row by row in C order;
* replica seeds come from :func:`derive_replica_seed`, the SplitMix64 output
  function applied to ``master + (index + 1) * 0x9E3779B97F4A7C15 (mod 2**64)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .model import ModelParams

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

_ROW_CHUNK = 1 << 22  # uniforms drawn per batch while sampling


def derive_replica_seed(master: int, index: int) -> int:
    """64-bit seed of replica ``index`` under ``master``; a bijection in each argument."""
    if index < 0:
        raise ValueError("replica index must be non-negative")
    z = (master + (index + 1) * GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def derive_replica_seeds(master: int, indices) -> np.ndarray:
    """Vectorized :func:`derive_replica_seed` (uint64 wrap-around arithmetic)."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(master & MASK64) + (idx + np.uint64(1)) * np.uint64(GOLDEN_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class ReplicaPlan:
    master_seed: int
    replica_count: int

    def __post_init__(self):
        if self.replica_count < 1:
            raise ValueError("replica_count must be positive")
        object.__setattr__(self, "master_seed", int(self.master_seed) & MASK64)

    @cached_property
    def derived_seeds(self) -> tuple[int, ...]:
        return tuple(derive_replica_seed(self.master_seed, k) for k in range(self.replica_count))

    def child(self, tag: int) -> "ReplicaPlan":
        """Independent plan for a sub-experiment (e.g. one N of a sweep)."""
        return ReplicaPlan(derive_replica_seed(self.master_seed ^ 0x5DEECE66D, tag), self.replica_count)


@dataclass(frozen=True, eq=False)
class GraphSample:
    """Edge indicators of one directed graph, bit-packed row-wise.

    ``rows[i]`` holds the out-edges of node ``i`` packed little-endian: bit ``j``
    of the row is ``eps_ij``.
    """

    n: int
    rows: np.ndarray
    edge_count: int = field(default=-1)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.uint8)
        if rows.shape != (self.n, (self.n + 7) // 8):
            raise ValueError(f"packed rows have shape {rows.shape}, expected ({self.n}, {(self.n + 7) // 8})")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        count = int(np.bitwise_count(rows).sum())
        if self.edge_count not in (-1, count):
            raise ValueError(f"edge_count {self.edge_count} disagrees with {count} set entries")
        object.__setattr__(self, "edge_count", count)

    @classmethod
    def from_dense(cls, adj) -> "GraphSample":
        adj = np.asarray(adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        return cls(adj.shape[0], np.packbits(adj, axis=1, bitorder="little"))

    @classmethod
    def from_edges(cls, n: int, edges) -> "GraphSample":
        adj = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            adj[i, j] = True
        return cls.from_dense(adj)

    @classmethod
    def complete(cls, n: int) -> "GraphSample":
        return cls.from_dense(np.ones((n, n), dtype=bool))

    @classmethod
    def empty(cls, n: int) -> "GraphSample":
        return cls.from_dense(np.zeros((n, n), dtype=bool))

    def dense(self) -> np.ndarray:
        return np.unpackbits(self.rows, axis=1, count=self.n, bitorder="little").astype(bool)

    def has_edge(self, i: int, j: int) -> bool:
        return bool((self.rows[i, j >> 3] >> (j & 7)) & 1)

    def edges(self) -> np.ndarray:
        return np.argwhere(self.dense())

    @cached_property
    def symmetric_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR of W = eps + eps^T with the diagonal removed (entries 1 or 2).

        This is the neighbourhood structure of the single-site local field.
        """
        adj = self.dense()
        w = adj.astype(np.int8) + adj.T.astype(np.int8)
        np.fill_diagonal(w, 0)
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        nz_rows, nz_cols = np.nonzero(w)
        np.cumsum(np.bincount(nz_rows, minlength=self.n), out=indptr[1:])
        weights = w[nz_rows, nz_cols].astype(np.int64)
        return indptr, nz_cols.astype(np.int64), weights

    def to_text(self, path) -> None:
        """Write ``N edge_count`` then one ``i j`` line per edge."""
        lines = [f"{self.n} {self.edge_count}"]
        lines += [f"{i} {j}" for i, j in self.edges()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_text(cls, path) -> "GraphSample":
        lines = Path(path).read_text().split("\n")
        n, count = (int(v) for v in lines[0].split())
        edges = [tuple(int(v) for v in ln.split()) for ln in lines[1:] if ln.strip()]
        graph = cls.from_edges(n, edges)
        if graph.edge_count != count:
            raise ValueError(f"header says {count} edges, file lists {graph.edge_count}")
        return graph


def sample_graph(params: ModelParams, seed: int) -> GraphSample:
    """Draw eps_ij ~ Bernoulli(p) independently for all N**2 ordered pairs."""
    n, p = params.n, params.p
    width = (n + 7) // 8
    if p >= 1.0:
        return GraphSample.complete(n)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed) & MASK64)))
    rows = np.empty((n, width), dtype=np.uint8)
    step = max(1, _ROW_CHUNK // n)
    for start in range(0, n, step):
        stop = min(n, start + step)
        block = rng.random((stop - start, n)) < p
        rows[start:stop] = np.packbits(block, axis=1, bitorder="little")
    return GraphSample(n, rows)
