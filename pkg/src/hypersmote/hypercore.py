"""Immutable hypergraph with a binary incidence matrix.

Orientation convention: the incidence matrix has shape
``(num_hyperedges, num_nodes)``; entry ``(e, v)`` is 1 iff node ``v``
belongs to hyperedge ``e``. Row access gives hyperedge members, column
access gives the hyperedges incident to a node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = ["Hypergraph", "NodeNeighborhood", "build", "neighbors", "append_node"]


class HypergraphError(ValueError):
    pass


@dataclass(frozen=True)
class NodeNeighborhood:
    center: int
    neighbors: frozenset[int]


@dataclass(frozen=True, eq=False)
class Hypergraph:
    """Hypergraph over dense node ids ``0..num_nodes-1``.

    Use :func:`build` rather than the constructor; it validates and
    deduplicates member lists.
    """

    num_nodes: int
    incidence: sp.csr_matrix = field(repr=False)

    @property
    def num_hyperedges(self) -> int:
        return self.incidence.shape[0]

    @cached_property
    def _by_node(self) -> sp.csr_matrix:
        return self.incidence.T.tocsr()

    def members(self, e: int) -> np.ndarray:
        inc = self.incidence
        return inc.indices[inc.indptr[e]:inc.indptr[e + 1]]

    def incident(self, v: int) -> np.ndarray:
        """Ids of the hyperedges containing node ``v`` (ascending)."""
        self._check_node(v)
        col = self._by_node
        return col.indices[col.indptr[v]:col.indptr[v + 1]]

    def hyperedges(self) -> list[np.ndarray]:
        return [self.members(e) for e in range(self.num_hyperedges)]

    @cached_property
    def edge_degrees(self) -> np.ndarray:
        return np.diff(self.incidence.indptr)

    @cached_property
    def node_degrees(self) -> np.ndarray:
        return np.diff(self._by_node.indptr)

    @cached_property
    def singleton_edges(self) -> np.ndarray:
        """Ids of hyperedges with a single member (legal, but flagged)."""
        return np.flatnonzero(self.edge_degrees == 1)

    @cached_property
    def isolated_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_degrees == 0)

    @cached_property
    def edge_pool(self) -> sp.csr_matrix:
        """Row-stochastic ``|E| x |V|`` operator: member mean per hyperedge."""
        inv = 1.0 / self.edge_degrees
        return sp.diags(inv) @ self.incidence.astype(np.float64)

    @cached_property
    def node_pool(self) -> sp.csr_matrix:
        """``|V| x |E|`` operator: mean over incident hyperedges.

        Rows of isolated nodes are all-zero, so they aggregate to zero.
        """
        deg = self.node_degrees.astype(np.float64)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        return (sp.diags(inv) @ self._by_node.astype(np.float64)).tocsr()

    def dense(self) -> np.ndarray:
        return self.incidence.toarray().astype(np.int8)

    def neighbors(self, v: int) -> NodeNeighborhood:
        return neighbors(self, v)

    def append_node(self, attach_to: int) -> "Hypergraph":
        return append_node(self, attach_to)

    def append_nodes(self, attach_to: Sequence[int]) -> "Hypergraph":
        """Append one degree-1 node per entry of ``attach_to``, in order."""
        attach_to = np.asarray(attach_to, dtype=np.int64)
        if attach_to.size and (attach_to.min() < 0 or attach_to.max() >= self.num_hyperedges):
            raise HypergraphError("attachment hyperedge id out of range")
        n_new = attach_to.size
        extra = sp.csr_matrix(
            (np.ones(n_new, dtype=np.int8), (attach_to, np.arange(n_new))),
            shape=(self.num_hyperedges, n_new),
        )
        inc = sp.hstack([self.incidence, extra], format="csr", dtype=np.int8)
        inc.sort_indices()
        return Hypergraph(self.num_nodes + n_new, inc)

    def _check_node(self, v: int) -> None:
        if not 0 <= v < self.num_nodes:
            raise HypergraphError(f"node id {v} out of range [0, {self.num_nodes})")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Hypergraph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and self.incidence.shape == other.incidence.shape
            and np.array_equal(self.incidence.indptr, other.incidence.indptr)
            and np.array_equal(self.incidence.indices, other.incidence.indices)
        )

    __hash__ = None  # type: ignore[assignment]


def build(num_nodes: int, hyperedges: Iterable[Iterable[int]]) -> Hypergraph:
    """Construct a hypergraph from member lists.

    Duplicate ids within one hyperedge collapse (set semantics). Empty
    hyperedges and out-of-range ids raise :class:`HypergraphError`.
    """
    if num_nodes < 0:
        raise HypergraphError("num_nodes must be non-negative")
    rows, cols = [], []
    n_edges = 0
    for e, members in enumerate(hyperedges):
        ids = np.unique(np.fromiter((int(m) for m in members), dtype=np.int64))
        if ids.size == 0:
            raise HypergraphError(f"hyperedge {e} is empty")
        if ids[0] < 0 or ids[-1] >= num_nodes:
            raise HypergraphError(f"hyperedge {e} has node id outside [0, {num_nodes})")
        rows.append(np.full(ids.size, e, dtype=np.int64))
        cols.append(ids)
        n_edges = e + 1
    if n_edges == 0:
        raise HypergraphError("hyperedge list is empty")
    rows_a, cols_a = np.concatenate(rows), np.concatenate(cols)
    inc = sp.csr_matrix(
        (np.ones(rows_a.size, dtype=np.int8), (rows_a, cols_a)), shape=(n_edges, num_nodes)
    )
    inc.sort_indices()
    return Hypergraph(num_nodes, inc)


def neighbors(g: Hypergraph, v: int) -> NodeNeighborhood:
    """Nodes sharing at least one hyperedge with ``v``, excluding ``v``."""
    edges = g.incident(v)
    if edges.size == 0:
        return NodeNeighborhood(v, frozenset())
    inc = g.incidence
    found = np.unique(np.concatenate([inc.indices[inc.indptr[e]:inc.indptr[e + 1]] for e in edges]))
    return NodeNeighborhood(v, frozenset(int(u) for u in found if u != v))


def append_node(g: Hypergraph, attach_to: int) -> Hypergraph:
    """Return a copy of ``g`` with one extra node inside hyperedge ``attach_to``."""
    if not 0 <= attach_to < g.num_hyperedges:
        raise HypergraphError(f"hyperedge id {attach_to} out of range [0, {g.num_hyperedges})")
    return g.append_nodes([attach_to])
