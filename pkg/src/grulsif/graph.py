"""Weighted undirected graphs, combinatorial Laplacians and SBM generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised for malformed graph input."""


@dataclass(frozen=True)
class Graph:
    """Immutable weighted undirected graph without self-loops.

    Each undirected edge is stored once in ``edges`` (with ``u < v``). Neighbour
    lists are exposed in CSR form (``indptr``, ``indices``, ``weights``) since the
    solver only ever iterates over neighbourhoods.
    """

    n_nodes: int
    edges: tuple
    degrees: np.ndarray = field(repr=False)
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    cluster_of: Optional[np.ndarray] = field(default=None, repr=False)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def neighbor_weights(self, v: int) -> np.ndarray:
        return self.weights[self.indptr[v]:self.indptr[v + 1]]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.weights, self.indices, self.indptr),
            shape=(self.n_nodes, self.n_nodes),
        )

    def without_edges(self) -> "Graph":
        """Edgeless graph on the same nodes (keeps cluster labels)."""
        return build_graph([], self.n_nodes, cluster_of=self.cluster_of)

    def clusters(self) -> list:
        if self.cluster_of is None:
            raise GraphError("graph carries no cluster labels")
        labels = np.unique(self.cluster_of)
        return [np.flatnonzero(self.cluster_of == c) for c in labels]


def build_graph(edge_list: Iterable, n_nodes: int, cluster_of=None) -> Graph:
    """Build a :class:`Graph` from ``(u, v[, weight])`` tuples.

    Raises
    ------
    GraphError
        On self-loops, duplicate undirected pairs, out-of-range indices or
        non-positive weights.
    """
    n_nodes = int(n_nodes)
    if n_nodes < 1:
        raise GraphError("n_nodes must be positive")
    seen = {}
    for item in edge_list:
        if len(item) == 2:
            u, v = item
            w = 1.0
        else:
            u, v, w = item
        u, v, w = int(u), int(v), float(w)
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise GraphError(f"edge ({u}, {v}) out of range for {n_nodes} nodes")
        if u == v:
            raise GraphError(f"self-loop at node {u}")
        if not (w > 0 and np.isfinite(w)):
            raise GraphError(f"edge ({u}, {v}) has invalid weight {w}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen[key] = w

    edges = tuple(sorted((u, v, w) for (u, v), w in seen.items()))
    rows = [u for u, v, _ in edges] + [v for u, v, _ in edges]
    cols = [v for u, v, _ in edges] + [u for u, v, _ in edges]
    vals = [w for _, _, w in edges] * 2
    adj = sp.csr_matrix(
        (np.asarray(vals, dtype=float), (np.asarray(rows, dtype=np.int64),
                                         np.asarray(cols, dtype=np.int64))),
        shape=(n_nodes, n_nodes),
    )
    adj.sort_indices()
    degrees = np.asarray(adj.sum(axis=1)).ravel()
    if cluster_of is not None:
        cluster_of = np.asarray(cluster_of)
        if cluster_of.shape != (n_nodes,):
            raise GraphError("cluster_of must have one label per node")
    return Graph(
        n_nodes=n_nodes,
        edges=edges,
        degrees=degrees,
        indptr=adj.indptr.astype(np.int64),
        indices=adj.indices.astype(np.int64),
        weights=adj.data.astype(float),
        cluster_of=cluster_of,
    )


def laplacian(g: Graph) -> sp.csr_matrix:
    """Combinatorial Laplacian ``diag(d) - W`` as a sparse matrix."""
    return (sp.diags(g.degrees) - g.adjacency()).tocsr()


def average_degree(g: Graph) -> float:
    return float(np.mean(g.degrees))


def sbm_generate(cluster_sizes: Sequence[int], p_in: float, p_out: float,
                 seed: int) -> Graph:
    """Unit-weight stochastic block model graph.

    Every unordered pair is linked independently with probability ``p_in``
    (same cluster) or ``p_out`` (different clusters). Deterministic given
    ``seed``.
    """
    if len(cluster_sizes) == 0:
        raise GraphError("cluster_sizes must be non-empty")
    for p in (p_in, p_out):
        if not 0.0 <= p <= 1.0:
            raise GraphError(f"probability {p} outside [0, 1]")
    labels = np.repeat(np.arange(len(cluster_sizes)), cluster_sizes)
    n = labels.size
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    return build_graph(zip(iu[keep], ju[keep]), n, cluster_of=labels)


def read_edge_csv(path, n_nodes: Optional[int] = None) -> Graph:
    """Read an edge list CSV with header ``u,v[,weight]``.

    When ``n_nodes`` is omitted it is taken as ``max index + 1``.
    """
    edges = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"u", "v"} <= set(reader.fieldnames):
            raise GraphError(f"{path}: header must contain u,v")
        for lineno, row in enumerate(reader, start=2):
            try:
                w = row.get("weight")
                w = 1.0 if w in (None, "") else float(w)
                edges.append((int(row["u"]), int(row["v"]), w))
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None
    if n_nodes is None:
        n_nodes = 1 + max((max(u, v) for u, v, _ in edges), default=0)
    return build_graph(edges, n_nodes)


def write_edge_csv(g: Graph, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "v", "weight"])
        for u, v, w in g.edges:
            writer.writerow([u, v, repr(w)])
