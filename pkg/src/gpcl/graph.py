"""Degree-normalized bipartite graphs and linear message passing.

Edges carry the symmetric weight 1/sqrt(deg_left * deg_right); propagation
is a plain sparse-dense product with no transforms or nonlinearities.
Functions accept either numpy arrays (evaluation path) or autodiff tensors
(training path) for the embedding argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import spmm
from .data import EntityCounts, RelationTable


@dataclass(frozen=True)
class BipartiteGraph:
    left_count: int
    right_count: int
    adj: sp.csr_matrix        # binary incidence, left x right
    weights: sp.csr_matrix    # 1/sqrt(deg_l * deg_r) on present edges
    left_degrees: np.ndarray
    right_degrees: np.ndarray

    @property
    def num_edges(self) -> int:
        return int(self.adj.nnz)


def build_graph(table: RelationTable, counts: EntityCounts) -> BipartiteGraph:
    """Build the normalized bipartite graph for one relation table."""
    left_count, right_count = counts.bounds(table.kind)
    pairs = table.pairs
    data = np.ones(len(pairs), dtype=np.float64)
    adj = sp.csr_matrix(
        (data, (pairs[:, 0], pairs[:, 1])), shape=(left_count, right_count))
    adj.sum_duplicates()
    left_deg = np.asarray(adj.sum(axis=1), dtype=np.int64).ravel()
    right_deg = np.asarray(adj.sum(axis=0), dtype=np.int64).ravel()

    coo = adj.tocoo()
    norm = 1.0 / np.sqrt(left_deg[coo.row] * right_deg[coo.col])
    weights = sp.csr_matrix((norm, (coo.row, coo.col)), shape=adj.shape)
    return BipartiteGraph(left_count, right_count, adj, weights, left_deg, right_deg)


def propagate_to_left(g: BipartiteGraph, right_emb):
    """Aggregate right-side embeddings into left nodes: out[l] = sum_r w(l,r) e_r."""
    _check_rows(right_emb, g.right_count)
    return spmm(g.weights, right_emb)


def propagate_to_right(g: BipartiteGraph, left_emb):
    """Mirrored direction: out[r] = sum_l w(l,r) e_l."""
    _check_rows(left_emb, g.left_count)
    return spmm(g.weights.T.tocsr(), left_emb)


def propagate_layers(g: BipartiteGraph, left0, right0, layers: int,
                     combine: str = "last"):
    """Alternating propagation for ``layers`` hops.

    ``combine="last"`` returns the final hop (one hop reproduces
    ``propagate_to_left``/``propagate_to_right`` exactly);
    ``combine="mean0"`` averages the initial and all hop representations.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if combine not in ("last", "mean0"):
        raise ValueError(f"unknown combine mode {combine!r}")
    lefts, rights = [left0], [right0]
    for _ in range(layers):
        lefts.append(propagate_to_left(g, rights[-1]))
        rights.append(propagate_to_right(g, lefts[-2]))
    if combine == "last":
        return lefts[-1], rights[-1]
    scale = 1.0 / (layers + 1)
    left = lefts[0] * scale
    right = rights[0] * scale
    for hop in range(1, layers + 1):
        left = left + lefts[hop] * scale
        right = right + rights[hop] * scale
    return left, right


def mean_pool_matrix(g: BipartiteGraph) -> sp.csr_matrix:
    """Row-averaging matrix Diag(1/deg_left) * adj; zero-degree rows stay zero."""
    inv = np.zeros(g.left_count, dtype=np.float64)
    nonzero = g.left_degrees > 0
    inv[nonzero] = 1.0 / g.left_degrees[nonzero]
    return (sp.diags(inv) @ g.adj).tocsr()


def pool_bundle_items(g: BipartiteGraph, item_emb):
    """Average the member-item embeddings of every bundle (empty -> zero row)."""
    _check_rows(item_emb, g.right_count)
    return spmm(mean_pool_matrix(g), item_emb)


def drop_edges(g: BipartiteGraph, p: float, rng: np.random.Generator) -> BipartiteGraph:
    """Zero out each edge independently with probability ``p``.

    Surviving weights are not renormalized and the recorded degrees stay
    those of the full graph, so dropped edges simply contribute nothing.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must lie in [0, 1)")
    if p == 0.0:
        return g
    keep = rng.random(g.adj.nnz) >= p
    adj = g.adj.copy()
    adj.data = adj.data * keep
    adj.eliminate_zeros()
    weights = g.weights.copy()
    weights.data = weights.data * keep
    weights.eliminate_zeros()
    return BipartiteGraph(g.left_count, g.right_count, adj.tocsr(), weights.tocsr(),
                          g.left_degrees, g.right_degrees)


def _check_rows(emb, expected: int) -> None:
    rows = emb.shape[0]
    if rows != expected:
        raise ValueError(f"embedding has {rows} rows, graph side expects {expected}")
