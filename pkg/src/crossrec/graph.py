"""Block adjacency construction and symmetric normalization.

Each domain is modelled as one square sparse matrix over the node set
``users + items + entities`` (in that row/column order).  User-item
interactions and item-entity links are mirrored into both triangles,
entity-entity edges are symmetrized, and the whole matrix is normalized
as ``D^{-1/2} A D^{-1/2}`` where ``D`` counts structural nonzeros per
row.  Graphs are immutable once built and safe to share across threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

SOURCE = "source"
TARGET = "target"


class GraphBuildError(ValueError):
    """Raised when edges reference nodes outside the declared index ranges."""


def _as_edge_array(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphBuildError(f"edge list must be of shape (n, 2), got {arr.shape}")
    return arr


def _check_range(edges: np.ndarray, limits: tuple[int, int], label: str) -> None:
    for col, limit in enumerate(limits):
        bad = (edges[:, col] < 0) | (edges[:, col] >= limit)
        if bad.any():
            offender = edges[np.argmax(bad)]
            raise GraphBuildError(
                f"{label} edge {tuple(int(v) for v in offender)} out of range "
                f"(column {col} must lie in [0, {limit}))"
            )


@dataclass(frozen=True)
class InteractionGraph:
    """Implicit-feedback bipartite graph of one domain.

    ``edges`` holds (user_index, item_index) pairs; feedback is binary, so
    multiplicity carries no meaning and duplicates are collapsed downstream.
    """

    domain_tag: str
    user_count: int
    item_count: int
    edges: np.ndarray

    def __post_init__(self):
        if self.domain_tag not in (SOURCE, TARGET):
            raise GraphBuildError(f"unknown domain tag {self.domain_tag!r}")
        object.__setattr__(self, "edges", _as_edge_array(self.edges))
        _check_range(self.edges, (self.user_count, self.item_count), "interaction")
        self.edges.setflags(write=False)

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    def user_degree(self) -> np.ndarray:
        return np.bincount(self.edges[:, 0], minlength=self.user_count)


@dataclass(frozen=True)
class KnowledgeLinkage:
    """Entity graph plus the per-domain item-to-entity maps bridging domains.

    Entity edges are treated as undirected connectivity; any relation typing
    present in the raw triples has already been discarded.
    """

    entity_count: int
    entity_edges: np.ndarray
    item_entity_source: np.ndarray
    item_entity_target: np.ndarray

    def __post_init__(self):
        for name in ("entity_edges", "item_entity_source", "item_entity_target"):
            object.__setattr__(self, name, _as_edge_array(getattr(self, name)))
        if self.entity_edges.size:
            _check_range(
                self.entity_edges, (self.entity_count, self.entity_count), "entity"
            )
        for name in ("item_entity_source", "item_entity_target"):
            arr = getattr(self, name)
            if arr.size and ((arr[:, 1] < 0) | (arr[:, 1] >= self.entity_count)).any():
                bad = arr[np.argmax((arr[:, 1] < 0) | (arr[:, 1] >= self.entity_count))]
                raise GraphBuildError(
                    f"{name} edge {tuple(int(v) for v in bad)} references entity "
                    f"outside [0, {self.entity_count})"
                )
            arr.setflags(write=False)
        self.entity_edges.setflags(write=False)

    def item_entity_for(self, domain_tag: str) -> np.ndarray:
        if domain_tag == SOURCE:
            return self.item_entity_source
        if domain_tag == TARGET:
            return self.item_entity_target
        raise GraphBuildError(f"unknown domain tag {domain_tag!r}")

    @classmethod
    def empty(cls) -> "KnowledgeLinkage":
        return cls(0, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)))


@dataclass(frozen=True)
class SparseGraph:
    """CSR adjacency over ``[users | items | entities]``.

    ``normalized`` distinguishes the raw 0/1 matrix from the
    ``D^{-1/2} A D^{-1/2}`` form fed to the encoder.  Zero-degree rows simply
    have no stored entries.
    """

    user_count: int
    item_count: int
    entity_count: int
    matrix: sp.csr_matrix = field(repr=False)
    normalized: bool = False

    @property
    def node_count(self) -> int:
        return self.user_count + self.item_count + self.entity_count

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def column_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def values(self) -> np.ndarray:
        return self.matrix.data

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def degrees(self) -> np.ndarray:
        """Structural nonzero count per row."""
        return np.diff(self.matrix.indptr)

    def is_structurally_symmetric(self) -> bool:
        pattern = self.matrix.copy()
        pattern.data = np.ones_like(pattern.data)
        return (pattern != pattern.T).nnz == 0


def assemble_adjacency(graph: InteractionGraph, kg: KnowledgeLinkage) -> SparseGraph:
    """Build the unnormalized block adjacency for one domain.

    Rows/columns are ordered ``[users | items | entities]``.  Interaction and
    item-entity blocks are mirrored, entity edges are symmetrized, and the
    diagonal stays empty.  Duplicate input edges collapse to weight-1 entries;
    the number removed is logged as a warning.
    """
    item_entity = kg.item_entity_for(graph.domain_tag)
    if item_entity.size:
        _check_range(item_entity, (graph.item_count, kg.entity_count), "item-entity")

    n_u, n_i, n_e = graph.user_count, graph.item_count, kg.entity_count
    n = n_u + n_i + n_e

    def dedupe_input(edges: np.ndarray, label: str) -> np.ndarray:
        if not edges.size:
            return edges
        flat = edges[:, 0] * np.int64(n) + edges[:, 1]
        _, first = np.unique(flat, return_index=True)
        removed = edges.shape[0] - first.size
        if removed:
            log.warning(
                "%s adjacency: collapsed %d duplicate %s edges",
                graph.domain_tag, removed, label,
            )
        return edges[np.sort(first)]

    interactions = dedupe_input(graph.edges, "interaction")
    links = dedupe_input(item_entity, "item-entity")
    entity_edges = dedupe_input(kg.entity_edges, "entity")
    if entity_edges.size:
        keep = entity_edges[:, 0] != entity_edges[:, 1]
        if not keep.all():
            log.warning(
                "%s adjacency: dropped %d entity self-loops",
                graph.domain_tag, int((~keep).sum()),
            )
            entity_edges = entity_edges[keep]

    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []

    def add_block(r: np.ndarray, c: np.ndarray) -> None:
        rows.append(r)
        cols.append(c)
        rows.append(c)
        cols.append(r)

    if interactions.size:
        add_block(interactions[:, 0], interactions[:, 1] + n_u)
    if links.size:
        add_block(links[:, 0] + n_u, links[:, 1] + n_u + n_i)
    if entity_edges.size:
        add_block(entity_edges[:, 0] + n_u + n_i, entity_edges[:, 1] + n_u + n_i)

    if rows:
        # mirroring can recreate an entry that was already present in the
        # other direction (e.g. an entity edge given both ways); collapse
        # those silently, they carry no information
        flat = np.unique(np.concatenate(rows) * n + np.concatenate(cols))
        r, c = np.divmod(flat, n)
        matrix = sp.csr_matrix((np.ones(flat.size), (r, c)), shape=(n, n))
    else:
        matrix = sp.csr_matrix((n, n))

    return SparseGraph(n_u, n_i, n_e, matrix, normalized=False)


def normalize_symmetric(graph: SparseGraph) -> SparseGraph:
    """Reweight every stored entry to ``1/sqrt(deg(row) * deg(col))``.

    Degrees count structural nonzeros, so the result is idempotent under
    repeated normalization of the same pattern.  Zero-degree rows have no
    entries and are skipped; no division by zero can occur.
    """
    if not graph.is_structurally_symmetric():
        raise GraphBuildError("normalization requires a structurally symmetric matrix")
    m = graph.matrix
    deg = np.diff(m.indptr).astype(np.float64)
    inv_sqrt = np.zeros_like(deg)
    nonzero = deg > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(deg[nonzero])
    row_of_entry = np.repeat(np.arange(graph.node_count), np.diff(m.indptr))
    values = inv_sqrt[row_of_entry] * inv_sqrt[m.indices]
    normalized = sp.csr_matrix(
        (values, m.indices.copy(), m.indptr.copy()), shape=m.shape
    )
    return SparseGraph(
        graph.user_count, graph.item_count, graph.entity_count, normalized, normalized=True
    )


def scope_entity_edges(kg: KnowledgeLinkage, hop_radius: int = 1) -> tuple[KnowledgeLinkage, int]:
    """Restrict entity edges to the neighborhood of item-linked entities.

    Entities linked by items of either domain act as seeds; entities further
    than ``hop_radius`` hops from any seed lose their edges but keep their
    index (they become zero-degree nodes).  Returns the trimmed linkage and
    the number of dropped entity edges.
    """
    if hop_radius < 0:
        raise GraphBuildError("hop_radius must be non-negative")
    seeds = np.unique(
        np.concatenate([kg.item_entity_source[:, 1], kg.item_entity_target[:, 1]])
    ) if (kg.item_entity_source.size or kg.item_entity_target.size) else np.zeros(0, np.int64)

    reachable = np.zeros(kg.entity_count, dtype=bool)
    reachable[seeds] = True
    frontier = reachable.copy()
    ee = kg.entity_edges
    for _ in range(hop_radius):
        if not ee.size or not frontier.any():
            break
        touched = np.zeros_like(reachable)
        hit_head = frontier[ee[:, 0]]
        hit_tail = frontier[ee[:, 1]]
        touched[ee[hit_head, 1]] = True
        touched[ee[hit_tail, 0]] = True
        frontier = touched & ~reachable
        reachable |= touched

    if not ee.size:
        return kg, 0
    keep = reachable[ee[:, 0]] & reachable[ee[:, 1]]
    dropped = int((~keep).sum())
    if dropped == 0:
        return kg, 0
    trimmed = KnowledgeLinkage(
        kg.entity_count, ee[keep], kg.item_entity_source, kg.item_entity_target
    )
    return trimmed, dropped
