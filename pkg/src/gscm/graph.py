"""Neighbourhood graphs and the sparse CAR precision pattern.

Areas are dense integer indices ``0..n_areas-1``. External string identifiers
are mapped to indices by :mod:`gscm.io` before anything here is called.

The LCAR prior needs ``C = I - D + W`` (``W`` binary adjacency, ``D`` the
degree matrix) in compressed-row form together with all eigenvalues of ``C``.
``C`` and ``W`` share their off-diagonal structure; the diagonal of ``C`` is
``1 - degree`` which is exactly zero for areas with one neighbour, so the
diagonal positions are always stored explicitly rather than inferred from
nonzero values.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataValidationError,
    DegenerateLatticeError,
    DuplicateEdgeError,
    IndexOutOfRangeError,
    IsolatedAreaError,
    NotConnectedError,
    SelfLoopError,
)

__all__ = [
    "AdjacencyGraph",
    "PrecisionPattern",
    "build_graph",
    "is_connected",
    "n_components",
    "lattice_graph",
    "prep_precision",
    "csr_matvec",
    "graph_diagnostics",
]


@dataclass(frozen=True)
class AdjacencyGraph:
    """Validated undirected neighbourhood structure.

    ``edges`` is an ``(E, 2)`` integer array with ``edges[:, 0] < edges[:, 1]``.
    """

    n_areas: int
    edges: np.ndarray
    degrees: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def adjacency_matrix(self) -> np.ndarray:
        """Dense binary ``W``."""
        W = np.zeros((self.n_areas, self.n_areas))
        W[self.edges[:, 0], self.edges[:, 1]] = 1.0
        W[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return W

    def neighbours(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_areas)]
        for i, j in self.edges:
            nbrs[i].append(int(j))
            nbrs[j].append(int(i))
        return [sorted(n) for n in nbrs]


@dataclass(frozen=True)
class PrecisionPattern:
    """Compressed-row form of ``C = I - D + W`` plus its spectrum.

    Attributes
    ----------
    values : ndarray
        Nonzero pattern of ``C`` in row-major order (diagonals always stored).
    col_indices : ndarray
        Column index of each stored value.
    row_starts : ndarray
        Offsets of length ``n_areas + 1`` into ``values``.
    diag_positions, offdiag_positions : ndarray
        Positions in ``values`` of diagonal and off-diagonal entries.
    eigenvalues : ndarray
        All eigenvalues of ``C`` in descending order.
    edges, degrees : ndarray
        Copied from the source graph; used by the pairwise ICAR form.
    """

    n_areas: int
    values: np.ndarray
    col_indices: np.ndarray
    row_starts: np.ndarray
    diag_positions: np.ndarray
    offdiag_positions: np.ndarray
    eigenvalues: np.ndarray
    edges: np.ndarray
    degrees: np.ndarray
    _row_of: np.ndarray = field(repr=False)

    def scaled_values(self, rho: float) -> np.ndarray:
        """Stored entries of ``I - rho * C``."""
        out = -rho * self.values
        out[self.diag_positions] += 1.0
        return out

    def matvec(self, x: np.ndarray, rho: float = 0.0, values: np.ndarray | None = None) -> np.ndarray:
        """``(I - rho C) x`` for a vector or an ``(N, m)`` block of vectors."""
        if values is None:
            values = self.scaled_values(rho)
        return csr_matvec(values, self.col_indices, self.row_starts, x)

    def c_matvec(self, x: np.ndarray) -> np.ndarray:
        """``C x``."""
        return csr_matvec(self.values, self.col_indices, self.row_starts, x)

    def dense(self) -> np.ndarray:
        C = np.zeros((self.n_areas, self.n_areas))
        C[self._row_of, self.col_indices] = self.values
        return C


def csr_matvec(values: np.ndarray, col_indices: np.ndarray, row_starts: np.ndarray,
               x: np.ndarray) -> np.ndarray:
    """Compressed-row sparse matrix times vector (or column block).

    Every row must hold at least one stored entry, which :func:`prep_precision`
    guarantees by storing the diagonal.
    """
    x = np.asarray(x, dtype=float)
    gathered = x[col_indices]
    if x.ndim == 1:
        prod = values * gathered
    else:
        prod = values[:, None] * gathered
    return np.add.reduceat(prod, row_starts[:-1], axis=0)


def build_graph(n_areas: int, edges) -> AdjacencyGraph:
    """Validate an unordered edge list and return an :class:`AdjacencyGraph`.

    Both ``(i, j)`` and ``(j, i)`` in the input is treated as a duplicate, not
    silently merged.

    >>> build_graph(3, [(0, 1), (1, 2)]).degrees.tolist()
    [1, 2, 1]
    """
    n_areas = int(n_areas)
    if n_areas < 2:
        raise DataValidationError(f"need at least 2 areas, got {n_areas}")
    arr = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if arr.size and (arr.min() < 0 or arr.max() >= n_areas):
        bad = arr[(arr < 0).any(axis=1) | (arr >= n_areas).any(axis=1)][0]
        raise IndexOutOfRangeError(f"edge {tuple(bad)} outside [0, {n_areas})")
    loops = arr[:, 0] == arr[:, 1]
    if loops.any():
        raise SelfLoopError(f"self-loop at area {int(arr[loops][0, 0])}")
    canon = np.sort(arr, axis=1)
    seen: set[tuple[int, int]] = set()
    for a, b in canon:
        key = (int(a), int(b))
        if key in seen:
            raise DuplicateEdgeError(f"edge {key} listed more than once")
        seen.add(key)
    degrees = np.bincount(canon.ravel(), minlength=n_areas).astype(np.int64)
    isolated = np.flatnonzero(degrees == 0)
    if isolated.size:
        raise IsolatedAreaError(f"areas without neighbours: {isolated.tolist()}")
    order = np.lexsort((canon[:, 1], canon[:, 0]))
    canon = canon[order]
    canon.setflags(write=False)
    degrees.setflags(write=False)
    return AdjacencyGraph(n_areas=n_areas, edges=canon, degrees=degrees)


def n_components(graph: AdjacencyGraph) -> int:
    """Number of connected components (breadth-first search)."""
    nbrs = graph.neighbours()
    seen = np.zeros(graph.n_areas, dtype=bool)
    count = 0
    for start in range(graph.n_areas):
        if seen[start]:
            continue
        count += 1
        seen[start] = True
        queue = deque([start])
        while queue:
            i = queue.popleft()
            for j in nbrs[i]:
                if not seen[j]:
                    seen[j] = True
                    queue.append(j)
    return count


def is_connected(graph: AdjacencyGraph) -> bool:
    return n_components(graph) == 1


def lattice_graph(rows: int, cols: int) -> AdjacencyGraph:
    """Rook-contiguity lattice; area ``r * cols + c`` sits at row r, column c."""
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise DegenerateLatticeError(f"lattice {rows}x{cols} has fewer than 2 cells")
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return build_graph(rows * cols, edges)


def prep_precision(graph: AdjacencyGraph) -> PrecisionPattern:
    """Precompute the compressed-row ``C`` and its eigenvalues."""
    if not is_connected(graph):
        raise NotConnectedError(f"graph has {n_components(graph)} components")
    N = graph.n_areas
    nbrs = graph.neighbours()
    values, cols, row_starts, diag_pos, off_pos, row_of = [], [], [0], [], [], []
    for i in range(N):
        # diagonal inserted in column order alongside neighbours
        entries = sorted([(j, 1.0) for j in nbrs[i]] + [(i, 1.0 - graph.degrees[i])])
        for j, v in entries:
            (diag_pos if j == i else off_pos).append(len(values))
            values.append(v)
            cols.append(j)
            row_of.append(i)
        row_starts.append(len(values))
    C = np.eye(N) - np.diag(graph.degrees.astype(float)) + graph.adjacency_matrix()
    eig = np.linalg.eigvalsh(C)[::-1].copy()
    arrays = dict(
        values=np.array(values, dtype=float),
        col_indices=np.array(cols, dtype=np.int64),
        row_starts=np.array(row_starts, dtype=np.int64),
        diag_positions=np.array(diag_pos, dtype=np.int64),
        offdiag_positions=np.array(off_pos, dtype=np.int64),
        eigenvalues=eig,
        _row_of=np.array(row_of, dtype=np.int64),
    )
    for a in arrays.values():
        a.setflags(write=False)
    return PrecisionPattern(n_areas=N, edges=graph.edges, degrees=graph.degrees, **arrays)


def graph_diagnostics(graph: AdjacencyGraph) -> dict:
    """JSON-ready summary: component count and degree histogram."""
    hist = np.bincount(graph.degrees)
    return {
        "n_areas": graph.n_areas,
        "n_edges": graph.n_edges,
        "n_components": n_components(graph),
        "degree_histogram": {str(d): int(c) for d, c in enumerate(hist) if c},
    }
