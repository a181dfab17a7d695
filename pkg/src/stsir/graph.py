"""Areal adjacency structure shared by the ICAR prior and the neighbour-lag term."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, IndexOutOfRange, IslandArea, SelfLoop, UnknownAreaId


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected, irreflexive neighbourhood graph over an ordered set of areas.

    ``neighbor_lists[i]`` holds the sorted indices of the areas adjacent to
    area ``i``. Construct through :func:`build_graph`, which enforces symmetry
    and rejects islands.
    """

    area_ids: tuple[str, ...]
    neighbor_lists: tuple[tuple[int, ...], ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {a: k for k, a in enumerate(self.area_ids)})

    @property
    def n_areas(self) -> int:
        return len(self.area_ids)

    @cached_property
    def n_neighbors(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbor_lists], dtype=np.int64)

    @cached_property
    def adjacency_matrix(self) -> np.ndarray:
        W = np.zeros((self.n_areas, self.n_areas))
        for i, nb in enumerate(self.neighbor_lists):
            W[i, list(nb)] = 1.0
        W.setflags(write=False)
        return W

    @cached_property
    def edges(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with ``i < k`` in each row."""
        pairs = [(i, k) for i, nb in enumerate(self.neighbor_lists) for k in nb if i < k]
        out = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        out.setflags(write=False)
        return out

    def index(self, area_id: str) -> int:
        try:
            return self._index[str(area_id)]
        except KeyError:
            raise UnknownAreaId(f"unknown area id {area_id!r}") from None

    @cached_property
    def components(self) -> np.ndarray:
        """Connected-component label per area."""
        labels = np.full(self.n_areas, -1, dtype=np.int64)
        current = 0
        for start in range(self.n_areas):
            if labels[start] >= 0:
                continue
            stack = [start]
            labels[start] = current
            while stack:
                i = stack.pop()
                for k in self.neighbor_lists[i]:
                    if labels[k] < 0:
                        labels[k] = current
                        stack.append(k)
            current += 1
        return labels

    @property
    def n_components(self) -> int:
        return int(self.components.max()) + 1

    @cached_property
    def color_classes(self) -> tuple[np.ndarray, ...]:
        """Greedy colouring: areas sharing a colour have no common edge.

        Areas inside one class are conditionally independent under the ICAR
        prior, so they can be updated simultaneously.
        """
        colors = np.full(self.n_areas, -1, dtype=np.int64)
        order = np.argsort(-self.n_neighbors, kind="stable")
        for i in order:
            used = {colors[k] for k in self.neighbor_lists[i]}
            c = 0
            while c in used:
                c += 1
            colors[i] = c
        return tuple(np.flatnonzero(colors == c) for c in range(colors.max() + 1))

    def neighbor_sums(self, counts: np.ndarray) -> np.ndarray:
        """Sum over neighbours for every area (works on (n,) or (n, J) arrays)."""
        return self.adjacency_matrix @ np.asarray(counts, dtype=float)


def build_graph(edges: Iterable[Sequence[str]], area_ids: Sequence[str]) -> AdjacencyGraph:
    """Build an :class:`AdjacencyGraph` from unordered id pairs.

    Duplicate and reversed pairs collapse to a single undirected edge. Area
    order follows ``area_ids``.
    """
    ids = tuple(str(a) for a in area_ids)
    if len(set(ids)) != len(ids):
        raise DataError("duplicate entries in area_ids")
    index = {a: k for k, a in enumerate(ids)}
    nbrs: list[set[int]] = [set() for _ in ids]
    for a, b in edges:
        a, b = str(a), str(b)
        for x in (a, b):
            if x not in index:
                raise UnknownAreaId(f"edge references unknown area id {x!r}")
        if a == b:
            raise SelfLoop(f"self-pair for area {a!r}")
        i, k = index[a], index[b]
        nbrs[i].add(k)
        nbrs[k].add(i)
    islands = [ids[i] for i, s in enumerate(nbrs) if not s]
    if islands:
        raise IslandArea(f"areas without neighbours: {', '.join(islands)}")
    return AdjacencyGraph(ids, tuple(tuple(sorted(s)) for s in nbrs))


def neighbor_lag_sum(graph: AdjacencyGraph, counts_prev: Sequence[float], i: int) -> float:
    """Sum of the previous-day counts over the neighbours of area ``i``."""
    counts_prev = np.asarray(counts_prev, dtype=float)
    if counts_prev.shape != (graph.n_areas,):
        raise DataError(f"expected {graph.n_areas} counts, got shape {counts_prev.shape}")
    if not 0 <= i < graph.n_areas:
        raise IndexOutOfRange(f"area index {i} outside [0, {graph.n_areas})")
    return float(counts_prev[list(graph.neighbor_lists[i])].sum())


def icar_pairwise_ss(u: np.ndarray, graph: AdjacencyGraph) -> float:
    """Sum over undirected edges of ``(u_i - u_k)**2``."""
    e = graph.edges
    d = u[e[:, 0]] - u[e[:, 1]]
    return float(d @ d)


def icar_log_density(u: np.ndarray, graph: AdjacencyGraph, tau_u: float) -> float:
    """Unnormalised joint ICAR log density ``-(tau_u / 2) * sum_{i~k} (u_i - u_k)**2``."""
    return -0.5 * tau_u * icar_pairwise_ss(np.asarray(u, dtype=float), graph)


def read_edge_list(path) -> list[tuple[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"fips_a", "fips_b"} <= set(reader.fieldnames):
            raise DataError(f"{path}: adjacency CSV needs header 'fips_a,fips_b'")
        return [(row["fips_a"].strip(), row["fips_b"].strip()) for row in reader]


def read_adjacency_csv(path, area_ids: Sequence[str] | None = None) -> AdjacencyGraph:
    """Load an edge-list CSV. Without ``area_ids`` the areas are the sorted ids in the file."""
    edges = read_edge_list(path)
    if area_ids is None:
        area_ids = sorted({x for e in edges for x in e})
    return build_graph(edges, area_ids)


def fixture_path(name: str) -> Path:
    """Path of a file shipped in ``stsir/fixtures``."""
    return Path(str(resources.files("stsir") / "fixtures" / name))


def load_state_graph(state: str) -> AdjacencyGraph:
    """Shipped county adjacency for ``"sc"`` (46 counties) or ``"nj"`` (21 counties)."""
    return read_adjacency_csv(fixture_path(f"{state.lower()}_adjacency.csv"))


def lattice_graph(rows: int, cols: int, prefix: str = "A") -> AdjacencyGraph:
    """Rook-contiguity grid, areas numbered row by row (handy for synthetic scenarios)."""
    ids = [f"{prefix}{r * cols + c:03d}" for r in range(rows) for c in range(cols)]
    edges = []
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            if c + 1 < cols:
                edges.append((ids[k], ids[k + 1]))
            if r + 1 < rows:
                edges.append((ids[k], ids[k + cols]))
    return build_graph(edges, ids)
