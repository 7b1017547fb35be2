"""Graph data model, dataset loaders, deterministic splits and statistics."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ArgumentError, IngestionError, MalformedDatasetError

log = logging.getLogger(__name__)


def canonical_edges(pairs: Iterable[Sequence[int]] | np.ndarray) -> np.ndarray:
    """Return unique undirected pairs (i < j) sorted row-wise, self-loops dropped."""
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    arr = np.sort(arr, axis=1)
    arr = arr[arr[:, 0] != arr[:, 1]]
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(arr, axis=0)


@dataclass(frozen=True, eq=False)
class Graph:
    node_count: int
    edges: np.ndarray  # (m, 2) canonical undirected pairs
    node_features: np.ndarray  # (node_count, feature_dim) float32
    graph_label: int | None = None
    node_labels: np.ndarray | None = None

    @classmethod
    def build(cls, node_count, edges, node_features, graph_label=None, node_labels=None) -> Graph:
        feats = np.asarray(node_features, dtype=np.float32)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        labels = None if node_labels is None else np.asarray(node_labels, dtype=np.int64)
        return cls(int(node_count), canonical_edges(edges), feats, graph_label, labels)

    @property
    def feature_dim(self) -> int:
        return int(self.node_features.shape[1])

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def edge_index(self) -> np.ndarray:
        """Both arc directions as a (2, 2m) array, the layout message passing consumes."""
        if self.edge_count == 0:
            return np.zeros((2, 0), dtype=np.int64)
        return np.concatenate([self.edges.T, self.edges[:, ::-1].T], axis=1)

    def neighbors(self) -> list[np.ndarray]:
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            adj[a].append(int(b))
            adj[b].append(int(a))
        return [np.array(sorted(n), dtype=np.int64) for n in adj]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        np.add.at(deg, self.edges.ravel(), 1)
        return deg

    def with_label(self, label: int) -> Graph:
        return replace(self, graph_label=int(label))

    def permuted(self, perm: Sequence[int]) -> Graph:
        """Relabel nodes so that old node ``perm[k]`` becomes node ``k``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        return Graph.build(
            self.node_count,
            inv[self.edges] if self.edge_count else self.edges,
            self.node_features[perm],
            self.graph_label,
            None if self.node_labels is None else self.node_labels[perm],
        )


def validate_graph(graph: Graph, feature_dim: int | None = None) -> None:
    """Raise MalformedDatasetError if any structural invariant is violated."""
    e = graph.edges
    if graph.node_count < 0:
        raise MalformedDatasetError("negative node count")
    if e.ndim != 2 or e.shape[1] != 2:
        raise MalformedDatasetError(f"edge array has shape {e.shape}")
    if e.size:
        if e.min() < 0 or e.max() >= graph.node_count:
            raise MalformedDatasetError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise MalformedDatasetError("self-loop present")
        if np.any(e[:, 0] > e[:, 1]) or len(np.unique(e, axis=0)) != len(e):
            raise MalformedDatasetError("edges not canonical unordered pairs")
    if graph.node_features.shape[0] != graph.node_count:
        raise MalformedDatasetError("feature rows do not match node count")
    if feature_dim is not None and graph.feature_dim != feature_dim:
        raise MalformedDatasetError("feature_dim differs across graphs")
    if graph.node_labels is not None and len(graph.node_labels) != graph.node_count:
        raise MalformedDatasetError("node label vector has wrong length")


@dataclass(frozen=True, eq=False)
class GraphDataset:
    name: str
    graphs: list[Graph]
    class_count: int

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].feature_dim

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.graph_label for g in self.graphs], dtype=np.int64)

    def subset(self, indices: Sequence[int], name: str | None = None) -> GraphDataset:
        return GraphDataset(name or self.name, [self.graphs[i] for i in indices], self.class_count)

    def validate(self) -> None:
        d = self.feature_dim if self.graphs else None
        for g in self.graphs:
            validate_graph(g, d)
            if g.graph_label is None or not 0 <= g.graph_label < self.class_count:
                raise MalformedDatasetError(f"graph label {g.graph_label} outside [0, {self.class_count})")


@dataclass(frozen=True, eq=False)
class NodeTaskDataset:
    name: str
    graph: Graph
    train_mask: np.ndarray
    test_mask: np.ndarray
    class_count: int
    meta: dict = field(default_factory=dict)

    @property
    def labels(self) -> np.ndarray:
        return self.graph.node_labels

    @property
    def train_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask)

    @property
    def test_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.test_mask)

    def validate(self) -> None:
        validate_graph(self.graph)
        if self.graph.node_labels is None:
            raise MalformedDatasetError("node task requires node labels")
        if np.any(self.train_mask & self.test_mask):
            raise MalformedDatasetError("train and test masks overlap")
        lab = self.graph.node_labels
        if lab.size and (lab.min() < 0 or lab.max() >= self.class_count):
            raise MalformedDatasetError("node label outside class range")


# --------------------------------------------------------------------------- TU format


def _read_rows(path: Path) -> list[list[str]]:
    if not path.is_file():
        raise IngestionError(f"missing file: {path}")
    rows = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([tok.strip() for tok in line.split(",")])
    return rows


def _remap(values: Sequence) -> tuple[np.ndarray, list]:
    """Map arbitrary label values to 0-based contiguous indices in sorted order."""
    uniq = sorted(set(values))
    lookup = {v: i for i, v in enumerate(uniq)}
    return np.array([lookup[v] for v in values], dtype=np.int64), uniq


def load_tu_dataset(directory: str | Path, name: str | None = None) -> GraphDataset:
    """Load a dataset stored in the TU Dortmund text format.

    Node features are the one-hot node labels, or a constant 1 column when the
    dataset ships no node labels. Arcs listed in both directions collapse into
    one undirected edge.
    """
    directory = Path(directory)
    name = name or directory.name
    prefix = directory / name
    edges_raw = _read_rows(Path(f"{prefix}_A.txt"))
    indicator = np.array([int(r[0]) for r in _read_rows(Path(f"{prefix}_graph_indicator.txt"))], dtype=np.int64)
    glabels_raw = [int(r[0]) for r in _read_rows(Path(f"{prefix}_graph_labels.txt"))]
    nl_path = Path(f"{prefix}_node_labels.txt")
    node_labels_raw = [int(r[0]) for r in _read_rows(nl_path)] if nl_path.is_file() else None

    n_total = len(indicator)
    if node_labels_raw is not None and len(node_labels_raw) != n_total:
        raise MalformedDatasetError("node_labels length differs from graph_indicator length")
    if indicator.min() < 1 or np.any(np.diff(indicator) < 0):
        raise MalformedDatasetError("graph_indicator must be 1-indexed and non-decreasing")
    n_graphs = int(indicator.max())
    if n_graphs != len(glabels_raw):
        raise MalformedDatasetError(f"{n_graphs} graphs indicated but {len(glabels_raw)} graph labels")

    glabels, _ = _remap(glabels_raw)
    if node_labels_raw is not None:
        nl_idx, nl_vals = _remap(node_labels_raw)
        feats_all = np.eye(len(nl_vals), dtype=np.float32)[nl_idx]
    else:
        feats_all = np.ones((n_total, 1), dtype=np.float32)

    arcs = np.array([[int(a), int(b)] for a, b in (r[:2] for r in edges_raw)], dtype=np.int64).reshape(-1, 2) - 1
    if arcs.size and (arcs.min() < 0 or arcs.max() >= n_total):
        raise MalformedDatasetError("edge references unknown node")
    gi = indicator - 1
    if arcs.size and np.any(gi[arcs[:, 0]] != gi[arcs[:, 1]]):
        raise MalformedDatasetError("edge connects nodes of different graphs")

    starts = np.searchsorted(gi, np.arange(n_graphs), side="left")
    ends = np.searchsorted(gi, np.arange(n_graphs), side="right")
    edge_graph = gi[arcs[:, 0]] if arcs.size else np.zeros(0, dtype=np.int64)
    order = np.argsort(edge_graph, kind="stable")
    arcs, edge_graph = arcs[order], edge_graph[order]
    e_starts = np.searchsorted(edge_graph, np.arange(n_graphs), side="left")
    e_ends = np.searchsorted(edge_graph, np.arange(n_graphs), side="right")

    graphs = []
    for k in range(n_graphs):
        s, e = starts[k], ends[k]
        local = arcs[e_starts[k]:e_ends[k]] - s
        graphs.append(Graph.build(e - s, local, feats_all[s:e], int(glabels[k])))
    ds = GraphDataset(name, graphs, int(glabels.max()) + 1 if len(glabels) else 1)
    ds.validate()
    return ds


def write_tu_dataset(dataset: GraphDataset, directory: str | Path) -> Path:
    """Write ``dataset`` in the TU format (both arc directions, 1-indexed).

    Node labels are recovered as the argmax of one-hot features; constant
    single-column features are written without a node-labels file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = directory / dataset.name
    one_hot = dataset.feature_dim > 1
    offset = 0
    with open(f"{prefix}_A.txt", "w") as fa, open(f"{prefix}_graph_indicator.txt", "w") as fi, open(
        f"{prefix}_graph_labels.txt", "w"
    ) as fl:
        fn = open(f"{prefix}_node_labels.txt", "w") if one_hot else None
        try:
            for k, g in enumerate(dataset.graphs, start=1):
                for a, b in g.edges:
                    fa.write(f"{a + offset + 1}, {b + offset + 1}\n{b + offset + 1}, {a + offset + 1}\n")
                fi.write(f"{k}\n" * g.node_count)
                fl.write(f"{g.graph_label}\n")
                if fn is not None:
                    for lab in g.node_features.argmax(axis=1):
                        fn.write(f"{lab}\n")
                offset += g.node_count
        finally:
            if fn is not None:
                fn.close()
    return directory


# --------------------------------------------------------------------------- citation format

# Label orders that reproduce the class indices of the common Planetoid
# distribution of these two datasets (and hence the published target classes).
PLANETOID_CLASS_ORDER = {
    "cora": [
        "Theory",
        "Reinforcement_Learning",
        "Genetic_Algorithms",
        "Neural_Networks",
        "Probabilistic_Methods",
        "Case_Based",
        "Rule_Learning",
    ],
    "citeseer": ["AI", "ML", "IR", "DB", "Agents", "HCI"],
}


def load_citation_dataset(
    directory: str | Path, name: str | None = None, class_order: Sequence[str] | None = None
) -> NodeTaskDataset:
    """Load ``<name>.content`` / ``<name>.cites`` into a single-graph node task.

    Class strings map to indices in lexicographic order unless ``class_order``
    is given. Both masks start empty; use :func:`split_node_dataset`.
    """
    directory = Path(directory)
    name = name or directory.name
    content = directory / f"{name}.content"
    cites = directory / f"{name}.cites"
    for p in (content, cites):
        if not p.is_file():
            raise IngestionError(f"missing file: {p}")

    ids: dict[str, int] = {}
    feats, classes = [], []
    with content.open() as fh:
        for line in fh:
            toks = line.split()
            if not toks:
                continue
            if toks[0] in ids:
                raise MalformedDatasetError(f"duplicate node id {toks[0]!r} in {content.name}")
            ids[toks[0]] = len(ids)
            feats.append(np.array(toks[1:-1], dtype=np.float32))
            classes.append(toks[-1])
    if len({len(f) for f in feats}) > 1:
        raise MalformedDatasetError("rows of .content have differing feature counts")

    if class_order is None:
        class_order = sorted(set(classes))
    lookup = {c: i for i, c in enumerate(class_order)}
    missing = set(classes) - set(lookup)
    if missing:
        raise MalformedDatasetError(f"classes {sorted(missing)} absent from class order")
    labels = np.array([lookup[c] for c in classes], dtype=np.int64)

    pairs, dropped = [], 0
    with cites.open() as fh:
        for line in fh:
            toks = line.split()
            if len(toks) < 2:
                continue
            a, b = ids.get(toks[0]), ids.get(toks[1])
            if a is None or b is None:
                dropped += 1
                continue
            pairs.append((a, b))
    if dropped:
        log.warning("%s: dropped %d citation(s) referencing unknown node ids", name, dropped)

    n = len(ids)
    graph = Graph.build(n, pairs, np.stack(feats) if feats else np.zeros((0, 0)), None, labels)
    ds = NodeTaskDataset(
        name,
        graph,
        np.zeros(n, dtype=bool),
        np.zeros(n, dtype=bool),
        len(class_order),
        meta={"dropped_citations": dropped, "class_names": list(class_order)},
    )
    ds.validate()
    return ds


# --------------------------------------------------------------------------- splits and stats


def _check_fraction(train_fraction: float) -> None:
    if not 0.0 < train_fraction < 1.0:
        raise ArgumentError(f"train_fraction must lie in (0, 1), got {train_fraction}")


def split_graph_dataset(dataset: GraphDataset, train_fraction: float, seed: int) -> tuple[GraphDataset, GraphDataset]:
    """Uniform random split; the train side holds ``floor(fraction * |dataset|)`` graphs.

    Both sides keep the original on-disk order of their members.
    """
    _check_fraction(train_fraction)
    if len(dataset) == 0:
        raise ArgumentError("cannot split an empty dataset")
    n = len(dataset)
    n_train = math.floor(train_fraction * n)
    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    return dataset.subset(train_idx, dataset.name), dataset.subset(test_idx, dataset.name)


def split_graph_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    _check_fraction(train_fraction)
    perm = np.random.default_rng(seed).permutation(n)
    k = math.floor(train_fraction * n)
    return np.sort(perm[:k]), np.sort(perm[k:])


def split_node_dataset(dataset: NodeTaskDataset, train_fraction: float, seed: int) -> NodeTaskDataset:
    _check_fraction(train_fraction)
    n = dataset.graph.node_count
    if n == 0:
        raise ArgumentError("cannot split an empty graph")
    train_idx, _ = split_graph_indices(n, train_fraction, seed)
    train = np.zeros(n, dtype=bool)
    train[train_idx] = True
    return replace(dataset, train_mask=train, test_mask=~train)


def dataset_statistics(dataset: GraphDataset | NodeTaskDataset) -> dict:
    if isinstance(dataset, NodeTaskDataset):
        g = dataset.graph
        hist = Counter(int(x) for x in g.node_labels)
        return {
            "name": dataset.name,
            "graph_count": 1,
            "avg_nodes": float(g.node_count),
            "avg_edges": float(g.edge_count),
            "class_histogram": {c: hist.get(c, 0) for c in range(dataset.class_count)},
            "feature_dim": g.feature_dim,
        }
    hist = Counter(g.graph_label for g in dataset.graphs)
    n = max(len(dataset), 1)
    return {
        "name": dataset.name,
        "graph_count": len(dataset),
        "avg_nodes": sum(g.node_count for g in dataset.graphs) / n,
        "avg_edges": sum(g.edge_count for g in dataset.graphs) / n,
        "class_histogram": {c: hist.get(c, 0) for c in range(dataset.class_count)},
        "feature_dim": dataset.feature_dim if len(dataset) else 0,
    }
