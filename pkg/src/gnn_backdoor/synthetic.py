"""Small seeded synthetic datasets for tests, demos and explainer oracles."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .graph import Graph, GraphDataset, NodeTaskDataset


def random_tree(n: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    return [(int(rng.integers(i)), i) for i in range(1, n)]


def planted_motif_dataset(
    n_graphs: int = 200, seed: int = 0, base_nodes: tuple[int, int] = (12, 20), motif_size: int = 5
) -> tuple[GraphDataset, list[np.ndarray]]:
    """Random trees carrying ``motif_size`` marked nodes.

    In class 1 the marked nodes form a cycle; in class 0 they form a path and
    one extra background edge keeps the edge count equal, so the label is
    decided by the edges inside the motif alone. Features are ``[1, marked]``.
    Returns the dataset and, per graph, the motif node indices.
    """
    rng = np.random.default_rng(seed)
    graphs, motifs = [], []
    for k in range(n_graphs):
        label = k % 2
        n0 = int(rng.integers(base_nodes[0], base_nodes[1] + 1))
        edges = random_tree(n0, rng)
        motif = np.arange(n0, n0 + motif_size)
        edges += [(int(motif[i]), int(motif[i + 1])) for i in range(motif_size - 1)]
        if label == 1:
            edges.append((int(motif[-1]), int(motif[0])))
        else:
            existing = {tuple(sorted(e)) for e in edges}
            while True:
                a, b = sorted(int(x) for x in rng.choice(n0, size=2, replace=False))
                if (a, b) not in existing:
                    edges.append((a, b))
                    break
        edges.append((int(rng.integers(n0)), int(motif[0])))
        n = n0 + motif_size
        feats = np.ones((n, 2))
        feats[:n0, 1] = 0.0
        graphs.append(Graph.build(n, edges, feats, label))
        motifs.append(motif)
    return GraphDataset("planted", graphs, 2), motifs


def random_graph_dataset(
    n_graphs: int = 60, seed: int = 0, nodes: tuple[int, int] = (8, 16), n_labels: int = 3, p: float = 0.25
) -> GraphDataset:
    """Erdős–Rényi graphs with one-hot random node labels; class = whether edges exceed the median density."""
    rng = np.random.default_rng(seed)
    graphs = []
    for _ in range(n_graphs):
        n = int(rng.integers(nodes[0], nodes[1] + 1))
        iu, ju = np.triu_indices(n, 1)
        keep = rng.random(len(iu)) < p
        feats = np.eye(n_labels)[rng.integers(n_labels, size=n)]
        graphs.append(Graph.build(n, np.stack([iu[keep], ju[keep]], 1), feats, 0))
    dens = np.array([g.edge_count / max(g.node_count, 1) for g in graphs])
    med = np.median(dens)
    graphs = [g.with_label(int(d > med)) for g, d in zip(graphs, dens)]
    return GraphDataset("random", graphs, 2)


def feature_node_task(
    n_nodes: int = 200,
    feature_dim: int = 30,
    informative: int = 7,
    seed: int = 0,
    avg_degree: float = 4.0,
    n_classes: int = 2,
) -> NodeTaskDataset:
    """Random graph with binary features; the label equals the value of one feature."""
    rng = np.random.default_rng(seed)
    X = (rng.random((n_nodes, feature_dim)) < 0.5).astype(np.float32)
    m = int(avg_degree * n_nodes / 2)
    pairs = rng.integers(n_nodes, size=(m, 2))
    y = X[:, informative].astype(np.int64) % n_classes
    g = Graph.build(n_nodes, pairs, X, None, y)
    return NodeTaskDataset("featuretask", g, np.zeros(n_nodes, bool), np.zeros(n_nodes, bool), n_classes)


def community_node_task(
    n_nodes: int = 300, feature_dim: int = 50, n_classes: int = 3, seed: int = 0, p_in: float = 0.04, p_out: float = 0.004
) -> NodeTaskDataset:
    """Stochastic block model with sparse binary class-correlated features (a toy citation graph)."""
    rng = np.random.default_rng(seed)
    y = rng.integers(n_classes, size=n_nodes)
    same = y[:, None] == y[None, :]
    prob = np.where(same, p_in, p_out)
    iu, ju = np.triu_indices(n_nodes, 1)
    keep = rng.random(len(iu)) < prob[iu, ju]
    base = rng.random((n_classes, feature_dim)) * 0.3
    X = (rng.random((n_nodes, feature_dim)) < base[y]).astype(np.float32)
    g = Graph.build(n_nodes, np.stack([iu[keep], ju[keep]], 1), X, None, y)
    return NodeTaskDataset("community", g, np.zeros(n_nodes, bool), np.zeros(n_nodes, bool), n_classes)


def write_citation_dataset(dataset: NodeTaskDataset, directory: str | Path, class_names: list[str] | None = None) -> Path:
    """Write a node task in the ``.content`` / ``.cites`` text format."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    g = dataset.graph
    names = class_names or [f"class_{c}" for c in range(dataset.class_count)]
    with (directory / f"{dataset.name}.content").open("w") as fh:
        for v in range(g.node_count):
            feats = "\t".join(str(int(x)) for x in g.node_features[v])
            fh.write(f"n{v}\t{feats}\t{names[g.node_labels[v]]}\n")
    with (directory / f"{dataset.name}.cites").open("w") as fh:
        for a, b in g.edges:
            fh.write(f"n{a}\tn{b}\n")
    return directory
