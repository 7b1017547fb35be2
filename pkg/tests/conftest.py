from pathlib import Path

import numpy as np
import pytest

from gnn_backdoor.graph import Graph, GraphDataset

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {criterion}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def toy_tu_dir(tmp_path: Path) -> Path:
    """Two graphs: a triangle (label 1) and a single edge (label 2), arcs listed both ways."""
    d = tmp_path / "TOY"
    d.mkdir()
    (d / "TOY_A.txt").write_text("1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n")
    (d / "TOY_graph_indicator.txt").write_text("1\n1\n1\n2\n2\n")
    (d / "TOY_graph_labels.txt").write_text("1\n2\n")
    (d / "TOY_node_labels.txt").write_text("0\n1\n0\n2\n2\n")
    return d


@pytest.fixture
def toy_citation_dir(tmp_path: Path) -> Path:
    d = tmp_path / "toy"
    d.mkdir()
    (d / "toy.content").write_text("p1\t0\t1\tB\np2\t1\t0\tA\np3\t1\t1\tB\n")
    (d / "toy.cites").write_text("p1\tp2\np3\tp2\np3\tghost\n")
    return d


def path_graph(n: int, features=None) -> Graph:
    feats = np.ones((n, 1)) if features is None else features
    return Graph.build(n, [(i, i + 1) for i in range(n - 1)], feats)


def random_graph(rng: np.random.Generator, n: int, p: float = 0.3, d: int = 3, label: int = 0) -> Graph:
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return Graph.build(n, np.stack([iu[keep], ju[keep]], 1), rng.random((n, d)), label)


def random_dataset(seed: int, n_graphs: int = 30, d: int = 3, classes: int = 2) -> GraphDataset:
    rng = np.random.default_rng(seed)
    graphs = [random_graph(rng, int(rng.integers(4, 12)), d=d, label=int(rng.integers(classes))) for _ in range(n_graphs)]
    return GraphDataset("rand", graphs, classes)
