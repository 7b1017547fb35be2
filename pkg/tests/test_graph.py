import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnn_backdoor.errors import ArgumentError, IngestionError, MalformedDatasetError
from gnn_backdoor.graph import (
    Graph,
    GraphDataset,
    dataset_statistics,
    load_citation_dataset,
    load_tu_dataset,
    split_graph_dataset,
    split_node_dataset,
    validate_graph,
    write_tu_dataset,
)
from gnn_backdoor.synthetic import community_node_task, random_graph_dataset

from .conftest import random_dataset


def test_load_tu_toy(toy_tu_dir):
    ds = load_tu_dataset(toy_tu_dir)
    assert len(ds) == 2 and ds.class_count == 2
    assert [g.node_count for g in ds] == [3, 2]
    assert ds[0].edge_set() == {(0, 1), (1, 2), (0, 2)}
    assert ds[1].edge_set() == {(0, 1)}
    assert [g.graph_label for g in ds] == [0, 1]
    # one-hot over node labels {0,1,2}
    np.testing.assert_array_equal(ds[0].node_features, [[1, 0, 0], [0, 1, 0], [1, 0, 0]])


def test_load_tu_without_node_labels(toy_tu_dir):
    (toy_tu_dir / "TOY_node_labels.txt").unlink()
    ds = load_tu_dataset(toy_tu_dir)
    assert ds.feature_dim == 1
    assert np.all(ds[0].node_features == 1)


def test_load_tu_missing_file_named(toy_tu_dir):
    (toy_tu_dir / "TOY_graph_labels.txt").unlink()
    with pytest.raises(IngestionError, match="TOY_graph_labels.txt"):
        load_tu_dataset(toy_tu_dir)


def test_load_tu_unknown_node(toy_tu_dir):
    (toy_tu_dir / "TOY_A.txt").write_text("1, 2\n2, 9\n")
    with pytest.raises(MalformedDatasetError):
        load_tu_dataset(toy_tu_dir)


def test_tu_round_trip(tmp_path):
    ds = random_graph_dataset(25, seed=3)
    write_tu_dataset(ds, tmp_path / "random")
    back = load_tu_dataset(tmp_path / "random")
    assert len(back) == len(ds)
    for a, b in zip(ds, back):
        assert a.edge_set() == b.edge_set()
        assert a.graph_label == b.graph_label
        assert a.node_count == b.node_count


def test_load_citation_toy(toy_citation_dir, caplog):
    ds = load_citation_dataset(toy_citation_dir)
    g = ds.graph
    assert g.node_count == 3 and g.edge_count == 2
    assert g.edge_set() == {(0, 1), (1, 2)}
    assert list(g.node_labels) == [1, 0, 1]  # A < B lexicographically
    assert ds.meta["dropped_citations"] == 1
    assert "dropped 1 citation" in caplog.text


def test_load_citation_class_order(toy_citation_dir):
    ds = load_citation_dataset(toy_citation_dir, class_order=["B", "A"])
    assert list(ds.graph.node_labels) == [0, 1, 0]


def test_load_citation_duplicate_id(toy_citation_dir):
    (toy_citation_dir / "toy.content").write_text("p1\t0\tA\np1\t1\tB\n")
    with pytest.raises(MalformedDatasetError, match="duplicate"):
        load_citation_dataset(toy_citation_dir)


def test_split_graph_sizes_and_determinism():
    ds = random_dataset(0, n_graphs=3)
    tr, te = split_graph_dataset(ds, 2 / 3, 7)
    assert (len(tr), len(te)) == (2, 1)
    tr2, _ = split_graph_dataset(ds, 2 / 3, 7)
    assert [id(g) for g in tr] == [id(g) for g in tr2]


def test_split_graph_floor_for_mutagenicity_size():
    ds = GraphDataset("m", [Graph.build(1, [], [[1.0]], 0)] * 4337, 2)
    tr, te = split_graph_dataset(ds, 2 / 3, 0)
    assert (len(tr), len(te)) == (2891, 1446) == (math.floor(2 / 3 * 4337), 4337 - 2891)


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
def test_split_fraction_out_of_range(frac):
    with pytest.raises(ArgumentError):
        split_graph_dataset(random_dataset(0), frac, 0)
    with pytest.raises(ArgumentError):
        split_node_dataset(community_node_task(n_nodes=20), frac, 0)


@pytest.mark.parametrize("n, expected", [(2708, 541), (3327, 665)])
def test_split_node_counts(n, expected):
    ds = community_node_task(n_nodes=n, feature_dim=3, p_in=0.0, p_out=0.0)
    s = split_node_dataset(ds, 0.2, 0)
    assert s.train_mask.sum() == expected
    assert not np.any(s.train_mask & s.test_mask)
    assert np.all(s.train_mask | s.test_mask)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 60), frac=st.floats(0.01, 0.99), seed=st.integers(0, 10_000))
def test_split_partitions(n, frac, seed):
    ds = GraphDataset("x", [Graph.build(1, [], [[float(i)]], 0) for i in range(n)], 1)
    tr, te = split_graph_dataset(ds, frac, seed)
    ids_tr = {id(g) for g in tr}
    ids_te = {id(g) for g in te}
    assert not ids_tr & ids_te
    assert ids_tr | ids_te == {id(g) for g in ds}
    assert len(tr) == math.floor(frac * n)


def test_statistics_triangle():
    tri = Graph.build(3, [(0, 1), (1, 2), (0, 2)], np.ones((3, 1)), 0)
    stats = dataset_statistics(GraphDataset("t", [tri], 1))
    assert stats["avg_nodes"] == 3 and stats["avg_edges"] == 3
    assert stats["class_histogram"] == {0: 1}


def test_statistics_node_task():
    ds = community_node_task(n_nodes=50, n_classes=3)
    stats = dataset_statistics(ds)
    assert sum(stats["class_histogram"].values()) == 50
    assert stats["graph_count"] == 1


def test_loader_outputs_validate(toy_tu_dir, toy_citation_dir):
    for g in load_tu_dataset(toy_tu_dir):
        validate_graph(g)
    validate_graph(load_citation_dataset(toy_citation_dir).graph)


def test_validator_rejects_bad_graph():
    bad = Graph(3, np.array([[0, 5]]), np.ones((3, 1)))
    with pytest.raises(MalformedDatasetError):
        validate_graph(bad)
    loop = Graph(3, np.array([[1, 1]]), np.ones((3, 1)))
    with pytest.raises(MalformedDatasetError):
        validate_graph(loop)


def test_build_canonicalises_edges():
    g = Graph.build(3, [(1, 0), (0, 1), (2, 2), (2, 1)], np.ones((3, 1)))
    assert g.edge_set() == {(0, 1), (1, 2)}
