import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gnn_backdoor.errors import CheckpointVersionError, DegenerateInputError, ShapeError, TrainingDivergedError
from gnn_backdoor.graph import Graph, GraphDataset, split_node_dataset
from gnn_backdoor.models import (
    CHECKPOINT_VERSION,
    GINLayer,
    ModelConfig,
    SAGELayer,
    accuracy,
    aggregate_layer,
    build_model,
    collate,
    load_checkpoint,
    predict_graph,
    predict_graphs,
    predict_nodes,
    predict_nodes_with_overrides,
    readout,
    save_checkpoint,
    train,
)
from gnn_backdoor.synthetic import community_node_task

from .conftest import path_graph, random_dataset, random_graph

ARCHS = ["GIN", "GraphSAGE", "GAT"]


def small_config(arch, **kw):
    base = dict(architecture=arch, layer_count=2, hidden_dim=8, attention_heads=2, epochs=5, seed=0)
    base.update(kw)
    return ModelConfig(**base)


def test_sage_neighbor_mean_on_path():
    layer = SAGELayer(1, 1)
    g = Graph.build(2, [(0, 1)], [[2.0], [4.0]])
    b = collate([g])
    # no isolated node: the mean is the single neighbour's feature
    np.testing.assert_allclose(layer.neighbor_mean(b.x, b.src, b.dst).numpy(), [[4.0], [2.0]])


def test_gin_layer_sums_neighbours():
    layer = GINLayer(1, 1)
    with torch.no_grad():
        for lin in (layer.lin1, layer.lin2):
            lin.weight.fill_(1.0)
            lin.bias.zero_()
    g = path_graph(3, np.array([[1.0], [2.0], [4.0]]))
    b = collate([g])
    # (1+0)*x_v + sum of neighbours, then relu(lin1) and lin2 with unit weights
    np.testing.assert_allclose(layer(b.x, b.src, b.dst).detach().numpy().ravel(), [3.0, 7.0, 6.0])


def test_readout_sum_and_mean():
    z = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(readout(z, "sum"), [4.0, 6.0])
    np.testing.assert_allclose(readout(z, "mean"), [2.0, 3.0])


def test_readout_empty_graph():
    with pytest.raises(DegenerateInputError):
        readout(np.zeros((0, 2)), "sum")


def test_aggregate_shape_mismatch():
    layer = SAGELayer(3, 4)
    g = path_graph(3, np.ones((3, 2)))
    b = collate([g])
    with pytest.raises(ShapeError):
        aggregate_layer(layer, b.x, b.src, b.dst)


@pytest.mark.parametrize("arch", ARCHS)
def test_probabilities_normalised(arch):
    ds = random_dataset(1, n_graphs=10)
    model = build_model(small_config(arch), ds.feature_dim, 2)
    probs = predict_graphs(model, list(ds))
    assert probs.shape == (10, 2)
    assert np.all(probs >= 0)
    np.testing.assert_allclose(probs.sum(1), 1.0, atol=1e-6)


@pytest.mark.parametrize("arch", ARCHS)
def test_permutation_invariance(arch):
    rng = np.random.default_rng(5)
    model = build_model(small_config(arch), 3, 2)
    for _ in range(5):
        g = random_graph(rng, 9, p=0.4)
        perm = rng.permutation(g.node_count)
        np.testing.assert_allclose(predict_graph(model, g), predict_graph(model, g.permuted(perm)), atol=1e-5)


@pytest.mark.parametrize("arch", ARCHS)
def test_node_predictions_equivariant(arch):
    rng = np.random.default_rng(6)
    model = build_model(small_config(arch), 3, 3, task="node")
    g = random_graph(rng, 10, p=0.3)
    perm = rng.permutation(10)
    a = predict_nodes(model, g)
    b = predict_nodes(model, g.permuted(perm))
    np.testing.assert_allclose(a[perm], b, atol=1e-5)


@pytest.mark.parametrize("arch", ARCHS)
def test_gradient_check_float64(arch):
    g = Graph.build(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)], np.random.default_rng(0).random((5, 3)))
    model = build_model(small_config(arch, hidden_dim=4), 3, 2).double()
    b = collate([g], dtype=torch.float64)
    x = b.x.clone().requires_grad_(True)

    def f(inp):
        b.x = inp
        return model(b)

    assert torch.autograd.gradcheck(f, (x,), eps=1e-6, atol=1e-6, rtol=1e-4)


@pytest.mark.parametrize("arch", ARCHS)
def test_training_is_deterministic(arch):
    ds = random_dataset(2, n_graphs=20)
    _, h1 = train(build_model(small_config(arch), ds.feature_dim, 2), ds)
    _, h2 = train(build_model(small_config(arch), ds.feature_dim, 2), ds)
    assert h1 == h2 and len(h1) == 5


def test_training_divergence_reported():
    ds = random_dataset(3, n_graphs=10)
    bad = [Graph.build(g.node_count, g.edges, np.full_like(g.node_features, np.nan), g.graph_label) for g in ds]
    model = build_model(small_config("GIN"), ds.feature_dim, 2)
    with pytest.raises(TrainingDivergedError) as info:
        train(model, GraphDataset("nan", bad, 2))
    assert info.value.epoch == 0


def test_training_learns_separable_task():
    # class = whether the graph has any edges at all; trivially separable by a sum readout
    rng = np.random.default_rng(0)
    graphs = []
    for i in range(60):
        n = int(rng.integers(4, 8))
        edges = [(j, j + 1) for j in range(n - 1)] if i % 2 else []
        graphs.append(Graph.build(n, edges, np.ones((n, 1)), i % 2))
    ds = GraphDataset("sep", graphs, 2)
    model, hist = train(build_model(small_config("GIN", epochs=60), 1, 2), ds)
    assert hist[-1] < hist[0]
    assert accuracy(model, ds) == 1.0


def test_accuracy_three_of_four():
    class Fixed(torch.nn.Module):
        class_count = 2

        def forward(self, batch, *a, **k):
            return torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 0.0]])

    g = path_graph(2)
    ds = GraphDataset("x", [g.with_label(0), g.with_label(1), g.with_label(0), g.with_label(1)], 2)
    assert accuracy(Fixed(), ds) == 0.75


def test_accuracy_empty_split():
    model = build_model(small_config("GIN"), 1, 2)
    with pytest.raises(DegenerateInputError):
        accuracy(model, GraphDataset("e", [], 2))


def test_node_training_and_isolated_predictions():
    ds = split_node_dataset(community_node_task(n_nodes=80, feature_dim=6, n_classes=3, seed=1), 0.5, 0)
    cfg = ModelConfig.node_default("GraphSAGE", hidden_dim=8, epochs=30)
    model, _ = train(build_model(cfg, ds.graph.feature_dim, ds.class_count, task="node"), ds)
    nodes = ds.test_nodes[:10]
    iso = predict_nodes_with_overrides(model, ds.graph, nodes, ds.graph.node_features[nodes])
    np.testing.assert_allclose(iso, predict_nodes(model, ds.graph)[nodes], atol=1e-5)


def test_checkpoint_round_trip(tmp_path):
    ds = random_dataset(4, n_graphs=8)
    model = build_model(small_config("GAT"), ds.feature_dim, 2)
    path = save_checkpoint(model, tmp_path / "m.npz")
    back = load_checkpoint(path)
    np.testing.assert_allclose(predict_graphs(model, list(ds)), predict_graphs(back, list(ds)), atol=1e-7)


def test_checkpoint_version_rejected(tmp_path):
    import json

    model = build_model(small_config("GIN"), 3, 2)
    path = save_checkpoint(model, tmp_path / "m.npz")
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    meta = json.loads(str(arrays["__meta__"]))
    meta["version"] = CHECKPOINT_VERSION + 1
    arrays["__meta__"] = np.array(json.dumps(meta))
    np.savez(tmp_path / "old.npz", **arrays)
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "old.npz")


def test_feature_dim_mismatch():
    model = build_model(small_config("GIN"), 3, 2)
    with pytest.raises(ShapeError):
        predict_graph(model, path_graph(3))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 12))
def test_property_normalisation_and_invariance(seed, n):
    rng = np.random.default_rng(seed)
    arch = ARCHS[seed % 3]
    model = _shared_models()[arch]
    g = random_graph(rng, n, p=0.4)
    p = predict_graph(model, g)
    assert abs(p.sum() - 1.0) <= 1e-6
    np.testing.assert_allclose(p, predict_graph(model, g.permuted(rng.permutation(n))), atol=1e-5)


_MODELS: dict = {}


def _shared_models():
    if not _MODELS:
        for arch in ARCHS:
            _MODELS[arch] = build_model(small_config(arch), 3, 2)
    return _MODELS
