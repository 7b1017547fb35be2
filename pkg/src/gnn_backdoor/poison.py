"""Trigger placement strategies (RSA / MIA / LIA) and dataset poisoning for both tasks."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ArgumentError,
    EvaluationImpossibleError,
    InsufficientSamplesError,
    PoisoningFailedError,
    SkipItem,
)
from .explainers import (
    ExplainerConfig,
    ImportanceScores,
    explain_graphs,
    explain_node_features,
    node_importance,
)
from .graph import Graph, GraphDataset, NodeTaskDataset, canonical_edges
from .models import GnnModel, predict_nodes
from .triggers import FeatureTrigger, TriggerGraph, build_feature_trigger, feature_trigger_size, round_half_up

log = logging.getLogger(__name__)


class SelectionStrategy(str, Enum):
    RSA = "RSA"
    MIA = "MIA"
    LIA = "LIA"


@dataclass
class AttackConfig:
    task: str = "graph"
    strategy: SelectionStrategy = SelectionStrategy.RSA
    target_class: int = 0
    gamma: float = 0.2
    rho: float = 0.8
    eta: float = 0.05
    poison_fraction: float = 0.15
    feature_fraction: float = 0.1
    fill_value: float = 1.0
    seed: int = 0

    def __post_init__(self):
        self.strategy = SelectionStrategy(self.strategy)
        if self.task not in ("graph", "node"):
            raise ArgumentError(f"unknown task {self.task!r}")
        for name in ("gamma", "eta", "poison_fraction", "feature_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ArgumentError(f"{name} must lie in (0, 1], got {v}")
        if not 0.0 <= self.rho <= 1.0:
            raise ArgumentError(f"rho must lie in [0, 1], got {self.rho}")

    def check_target(self, class_count: int) -> None:
        if not 0 <= self.target_class < class_count:
            raise ArgumentError(f"target class {self.target_class} invalid for {class_count} classes")


@dataclass
class ManifestEntry:
    item_id: int
    strategy: str
    indices: list[int]
    trigger_hash: str
    note: str = ""


@dataclass
class PoisonResult:
    dataset: GraphDataset | NodeTaskDataset
    poisoned_ids: list[int]
    skipped: int = 0
    fallbacks: int = 0
    manifest: list[ManifestEntry] = field(default_factory=list)
    triggers: dict[int, FeatureTrigger] = field(default_factory=dict)
    shared_trigger: FeatureTrigger | None = None
    importances: list[ImportanceScores] = field(default_factory=list)
    explain_seconds: float = 0.0

    def __iter__(self):
        yield self.dataset
        yield self.poisoned_ids


def _item_seed(seed: int, item: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(item)])


def _rank(scores: np.ndarray, count: int, largest: bool) -> np.ndarray:
    idx = np.arange(len(scores))
    order = np.lexsort((idx, -scores if largest else scores))
    return np.sort(order[:count])


# --------------------------------------------------------------------------- graph task


def select_trigger_nodes(
    graph: Graph, importance: ImportanceScores | None, t: int, strategy, seed: int
) -> list[int]:
    """Pick ``t`` host nodes; ties in importance go to the lower node index."""
    strategy = SelectionStrategy(strategy)
    if t > graph.node_count:
        raise SkipItem(f"trigger of {t} nodes does not fit a graph of {graph.node_count}")
    if strategy is SelectionStrategy.RSA:
        chosen = np.random.default_rng(seed).choice(graph.node_count, size=t, replace=False)
        return sorted(int(i) for i in chosen)
    if importance is None:
        raise ArgumentError(f"{strategy.value} requires importance scores")
    if len(importance.scores) != graph.node_count:
        raise ArgumentError("importance length differs from node count")
    return [int(i) for i in _rank(importance.scores, t, strategy is SelectionStrategy.MIA)]


def inject_graph_trigger(graph: Graph, nodes: Sequence[int], trigger: TriggerGraph) -> Graph:
    """Replace the edges among ``nodes`` by the trigger's edges.

    Trigger node ``i`` maps to the ``i``-th selected node in ascending order;
    every edge with at most one endpoint in the selection is kept.
    """
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    if len(nodes) != trigger.node_count or len(np.unique(nodes)) != len(nodes):
        raise ArgumentError(f"need {trigger.node_count} distinct nodes, got {len(nodes)}")
    if len(nodes) and (nodes[0] < 0 or nodes[-1] >= graph.node_count):
        raise ArgumentError("selected node out of range")
    inside = np.zeros(graph.node_count, dtype=bool)
    inside[nodes] = True
    e = graph.edges
    kept = e[~(inside[e[:, 0]] & inside[e[:, 1]])] if len(e) else e
    added = nodes[trigger.edges] if len(trigger.edges) else np.zeros((0, 2), dtype=np.int64)
    return replace(graph, edges=canonical_edges(np.concatenate([kept, added])))


def _graph_placements(
    graphs: Sequence[Graph],
    ids: Sequence[int],
    model_o: GnnModel | None,
    config: AttackConfig,
    trigger: TriggerGraph,
    explainer: ExplainerConfig | None,
    timing: dict,
):
    """Yield ``(id, graph, nodes | None, importance | None)`` for each candidate; None nodes = skipped."""
    fits = [g.node_count >= trigger.node_count for g in graphs]
    importances: dict[int, ImportanceScores] = {}
    if config.strategy is not SelectionStrategy.RSA:
        if model_o is None:
            raise ArgumentError(f"{config.strategy.value} needs the clean model for importance")
        todo = [(i, g) for i, g, ok in zip(ids, graphs, fits) if ok]
        start = time.perf_counter()
        masks = explain_graphs(model_o, [g for _, g in todo], explainer, [i for i, _ in todo])
        timing["explain"] = time.perf_counter() - start
        for (i, g), m in zip(todo, masks):
            importances[i] = node_importance(m, g.node_count, subject=i)
    for i, g, ok in zip(ids, graphs, fits):
        if not ok:
            yield i, g, None, None
            continue
        imp = importances.get(i)
        seed = int(_item_seed(config.seed, i).integers(2**31))
        yield i, g, select_trigger_nodes(g, imp, trigger.node_count, config.strategy, seed), imp


def poison_graph_training_set(
    train: GraphDataset,
    model_o: GnnModel | None,
    config: AttackConfig,
    trigger: TriggerGraph,
    explainer: ExplainerConfig | None = None,
) -> PoisonResult:
    """Inject ``trigger`` into ``round(eta * |train|)`` uniformly chosen graphs and relabel them.

    Graphs too small to host the trigger are skipped and counted, never replaced.
    """
    config.check_target(train.class_count)
    count = round_half_up(config.eta * len(train))
    if count == 0:
        raise PoisoningFailedError(f"eta={config.eta} poisons no graph out of {len(train)}")
    chosen = np.sort(np.random.default_rng(config.seed).choice(len(train), size=count, replace=False))
    graphs = list(train.graphs)
    result = PoisonResult(train, [])
    timing: dict = {}
    for i, g, nodes, imp in _graph_placements(
        [graphs[i] for i in chosen], [int(i) for i in chosen], model_o, config, trigger, explainer, timing
    ):
        if nodes is None:
            result.skipped += 1
            result.manifest.append(ManifestEntry(i, config.strategy.value, [], trigger.digest(), "skipped"))
            continue
        graphs[i] = inject_graph_trigger(g, nodes, trigger).with_label(config.target_class)
        result.poisoned_ids.append(i)
        result.manifest.append(ManifestEntry(i, config.strategy.value, nodes, trigger.digest()))
        if imp is not None:
            result.importances.append(imp)
    if not result.poisoned_ids:
        raise PoisoningFailedError("every candidate graph was skipped")
    result.dataset = GraphDataset(train.name, graphs, train.class_count)
    result.explain_seconds = timing.get("explain", 0.0)
    return result


def build_backdoored_test_set(
    test: GraphDataset,
    model_o: GnnModel | None,
    config: AttackConfig,
    trigger: TriggerGraph,
    explainer: ExplainerConfig | None = None,
) -> PoisonResult:
    """Trigger-embedded copies of every non-target test graph; original labels kept."""
    ids = [i for i, g in enumerate(test.graphs) if g.graph_label != config.target_class]
    result = PoisonResult(test, [])
    out = []
    timing: dict = {}
    for i, g, nodes, imp in _graph_placements(
        [test.graphs[i] for i in ids], ids, model_o, config, trigger, explainer, timing
    ):
        if nodes is None:
            result.skipped += 1
            continue
        out.append(inject_graph_trigger(g, nodes, trigger))
        result.poisoned_ids.append(i)
        result.manifest.append(ManifestEntry(i, config.strategy.value, nodes, trigger.digest(), "test"))
    if not out:
        raise EvaluationImpossibleError("no non-target test graph can carry the trigger")
    result.dataset = GraphDataset(test.name, out, test.class_count)
    result.explain_seconds = timing.get("explain", 0.0)
    return result


# --------------------------------------------------------------------------- node task


def select_trigger_features(
    importance: ImportanceScores | None, n: int, strategy, seed: int, feature_dim: int
) -> list[int]:
    strategy = SelectionStrategy(strategy)
    if n > feature_dim or n < 1:
        raise ArgumentError(f"cannot select {n} of {feature_dim} features")
    if strategy is SelectionStrategy.RSA:
        return sorted(int(i) for i in np.random.default_rng(seed).choice(feature_dim, size=n, replace=False))
    if importance is None:
        raise ArgumentError(f"{strategy.value} requires importance scores")
    return [int(i) for i in _rank(importance.scores, n, strategy is SelectionStrategy.MIA)]


def inject_feature_trigger(features: np.ndarray, trigger: FeatureTrigger) -> np.ndarray:
    features = np.asarray(features)
    if len(trigger.indices) and (trigger.indices.min() < 0 or trigger.indices.max() >= features.shape[-1]):
        raise ArgumentError("trigger index outside the feature vector")
    out = features.copy()
    out[..., trigger.indices] = trigger.fill_value
    return out


def node_triggers(
    dataset: NodeTaskDataset,
    model_o: GnnModel | None,
    config: AttackConfig,
    nodes: Sequence[int],
    explainer: ExplainerConfig | None = None,
    probs: np.ndarray | None = None,
) -> tuple[dict[int, FeatureTrigger], FeatureTrigger, int, list[ImportanceScores]]:
    """Feature trigger for every node in ``nodes``.

    RSA shares one random index set; MIA/LIA derive a per-node set from the
    node's feature importance under the clean model, falling back to the
    shared set when the neighbourhood is too small to explain.
    Returns ``(triggers, shared, fallback_count, importances)``.
    """
    d = dataset.graph.feature_dim
    n = feature_trigger_size(d, config.feature_fraction)
    shared = build_feature_trigger(
        select_trigger_features(None, n, SelectionStrategy.RSA, config.seed, d), config.fill_value, d
    )
    if config.strategy is SelectionStrategy.RSA:
        return {int(v): shared for v in nodes}, shared, 0, []
    if model_o is None:
        raise ArgumentError(f"{config.strategy.value} needs the clean model for importance")
    if probs is None:
        probs = predict_nodes(model_o, dataset.graph)
    neighbors = dataset.graph.neighbors()
    triggers, fallbacks, imps = {}, 0, []
    for v in nodes:
        try:
            imp = explain_node_features(model_o, dataset, int(v), explainer, probs=probs, neighbors=neighbors)
        except InsufficientSamplesError:
            triggers[int(v)] = shared
            fallbacks += 1
            continue
        imps.append(imp)
        idx = select_trigger_features(imp, n, config.strategy, config.seed, d)
        triggers[int(v)] = build_feature_trigger(idx, config.fill_value, d)
    if fallbacks:
        log.info("%d node(s) fell back to the random trigger", fallbacks)
    return triggers, shared, fallbacks, imps


def poison_node_training_set(
    dataset: NodeTaskDataset,
    model_o: GnnModel | None,
    config: AttackConfig,
    explainer: ExplainerConfig | None = None,
) -> PoisonResult:
    """Trigger and relabel ``round(poison_fraction * |train|)`` labelled training nodes."""
    config.check_target(dataset.class_count)
    train_nodes = dataset.train_nodes
    count = round_half_up(config.poison_fraction * len(train_nodes))
    if count == 0:
        raise PoisoningFailedError("poison fraction selects no training node")
    chosen = np.sort(np.random.default_rng(config.seed).choice(train_nodes, size=count, replace=False))
    start = time.perf_counter()
    triggers, shared, fallbacks, imps = node_triggers(dataset, model_o, config, chosen, explainer)
    explain_seconds = time.perf_counter() - start
    feats = dataset.graph.node_features.copy()
    labels = dataset.graph.node_labels.copy()
    manifest = []
    for v in chosen:
        trig = triggers[int(v)]
        feats[v] = inject_feature_trigger(feats[v], trig)
        labels[v] = config.target_class
        manifest.append(ManifestEntry(int(v), config.strategy.value, trig.indices.tolist(), trig.digest()))
    graph = replace(dataset.graph, node_features=feats, node_labels=labels)
    return PoisonResult(
        replace(dataset, graph=graph),
        [int(v) for v in chosen],
        fallbacks=fallbacks,
        manifest=manifest,
        triggers=triggers,
        shared_trigger=shared,
        importances=imps,
        explain_seconds=explain_seconds,
    )


def write_manifest(path: str | Path, entries: Sequence[ManifestEntry]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        fh.write("item_id\tstrategy\tindices\ttrigger_hash\tnote\n")
        for e in entries:
            fh.write(f"{e.item_id}\t{e.strategy}\t{' '.join(map(str, e.indices))}\t{e.trigger_hash}\t{e.note}\n")
    return path
