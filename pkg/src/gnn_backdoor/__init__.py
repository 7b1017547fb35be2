"""Explainability-guided backdoor attacks on graph neural networks."""

from .errors import BackdoorError
from .explainers import ExplainerConfig, ImportanceScores, explain_graph, explain_node_features, node_importance
from .graph import (
    Graph,
    GraphDataset,
    NodeTaskDataset,
    dataset_statistics,
    load_citation_dataset,
    load_tu_dataset,
    split_graph_dataset,
    split_node_dataset,
)
from .metrics import AttackReport, attack_success_rate, clean_accuracy_drop
from .models import GnnModel, ModelConfig, accuracy, build_model, predict_graph, predict_nodes, train
from .poison import AttackConfig, SelectionStrategy
from .runner import ExperimentSpec, build_spec, run_graph_attack, run_node_attack, sweep_gamma
from .triggers import FeatureTrigger, TriggerGraph, generate_er_trigger

__version__ = "0.1.0"
