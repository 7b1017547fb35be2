"""Attack success rate, clean accuracy drop and the attack report format."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, EvaluationImpossibleError
from .graph import Graph, GraphDataset, NodeTaskDataset
from .models import GnnModel, accuracy, predict_graphs, predict_nodes_with_overrides

CSV_FIELDS = (
    "dataset",
    "model",
    "strategy",
    "gamma",
    "seed",
    "asr",
    "cad",
    "clean_acc_orig",
    "clean_acc_backdoor",
    "runtime_s",
)


@dataclass
class NodeTriggerSet:
    """Trigger-embedded evaluation nodes: each ``nodes[i]`` takes feature row ``rows[i]``."""

    graph: Graph
    nodes: np.ndarray
    rows: np.ndarray
    original_labels: np.ndarray

    def __len__(self) -> int:
        return len(self.nodes)


def asr_from_predictions(predicted: Sequence[int], target: int) -> float:
    predicted = np.asarray(predicted)
    if predicted.size == 0:
        raise EvaluationImpossibleError("attack success rate over an empty set")
    return float(np.count_nonzero(predicted == target)) / predicted.size


def attack_success_rate(model: GnnModel, backdoored: GraphDataset | NodeTriggerSet, target: int) -> float:
    if len(backdoored) == 0:
        raise EvaluationImpossibleError("attack success rate over an empty set")
    if isinstance(backdoored, NodeTriggerSet):
        probs = predict_nodes_with_overrides(model, backdoored.graph, backdoored.nodes, backdoored.rows)
    else:
        probs = predict_graphs(model, list(backdoored))
    return asr_from_predictions(probs.argmax(axis=1), target)


def clean_accuracy_drop(model_o: GnnModel, model_b: GnnModel, clean_test: GraphDataset | NodeTaskDataset) -> float:
    try:
        return accuracy(model_o, clean_test) - accuracy(model_b, clean_test)
    except DegenerateInputError as exc:
        raise EvaluationImpossibleError(str(exc)) from exc


@dataclass
class AttackReport:
    dataset: str
    model: str
    config: dict
    asr: float
    cad: float
    clean_accuracy_original: float
    clean_accuracy_backdoored: float
    skipped_items: int = 0
    poisoned_items: int = 0
    fallback_items: int = 0
    evaluated_items: int = 0
    runtimes: dict = field(default_factory=dict)
    trigger: str = ""

    @property
    def cad_abs(self) -> float:
        return abs(self.cad)

    @property
    def runtime_s(self) -> float:
        return float(sum(self.runtimes.values()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cad_abs"] = self.cad_abs
        return d

    def csv_row(self) -> dict:
        return {
            "dataset": self.dataset,
            "model": self.model,
            "strategy": self.config.get("strategy"),
            "gamma": self.config.get("gamma") if self.config.get("task") == "graph" else "",
            "seed": self.config.get("seed"),
            "asr": f"{self.asr:.6f}",
            "cad": f"{self.cad:.6f}",
            "clean_acc_orig": f"{self.clean_accuracy_original:.6f}",
            "clean_acc_backdoor": f"{self.clean_accuracy_backdoored:.6f}",
            "runtime_s": f"{self.runtime_s:.3f}",
        }

    def write_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str))
        return path

    @classmethod
    def read_json(cls, path: str | Path) -> AttackReport:
        d = json.loads(Path(path).read_text())
        d.pop("cad_abs", None)
        return cls(**d)


def write_csv_rows(path: str | Path, rows: Sequence[dict], fields: Sequence[str] = CSV_FIELDS) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fields})
    return path
