"""End-to-end attack experiments, trigger-size sweeps and table emission.

A run executes train-clean -> explain -> poison -> train-backdoored -> evaluate
and writes a self-describing directory::

    <out>/<dataset>_<model>_<strategy>_g<gamma>_s<seed>/
        spec.cfg  report.json  row.csv  manifest.tsv  trigger.txt
        clean.npz  backdoor.npz
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import synthetic
from .errors import ArgumentError, EmptyInputError, IngestionError, PhaseError, SchemaError
from .explainers import ExplainerConfig
from .graph import (
    PLANETOID_CLASS_ORDER,
    GraphDataset,
    NodeTaskDataset,
    dataset_statistics,
    load_citation_dataset,
    load_tu_dataset,
    split_graph_dataset,
    split_node_dataset,
)
from .metrics import CSV_FIELDS, AttackReport, NodeTriggerSet, attack_success_rate, clean_accuracy_drop, write_csv_rows
from .models import GnnModel, ModelConfig, accuracy, build_model, save_checkpoint, train
from .poison import (
    AttackConfig,
    SelectionStrategy,
    build_backdoored_test_set,
    inject_feature_trigger,
    node_triggers,
    poison_graph_training_set,
    poison_node_training_set,
    write_manifest,
)
from .triggers import generate_er_trigger, trigger_size_from_gamma

log = logging.getLogger(__name__)

DATA_ENV = "GNN_BACKDOOR_DATA"
SWEEP_FIELDS = ("gamma", "strategy", "seed", "asr", "cad")

# target classes and task family of the benchmark datasets
KNOWN_DATASETS = {
    "mutagenicity": ("graph", 1),
    "facebook_ct1": ("graph", 0),
    "cora": ("node", 6),
    "citeseer": ("node", 5),
}
SYNTHETIC = {"synthetic-graph": "graph", "synthetic-node": "node"}


@dataclass
class ExperimentSpec:
    dataset: str
    task: str = "graph"
    data_path: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    explainer: ExplainerConfig = field(default_factory=ExplainerConfig)
    repetitions: int = 3
    out: str = "runs"
    train_fraction: float | None = None

    def __post_init__(self):
        if self.repetitions < 1:
            raise ArgumentError("repetitions must be >= 1")
        if self.train_fraction is None:
            self.train_fraction = 2 / 3 if self.task == "graph" else 0.2

    def to_flat(self) -> dict:
        flat = {"dataset": self.dataset, "task": self.task, "data_path": self.data_path or "",
                "repetitions": self.repetitions, "out": self.out, "train_fraction": self.train_fraction}
        flat.update({f"model.{k}": v for k, v in asdict(self.model).items()})
        flat.update({f"attack.{k}": (v.value if isinstance(v, SelectionStrategy) else v)
                     for k, v in asdict(self.attack).items()})
        flat.update({f"explainer.{k}": v for k, v in asdict(self.explainer).items()})
        return flat


# --------------------------------------------------------------------------- config files


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArgumentError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_config(path: str | Path, flat: dict) -> Path:
    path = Path(path)
    path.write_text("".join(f"{k} = {v}\n" for k, v in flat.items()))
    return path


def _coerce(value: str, like):
    if isinstance(like, bool):
        return str(value).lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def build_spec(settings: dict) -> ExperimentSpec:
    """Build a spec from flat settings (config-file keys, short CLI names or dotted names)."""
    s = {k: v for k, v in settings.items() if v is not None and v != ""}
    dataset = s.get("dataset")
    if not dataset:
        raise ArgumentError("a dataset is required")
    key = str(dataset).lower()
    task_default, target_default = KNOWN_DATASETS.get(key, (SYNTHETIC.get(key, "graph"), 0))
    task = s.get("task", task_default)
    arch = s.get("model", s.get("model.architecture", "GIN" if task == "graph" else "GAT"))
    mcfg = ModelConfig.graph_default(arch) if task == "graph" else ModelConfig.node_default(arch)
    short = {"epochs": "epochs", "hidden_dim": "hidden_dim", "layers": "layer_count", "lr": "learning_rate",
             "heads": "attention_heads", "dropout": "dropout", "batch_size": "batch_size", "readout": "readout",
             "weight_decay": "weight_decay"}
    m_over = {}
    for k, v in s.items():
        name = k[len("model."):] if k.startswith("model.") else short.get(k)
        if name and name != "architecture" and hasattr(mcfg, name):
            m_over[name] = _coerce(v, getattr(mcfg, name))
    mcfg = replace(mcfg, **m_over)

    acfg_kwargs = {"task": task, "target_class": target_default}
    a_short = {"strategy": "strategy", "gamma": "gamma", "rho": "rho", "eta": "eta", "target": "target_class",
               "seed": "seed", "poison_fraction": "poison_fraction", "feature_fraction": "feature_fraction",
               "fill_value": "fill_value"}
    proto = AttackConfig()
    for k, v in s.items():
        name = k[len("attack."):] if k.startswith("attack.") else a_short.get(k)
        if name and name != "task" and hasattr(proto, name):
            acfg_kwargs[name] = v if name == "strategy" else _coerce(v, getattr(proto, name))
    acfg = AttackConfig(**acfg_kwargs)
    mcfg = replace(mcfg, seed=acfg.seed)

    ecfg = ExplainerConfig()
    e_over = {k[len("explainer."):]: v for k, v in s.items() if k.startswith("explainer.")}
    ecfg = replace(ecfg, **{k: _coerce(v, getattr(ecfg, k)) for k, v in e_over.items() if hasattr(ecfg, k)})
    ecfg = replace(ecfg, seed=acfg.seed)

    return ExperimentSpec(
        dataset=str(dataset),
        task=task,
        data_path=s.get("data_path"),
        model=mcfg,
        attack=acfg,
        explainer=ecfg,
        repetitions=int(s.get("reps", s.get("repetitions", 3))),
        out=str(s.get("out", "runs")),
        train_fraction=float(s["train_fraction"]) if "train_fraction" in s else None,
    )


# --------------------------------------------------------------------------- dataset resolution


def resolve_dataset_dir(name: str, data_path: str | None = None) -> Path:
    if data_path:
        p = Path(data_path)
        if p.is_dir():
            return p
        raise IngestionError(f"dataset directory not found: {p}")
    root = Path(os.environ.get(DATA_ENV, "data"))
    for cand in (name, name.lower(), name.capitalize()):
        if (root / cand).is_dir():
            return root / cand
    raise IngestionError(f"dataset {name!r} not found under {root} (set {DATA_ENV} or pass data_path)")


def _dataset_file_stem(directory: Path, suffix: str) -> str:
    hits = sorted(directory.glob(f"*{suffix}"))
    if not hits:
        raise IngestionError(f"no *{suffix} file in {directory}")
    return hits[0].name[: -len(suffix)]


def load_dataset(name: str, task: str, data_path: str | None = None, seed: int = 0) -> GraphDataset | NodeTaskDataset:
    key = name.lower()
    if key == "synthetic-graph":
        return synthetic.planted_motif_dataset(240, seed=1234)[0]
    if key == "synthetic-node":
        return synthetic.community_node_task(seed=1234)
    directory = resolve_dataset_dir(name, data_path)
    if task == "graph":
        return load_tu_dataset(directory, _dataset_file_stem(directory, "_graph_indicator.txt"))
    stem = _dataset_file_stem(directory, ".content")
    return load_citation_dataset(directory, stem, PLANETOID_CLASS_ORDER.get(stem.lower()))


# --------------------------------------------------------------------------- runs


class ModelCache:
    """Clean models keyed by everything that determines them, shared across strategies and gammas."""

    def __init__(self):
        self._models: dict[str, GnnModel] = {}

    def get(self, key: str, factory):
        if key not in self._models:
            self._models[key] = factory()
        return self._models[key]


@contextmanager
def _phase(name: str, timings: dict):
    start = time.perf_counter()
    try:
        yield
    except PhaseError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with phase tag
        raise PhaseError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def _run_dir(spec: ExperimentSpec, seed: int) -> Path:
    a = spec.attack
    gamma = f"_g{a.gamma:g}" if spec.task == "graph" else ""
    d = Path(spec.out) / f"{spec.dataset}_{spec.model.architecture}_{a.strategy.value}{gamma}_s{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _attack_dict(a: AttackConfig) -> dict:
    d = asdict(a)
    d["strategy"] = a.strategy.value
    return d


def run_graph_once(spec: ExperimentSpec, seed: int, dataset: GraphDataset | None = None,
                   cache: ModelCache | None = None) -> AttackReport:
    timings: dict[str, float] = {}
    cache = cache or ModelCache()
    attack = replace(spec.attack, seed=seed)
    mcfg = replace(spec.model, seed=seed)
    ecfg = replace(spec.explainer, seed=seed)
    with _phase("load", timings):
        if dataset is None:
            dataset = load_dataset(spec.dataset, "graph", spec.data_path)
        attack.check_target(dataset.class_count)
        train_set, test_set = split_graph_dataset(dataset, spec.train_fraction, seed)
        stats = dataset_statistics(dataset)
        trigger = generate_er_trigger(trigger_size_from_gamma(stats["avg_nodes"], attack.gamma), attack.rho, seed)
    out = _run_dir(spec, seed)

    def fit_clean():
        m = build_model(mcfg, dataset.feature_dim, dataset.class_count, "graph")
        return train(m, train_set, mcfg)[0]

    with _phase("train_clean", timings):
        key = json.dumps([dataset.name, len(dataset), spec.train_fraction, asdict(mcfg)], sort_keys=True)
        model_o = cache.get(key, fit_clean)
    with _phase("poison", timings):
        poisoned = poison_graph_training_set(train_set, model_o, attack, trigger, ecfg)
    with _phase("train_backdoor", timings):
        model_b = build_model(mcfg, dataset.feature_dim, dataset.class_count, "graph")
        train(model_b, poisoned.dataset, mcfg)
    with _phase("evaluate", timings):
        bd_test = build_backdoored_test_set(test_set, model_o, attack, trigger, ecfg)
        asr = attack_success_rate(model_b, bd_test.dataset, attack.target_class)
        acc_o, acc_b = accuracy(model_o, test_set), accuracy(model_b, test_set)
    _split_explain(timings, poisoned.explain_seconds, bd_test.explain_seconds)
    report = AttackReport(
        dataset=spec.dataset,
        model=mcfg.architecture,
        config=_attack_dict(attack),
        asr=asr,
        cad=acc_o - acc_b,
        clean_accuracy_original=acc_o,
        clean_accuracy_backdoored=acc_b,
        skipped_items=poisoned.skipped + bd_test.skipped,
        poisoned_items=len(poisoned.poisoned_ids),
        evaluated_items=len(bd_test.dataset),
        runtimes=timings,
        trigger=trigger.describe(),
    )
    with _phase("report", timings):
        _write_run(out, spec, seed, report, poisoned.manifest + bd_test.manifest, model_o, model_b)
    return report


def run_node_once(spec: ExperimentSpec, seed: int, dataset: NodeTaskDataset | None = None,
                  cache: ModelCache | None = None) -> AttackReport:
    timings: dict[str, float] = {}
    cache = cache or ModelCache()
    attack = replace(spec.attack, seed=seed)
    mcfg = replace(spec.model, seed=seed)
    ecfg = replace(spec.explainer, seed=seed)
    with _phase("load", timings):
        if dataset is None:
            dataset = load_dataset(spec.dataset, "node", spec.data_path)
        attack.check_target(dataset.class_count)
        clean = split_node_dataset(dataset, spec.train_fraction, seed)
    out = _run_dir(spec, seed)
    d = clean.graph.feature_dim

    def fit_clean():
        m = build_model(mcfg, d, clean.class_count, "node")
        return train(m, clean, mcfg)[0]

    with _phase("train_clean", timings):
        key = json.dumps([dataset.name, clean.graph.node_count, spec.train_fraction, asdict(mcfg)], sort_keys=True)
        model_o = cache.get(key, fit_clean)
    with _phase("poison", timings):
        poisoned = poison_node_training_set(clean, model_o, attack, ecfg)
    with _phase("train_backdoor", timings):
        model_b = build_model(mcfg, d, clean.class_count, "node")
        train(model_b, poisoned.dataset, mcfg)
    with _phase("evaluate", timings):
        labels = clean.graph.node_labels
        nodes = np.array([v for v in clean.test_nodes if labels[v] != attack.target_class], dtype=np.int64)
        start = time.perf_counter()
        trig, shared, fallbacks, _ = node_triggers(clean, model_o, attack, nodes, ecfg)
        eval_explain = time.perf_counter() - start
        rows = np.stack([inject_feature_trigger(clean.graph.node_features[v], trig[int(v)]) for v in nodes]) \
            if len(nodes) else np.zeros((0, d))
        eval_set = NodeTriggerSet(clean.graph, nodes, rows, labels[nodes])
        asr = attack_success_rate(model_b, eval_set, attack.target_class)
        acc_o, acc_b = accuracy(model_o, clean), accuracy(model_b, clean)
    _split_explain(timings, poisoned.explain_seconds, eval_explain)
    report = AttackReport(
        dataset=spec.dataset,
        model=mcfg.architecture,
        config=_attack_dict(attack),
        asr=asr,
        cad=acc_o - acc_b,
        clean_accuracy_original=acc_o,
        clean_accuracy_backdoored=acc_b,
        skipped_items=0,
        poisoned_items=len(poisoned.poisoned_ids),
        fallback_items=poisoned.fallbacks + fallbacks,
        evaluated_items=len(nodes),
        runtimes=timings,
        trigger=shared.describe() if attack.strategy is SelectionStrategy.RSA
        else f"kind=feature per-node n={len(shared.indices)} fill={shared.fill_value} fallback={shared.describe()}",
    )
    with _phase("report", timings):
        _write_run(out, spec, seed, report, poisoned.manifest, model_o, model_b)
    return report


def _split_explain(timings: dict, poison_explain: float, eval_explain: float) -> None:
    """Move explanation time out of the poison/evaluate phases into its own entry."""
    timings["poison"] -= poison_explain
    timings["evaluate"] -= eval_explain
    timings["explain"] = poison_explain + eval_explain


def _write_run(out: Path, spec, seed, report: AttackReport, manifest, model_o, model_b) -> None:
    flat = spec.to_flat()
    flat.update({"attack.seed": seed, "repetitions": 1})
    write_config(out / "spec.cfg", flat)
    report.write_json(out / "report.json")
    write_csv_rows(out / "row.csv", [report.csv_row()])
    write_manifest(out / "manifest.tsv", manifest)
    (out / "trigger.txt").write_text(report.trigger + "\n")
    save_checkpoint(model_o, out / "clean.npz")
    save_checkpoint(model_b, out / "backdoor.npz")


@dataclass
class ExperimentResult:
    reports: list[AttackReport]
    out: Path

    @property
    def mean_asr(self) -> float:
        return float(np.mean([r.asr for r in self.reports]))

    @property
    def mean_cad(self) -> float:
        return float(np.mean([r.cad for r in self.reports]))

    def summary(self) -> dict:
        return {
            "runs": len(self.reports),
            "mean_asr": self.mean_asr,
            "mean_cad": self.mean_cad,
            "mean_cad_abs": float(np.mean([abs(r.cad) for r in self.reports])),
            "mean_clean_acc_orig": float(np.mean([r.clean_accuracy_original for r in self.reports])),
            "mean_clean_acc_backdoor": float(np.mean([r.clean_accuracy_backdoored for r in self.reports])),
        }


def _run(spec: ExperimentSpec, once, task: str, cache: ModelCache | None = None, dataset=None) -> ExperimentResult:
    if spec.task != task:
        raise ArgumentError(f"spec is for the {spec.task} task, not {task}")
    cache = cache or ModelCache()
    if dataset is None:
        timings: dict = {}
        with _phase("load", timings):
            dataset = load_dataset(spec.dataset, task, spec.data_path)
    reports = [once(spec, spec.attack.seed + r, dataset, cache) for r in range(spec.repetitions)]
    out = Path(spec.out)
    write_csv_rows(out / "results.csv", [r.csv_row() for r in reports])
    res = ExperimentResult(reports, out)
    (out / "summary.json").write_text(json.dumps(res.summary(), indent=2))
    return res


def run_graph_attack(spec: ExperimentSpec, cache: ModelCache | None = None, dataset=None) -> ExperimentResult:
    return _run(spec, run_graph_once, "graph", cache, dataset)


def run_node_attack(spec: ExperimentSpec, cache: ModelCache | None = None, dataset=None) -> ExperimentResult:
    return _run(spec, run_node_once, "node", cache, dataset)


@dataclass
class SweepResult:
    reports: list[AttackReport]
    failures: list[dict]
    csv_path: Path


def sweep_gamma(
    spec: ExperimentSpec,
    gammas: Sequence[float],
    strategies: Sequence[str] | None = None,
    dataset=None,
) -> SweepResult:
    """One graph attack per (gamma, strategy, repetition); failed cells are recorded and skipped."""
    if not gammas:
        raise ArgumentError("gamma list is empty")
    for g in gammas:
        if not 0.0 < g <= 1.0:
            raise ArgumentError(f"gamma {g} outside (0, 1]")
    strategies = [SelectionStrategy(s) for s in (strategies or [spec.attack.strategy])]
    cache = ModelCache()
    if dataset is None:
        dataset = load_dataset(spec.dataset, "graph", spec.data_path)
    reports, failures, rows = [], [], []
    for gamma in gammas:
        for strat in strategies:
            cell = replace(spec, attack=replace(spec.attack, gamma=float(gamma), strategy=strat))
            for r in range(spec.repetitions):
                seed = spec.attack.seed + r
                try:
                    rep = run_graph_once(cell, seed, dataset, cache)
                except Exception as exc:  # noqa: BLE001 - sweep continues past failed cells
                    log.warning("sweep cell gamma=%s strategy=%s seed=%s failed: %s", gamma, strat.value, seed, exc)
                    failures.append({"gamma": gamma, "strategy": strat.value, "seed": seed, "error": str(exc)})
                    continue
                reports.append(rep)
                rows.append({"gamma": gamma, "strategy": strat.value, "seed": seed,
                             "asr": f"{rep.asr:.6f}", "cad": f"{rep.cad:.6f}"})
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    path = write_csv_rows(out / "sweep.csv", rows, SWEEP_FIELDS)
    if failures:
        write_csv_rows(out / "sweep_failures.csv", failures, ("gamma", "strategy", "seed", "error"))
    return SweepResult(reports, failures, path)


# --------------------------------------------------------------------------- tables


def _read_rows(path: Path, required: Iterable[str]) -> list[dict]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(required) - set(reader.fieldnames or [])
        if missing:
            raise SchemaError(f"{path}: missing column(s) {sorted(missing)}")
        return list(reader)


def emit_tables(run_directory: str | Path) -> dict[str, Path]:
    """Summarise every run below ``run_directory`` into table files.

    Writes ``runs.csv`` (one row per run), ``table_asr_cad.csv`` (dataset x
    model/strategy pivot of mean ASR and CAD), ``sweep_series.csv`` (mean per
    gamma and strategy) and, when ``stats.json`` files exist,
    ``dataset_stats.csv``.
    """
    root = Path(run_directory)
    row_files = sorted(root.rglob("row.csv"))
    stats_files = sorted(root.rglob("stats.json"))
    if not row_files and not stats_files:
        raise EmptyInputError(f"no run reports under {root}")
    rows = [r for p in row_files for r in _read_rows(p, CSV_FIELDS)]
    outputs: dict[str, Path] = {}
    if rows:
        outputs["runs"] = write_csv_rows(root / "runs.csv", rows)
        cells = defaultdict(list)
        for r in rows:
            cells[(r["dataset"], r["model"], r["strategy"])].append(r)
        models = sorted({(k[1], k[2]) for k in cells})
        pivot = []
        for ds in sorted({k[0] for k in cells}):
            line = {"dataset": ds}
            for m, s in models:
                group = cells.get((ds, m, s))
                if group:
                    asr = np.mean([float(g["asr"]) for g in group]) * 100
                    cad = np.mean([float(g["cad"]) for g in group]) * 100
                    line[f"{m}/{s}"] = f"{asr:.2f} | {cad:.2f}"
            pivot.append(line)
        outputs["table"] = write_csv_rows(root / "table_asr_cad.csv", pivot,
                                          ["dataset"] + [f"{m}/{s}" for m, s in models])
        series = defaultdict(list)
        for r in rows:
            if r["gamma"] != "":
                series[(r["dataset"], r["model"], r["strategy"], float(r["gamma"]))].append(r)
        srows = [
            {"dataset": k[0], "model": k[1], "strategy": k[2], "gamma": k[3],
             "asr_mean": f"{np.mean([float(x['asr']) for x in v]):.6f}",
             "cad_mean": f"{np.mean([float(x['cad']) for x in v]):.6f}", "runs": len(v)}
            for k, v in sorted(series.items())
        ]
        outputs["sweep"] = write_csv_rows(root / "sweep_series.csv", srows,
                                          ["dataset", "model", "strategy", "gamma", "asr_mean", "cad_mean", "runs"])
    if stats_files:
        stats = [json.loads(p.read_text()) for p in stats_files]
        srows = [{"dataset": s["name"], "graphs": s["graph_count"], "avg_nodes": f"{s['avg_nodes']:.2f}",
                  "avg_edges": f"{s['avg_edges']:.2f}", "classes": len(s["class_histogram"]),
                  "class_histogram": " ".join(f"{c}[{k}]" for k, c in s["class_histogram"].items())}
                 for s in stats]
        outputs["stats"] = write_csv_rows(root / "dataset_stats.csv", srows,
                                          ["dataset", "graphs", "avg_nodes", "avg_edges", "classes", "class_histogram"])
    return outputs
