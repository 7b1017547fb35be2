import csv
import json

import pytest

from gnn_backdoor.cli import main
from gnn_backdoor.errors import ArgumentError, EmptyInputError, IngestionError, PhaseError, SchemaError
from gnn_backdoor.metrics import CSV_FIELDS, write_csv_rows
from gnn_backdoor.runner import (
    build_spec,
    emit_tables,
    load_dataset,
    read_config,
    run_graph_attack,
    run_node_attack,
    sweep_gamma,
    write_config,
)

QUICK = {"epochs": "3", "explainer.iterations": "3", "reps": "1"}


def graph_spec(tmp_path, **kw):
    s = {"dataset": "synthetic-graph", "gamma": "0.3", "eta": "0.1", **QUICK, "out": str(tmp_path / "out")}
    s.update({k: str(v) for k, v in kw.items()})
    return build_spec(s)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_build_spec_defaults_and_overrides():
    spec = build_spec({"dataset": "Cora", "strategy": "LIA", "seed": "4", "explainer.hop_count": "3"})
    assert spec.task == "node" and spec.attack.target_class == 6
    assert spec.model.architecture == "GAT" and spec.model.layer_count == 2
    assert spec.model.seed == 4 and spec.explainer.seed == 4 and spec.explainer.hop_count == 3
    assert spec.train_fraction == 0.2 and spec.repetitions == 3
    spec = build_spec({"dataset": "Mutagenicity"})
    assert spec.task == "graph" and spec.attack.target_class == 1 and spec.model.architecture == "GIN"
    assert build_spec({"dataset": "citeseer"}).attack.target_class == 5
    with pytest.raises(ArgumentError):
        build_spec({"dataset": "x", "reps": "0"})
    with pytest.raises(ArgumentError):
        build_spec({})


def test_config_round_trip(tmp_path):
    spec = graph_spec(tmp_path, strategy="MIA")
    path = write_config(tmp_path / "spec.cfg", spec.to_flat())
    again = build_spec(read_config(path))
    assert again == spec


def test_missing_dataset_is_ingestion_error(tmp_path, monkeypatch):
    monkeypatch.setenv("GNN_BACKDOOR_DATA", str(tmp_path))
    with pytest.raises(IngestionError):
        load_dataset("Mutagenicity", "graph")


def test_graph_attack_writes_run_files(tmp_path):
    res = run_graph_attack(graph_spec(tmp_path, strategy="MIA"))
    assert len(res.reports) == 1
    run = next((tmp_path / "out").glob("synthetic-graph_GIN_MIA_g0.3_s0"))
    for name in ("spec.cfg", "report.json", "row.csv", "manifest.tsv", "trigger.txt", "clean.npz", "backdoor.npz"):
        assert (run / name).exists(), name
    report = json.loads((run / "report.json").read_text())
    assert 0 <= report["asr"] <= 1
    assert set(report["runtimes"]) >= {"train_clean", "explain", "poison", "train_backdoor", "evaluate"}
    assert len(rows(tmp_path / "out" / "results.csv")) == 1


def test_node_attack(tmp_path):
    spec = build_spec({"dataset": "synthetic-node", "model": "GraphSAGE", "strategy": "MIA", **QUICK,
                       "out": str(tmp_path / "node")})
    res = run_node_attack(spec)
    r = res.reports[0]
    assert r.poisoned_items == round(0.15 * int(0.2 * 300))
    assert r.config["task"] == "node" and r.evaluated_items > 0


def test_wrong_task_rejected(tmp_path):
    with pytest.raises(ArgumentError):
        run_node_attack(graph_spec(tmp_path))


def test_phase_error_tag(tmp_path):
    from gnn_backdoor.errors import PoisoningFailedError

    with pytest.raises(PhaseError) as info:
        run_graph_attack(graph_spec(tmp_path, target=5))  # only two classes
    assert info.value.phase == "load"
    assert info.value.exit_code == ArgumentError.exit_code + 20
    with pytest.raises(PhaseError) as info:
        run_graph_attack(graph_spec(tmp_path, eta=0.001))  # rounds to zero poisoned graphs
    assert info.value.phase == "poison"
    assert info.value.exit_code == PoisoningFailedError.exit_code + 20 * 4


def test_sweep_validation(tmp_path):
    with pytest.raises(ArgumentError):
        sweep_gamma(graph_spec(tmp_path), [])
    with pytest.raises(ArgumentError):
        sweep_gamma(graph_spec(tmp_path), [0.0])


def test_single_gamma_sweep_equals_run(tmp_path):
    spec = graph_spec(tmp_path / "a", strategy="LIA")
    sweep = sweep_gamma(spec, [0.3])
    run = run_graph_attack(graph_spec(tmp_path / "b", strategy="LIA"))
    assert [r.asr for r in sweep.reports] == [r.asr for r in run.reports]
    assert [r.cad for r in sweep.reports] == [r.cad for r in run.reports]


def test_sweep_row_count_and_failures(tmp_path):
    spec = graph_spec(tmp_path, reps=2)
    res = sweep_gamma(spec, [0.2, 1.0], ["RSA", "LIA"])
    # gamma=1 means a trigger as large as the average graph: small graphs are skipped but runs still complete
    assert len(rows(res.csv_path)) == 2 * 2 * 2 - len(res.failures)


def test_emit_tables_counts(tmp_path):
    out = tmp_path / "runs"
    n = 0
    for ds in ("A", "B"):
        for model in ("GIN", "GraphSAGE"):
            for strat in ("RSA", "MIA", "LIA"):
                d = out / f"{ds}_{model}_{strat}"
                d.mkdir(parents=True)
                write_csv_rows(d / "row.csv", [{"dataset": ds, "model": model, "strategy": strat, "gamma": 0.2,
                                                "seed": 0, "asr": 0.9, "cad": 0.01, "clean_acc_orig": 0.8,
                                                "clean_acc_backdoor": 0.79, "runtime_s": 1}])
                n += 1
    paths = emit_tables(out)
    table = rows(paths["table"])
    assert len(table) == 2 and sum(len(r) - 1 for r in table) == 12
    assert table[0]["GIN/RSA"] == "90.00 | 1.00"
    assert len(rows(paths["runs"])) == n


def test_emit_tables_three_runs_and_schema(tmp_path):
    out = tmp_path / "runs"
    for k in range(3):
        d = out / f"r{k}"
        d.mkdir(parents=True)
        write_csv_rows(d / "row.csv", [{"dataset": "A", "model": "GIN", "strategy": "RSA", "gamma": 0.2, "seed": k,
                                        "asr": 1, "cad": 0, "clean_acc_orig": 1, "clean_acc_backdoor": 1,
                                        "runtime_s": 1}])
    assert len(rows(emit_tables(out)["runs"])) == 3
    write_csv_rows(out / "r0" / "row.csv", [{"dataset": "A"}], [f for f in CSV_FIELDS if f != "asr"])
    with pytest.raises(SchemaError):
        emit_tables(out)


def test_emit_tables_empty(tmp_path):
    with pytest.raises(EmptyInputError):
        emit_tables(tmp_path)


def test_cli_end_to_end(tmp_path, capsys):
    out = tmp_path / "cli"
    assert main(["stats", "--dataset", "synthetic-graph", "--out", str(out)]) == 0
    assert json.loads((out / "synthetic-graph_stats" / "stats.json").read_text())["graph_count"] == 240
    code = main(["attack-graph", "--dataset", "synthetic-graph", "--strategy", "RSA", "--gamma", "0.3", "--eta", "0.1",
                 "--epochs", "3", "--reps", "1", "--out", str(out)])
    assert code == 0
    assert main(["tables", "--out", str(out)]) == 0
    assert (out / "table_asr_cad.csv").exists() and (out / "dataset_stats.csv").exists()
    assert "mean_asr" in capsys.readouterr().out


def test_cli_exit_codes(tmp_path, monkeypatch):
    monkeypatch.setenv("GNN_BACKDOOR_DATA", str(tmp_path))
    assert main(["tables", "--out", str(tmp_path)]) == EmptyInputError.exit_code
    code = main(["attack-graph", "--dataset", "Mutagenicity", "--reps", "1", "--out", str(tmp_path / "o")])
    assert code == IngestionError.exit_code + 20  # tagged with the load phase
    assert main(["sweep", "--dataset", "synthetic-graph", "--gammas", "", "--out", str(tmp_path)]) == ArgumentError.exit_code


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("dataset = synthetic-graph\nstrategy = LIA\ngamma = 0.3\neta = 0.1\nepochs = 3\nreps = 1\n"
                   f"explainer.iterations = 3\nout = {tmp_path / 'o'}\n")
    assert main(["attack-graph", "--config", str(cfg), "--seed", "2"]) == 0
    assert (tmp_path / "o" / "synthetic-graph_GIN_LIA_g0.3_s2" / "report.json").exists()
