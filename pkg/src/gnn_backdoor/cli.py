"""Command line entry point: ``gnn-backdoor {stats,attack-graph,attack-node,sweep,tables}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import BackdoorError
from .graph import dataset_statistics
from .runner import (
    KNOWN_DATASETS,
    SYNTHETIC,
    build_spec,
    emit_tables,
    load_dataset,
    read_config,
    run_graph_attack,
    run_node_attack,
    sweep_gamma,
)


def _attack_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file; CLI flags override it")
    p.add_argument("--dataset")
    p.add_argument("--data-path", dest="data_path", help="dataset directory (default: $GNN_BACKDOOR_DATA/<dataset>)")
    p.add_argument("--model", help="GIN, GraphSAGE or GAT")
    p.add_argument("--strategy", help="RSA, MIA or LIA")
    p.add_argument("--gamma", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--target", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="any other setting, e.g. explainer.iterations=50")


def _settings(args: argparse.Namespace) -> dict:
    settings: dict = read_config(args.config) if getattr(args, "config", None) else {}
    for key in ("dataset", "data_path", "model", "strategy", "gamma", "rho", "eta", "target", "seed", "reps",
                "epochs", "out"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    for item in getattr(args, "set", []):
        k, _, v = item.partition("=")
        settings[k.strip()] = v.strip()
    return settings


def _print_result(res) -> None:
    for r in res.reports:
        print(f"seed={r.config['seed']} asr={r.asr:.4f} cad={r.cad:+.4f} "
              f"acc_o={r.clean_accuracy_original:.4f} acc_b={r.clean_accuracy_backdoored:.4f}")
    print(json.dumps(res.summary(), indent=2))


def cmd_stats(args) -> int:
    key = args.dataset.lower()
    task = KNOWN_DATASETS.get(key, (SYNTHETIC.get(key, args.task or "graph"), 0))[0]
    if args.task:
        task = args.task
    stats = dataset_statistics(load_dataset(args.dataset, task, args.data_path))
    text = json.dumps(stats, indent=2)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.dataset}_stats").mkdir(exist_ok=True)
        (out / f"{args.dataset}_stats" / "stats.json").write_text(text)
    return 0


def cmd_attack(args, task: str) -> int:
    settings = _settings(args)
    settings.setdefault("task", task)
    spec = build_spec(settings)
    res = run_graph_attack(spec) if task == "graph" else run_node_attack(spec)
    _print_result(res)
    return 0


def cmd_sweep(args) -> int:
    settings = _settings(args)
    strategies = None
    if str(settings.get("strategy", "")).lower() in ("", "all"):
        settings.pop("strategy", None)
        strategies = ["RSA", "MIA", "LIA"]
    settings.setdefault("task", "graph")
    spec = build_spec(settings)
    gammas = [float(g) for g in args.gammas.split(",") if g.strip()] if args.gammas else []
    res = sweep_gamma(spec, gammas, strategies)
    print(f"{len(res.reports)} run(s), {len(res.failures)} failure(s); series written to {res.csv_path}")
    return 0


def cmd_tables(args) -> int:
    for name, path in emit_tables(args.out).items():
        print(f"{name}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gnn-backdoor", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--data-path", dest="data_path")
    p.add_argument("--task", choices=["graph", "node"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("attack-graph", help="subgraph-trigger backdoor on graph classification")
    _attack_args(p)
    p.set_defaults(func=lambda a: cmd_attack(a, "graph"))

    p = sub.add_parser("attack-node", help="feature-trigger backdoor on node classification")
    _attack_args(p)
    p.set_defaults(func=lambda a: cmd_attack(a, "node"))

    p = sub.add_parser("sweep", help="trigger-size sweep over gamma (all strategies unless --strategy)")
    _attack_args(p)
    p.add_argument("--gammas", default="0.05,0.10,0.15,0.20", help="comma-separated gamma values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tables", help="summarise a run directory into table CSVs")
    p.add_argument("--out", required=True, help="run directory to summarise")
    p.set_defaults(func=cmd_tables)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BackdoorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
