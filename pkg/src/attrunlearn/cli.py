"""Command-line entry points; every subcommand writes a JSON report.

Subcommands: train, calibrate, combine, attack, rec-eval, scenario,
bound-check, dp. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibration import calibrate, trace_to_csv
from .combination import bound_check
from .evaluation import attack_metrics, hr_ndcg_at_k, make_folds
from .scenario import (
    Config,
    ScenarioScript,
    dp_baseline,
    ensure_model,
    load_dataset,
    run_scenario,
)
from .store import EmbeddingStore, read_embedding_file, write_embedding_file


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrunlearn")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("--config", required=True, help="path to a Config JSON file")
        return p

    add("train", help="train the recommender and write a checkpoint")
    p = add("calibrate", help="calibrate one attribute out of the user embeddings")
    p.add_argument("--attr", required=True)
    p.add_argument("--trace-csv", default=None, help="also dump the optimization trace")
    p = add("combine", help="combine cached calibrations for a set of attributes")
    p.add_argument("--attrs", required=True, help="comma-separated attribute names")
    p = add("attack", help="attribute-inference attack report for an embedding matrix")
    p.add_argument("--embeddings", default=None, help="embedding file (default: trained model)")
    p = add("rec-eval", help="leave-one-out HR/NDCG report for an embedding matrix")
    p.add_argument("--embeddings", default=None)
    p = add("scenario", help="run a dynamic privacy-request script")
    p.add_argument("--script", required=True)
    p = add("bound-check", help="two-step vs joint leakage comparison")
    p.add_argument("--attrs", required=True)
    p = add("dp", help="Gaussian-noise baseline; sweeps sigma and reports the curve")
    p.add_argument("--sigma", required=True, help="noise scale, or comma-separated list")
    p.add_argument("--seed", type=int, default=0)
    return parser


def _write_report(config: Config, name: str, payload: dict) -> Path:
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    print(path)
    return path


def _load_embeddings(config: Config, arg, model) -> np.ndarray:
    if arg is None:
        return model.user_embeddings
    return read_embedding_file(arg)


def _entry(table, name):
    a = table.get(name)
    return (a.name, a.labels, a.cardinality)


def cli_main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _dispatch(args)
    except (ValueError, KeyError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    config = Config.from_json(args.config)
    dataset, table = load_dataset(config)

    if args.command == "train":
        model = ensure_model(config, dataset)
        _write_report(
            config,
            "train_report.json",
            {
                "dataset": dataset.summary(),
                "diagnostics": model.train_diagnostics,
                "dim": model.dim,
            },
        )
        return 0

    model = ensure_model(config, dataset)

    if args.command == "calibrate":
        entry = _entry(table, args.attr)
        result = calibrate(
            model.user_embeddings, entry[1], config.calibration,
            attribute=entry[0], cardinality=entry[2],
        )
        store = EmbeddingStore(config.resolved_store_dir())
        store.put(
            store.key(dataset.fingerprint(), entry[0], config.calibration.hash()),
            result.embeddings,
        )
        if args.trace_csv:
            trace_to_csv(result, args.trace_csv)
        _write_report(
            config,
            f"calibrate_{entry[0]}.json",
            {
                "attribute": entry[0],
                "final_mi": float(result.mi_trace[-1]) if len(result.mi_trace) else None,
                "final_distance": float(result.distance_trace[-1])
                if len(result.distance_trace)
                else 0.0,
                "config_hash": result.config_hash,
            },
        )
        return 0

    if args.command == "combine":
        names = [n.strip() for n in args.attrs.split(",") if n.strip()]
        script = ScenarioScript([names])
        reports = run_scenario(config, script, dataset, table, model)
        _write_report(config, "combine_report.json", reports[0].to_dict())
        return 0

    if args.command == "attack":
        U = _load_embeddings(config, args.embeddings, model)
        folds = make_folds(dataset.n_users, config.attack.n_folds, config.attack.seed)
        report = attack_metrics(U, table, folds, max_iterations=config.attack.max_iterations)
        _write_report(config, "attack_report.json", json.loads(report.to_json()))
        return 0

    if args.command == "rec-eval":
        U = _load_embeddings(config, args.embeddings, model)
        report = hr_ndcg_at_k(U, model.item_embeddings, dataset, k=config.rec_k)
        _write_report(config, "rec_report.json", json.loads(report.to_json()))
        return 0

    if args.command == "scenario":
        script = ScenarioScript.from_json(args.script)
        reports = run_scenario(config, script, dataset, table, model)
        _write_report(
            config,
            "scenario_report.json",
            {"requests": [r.to_dict() for r in reports]},
        )
        return 0

    if args.command == "bound-check":
        names = [n.strip() for n in args.attrs.split(",") if n.strip()]
        report = bound_check(
            model.user_embeddings,
            [_entry(table, n) for n in names],
            config.calibration,
            config.combination,
            parallelism=config.workers,
        )
        _write_report(config, "bound_check.json", json.loads(report.to_json()))
        return 0

    if args.command == "dp":
        sigmas = [float(s) for s in str(args.sigma).split(",") if s.strip()]
        folds = make_folds(dataset.n_users, config.attack.n_folds, config.attack.seed)
        curve = []
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for sigma in sigmas:
            noisy = dp_baseline(model.user_embeddings, sigma, args.seed)
            write_embedding_file(out / f"dp_sigma_{sigma:g}.emb", noisy)
            attack = attack_metrics(
                noisy, table, folds, max_iterations=config.attack.max_iterations
            )
            rec = hr_ndcg_at_k(noisy, model.item_embeddings, dataset, k=config.rec_k)
            curve.append(
                {
                    "sigma": sigma,
                    "bacc_average": attack.bacc_average,
                    "f1_average": attack.f1_average,
                    "hr_at_k": rec.hr,
                    "ndcg_at_k": rec.ndcg,
                }
            )
        _write_report(config, "dp_report.json", {"curve": curve})
        return 0

    raise ValueError(f"unhandled command {args.command!r}")


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
