"""Command-line entry points for the full workflow.

Subcommands mirror the pipeline order: simulate-data, build-branch-dataset,
train-bpp, calibrate, evaluate, validate-theorems, link, serve. Every command
appends a run record to the workspace run log (``LINKGUARD_WORKSPACE``, default
the current directory). Exit codes: 0 success, 2 validation problems, 3
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .catalog import CatalogError, write_catalog
from .detector import OracleDetector
from .harness import (
    coverage_sweep,
    ear_by_k,
    evaluate_policies,
    validate_theorems,
    write_rows_csv,
    write_rows_jsonl,
    write_summary,
)
from .pipeline import calibrate_classifiers, fit_classifiers
from .probes import TrainConfig, select_top_k_layers
from .runlog import RunRecord, append_run
from .runtime import LinkRun, drive_with_responder
from .simulate import SimConfig, SimWorld
from .store import StoreFormatError, load_bundle, load_detector, save_bundle
from .traces import (
    TraceFormatError,
    load_split_dataset,
    read_traces,
    save_split_dataset,
    split_dataset,
    build_branch_dataset,
    write_traces,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class ValidationFailure(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ValidationFailure(f"config file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationFailure(f"config file {path} is not valid JSON: {exc}") from exc


def _sim_config(args, overrides: dict | None = None) -> SimConfig:
    payload = dict((_load_config(getattr(args, "config", None)).get("sim", {})))
    if overrides:
        payload.update(overrides)
    for flag, key in (
        ("seed", "seed"),
        ("tables", "num_tables"),
        ("layers", "n_layers"),
        ("dim", "dim"),
        ("p_err", "p_err"),
        ("noisy_layers", "noisy_layers"),
        ("separation", "separation"),
        ("confusability", "confusability"),
        ("difficulty_spread", "difficulty_spread"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            payload[key] = value
    try:
        return SimConfig.from_dict(payload)
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(f"bad simulation config: {exc}") from exc


def _train_config(args) -> TrainConfig:
    payload = _load_config(getattr(args, "config", None)).get("train", {})
    kwargs = {
        "hidden_width": getattr(args, "hidden_width", None) or payload.get("hidden_width", 64),
        "epochs": getattr(args, "epochs", None) or payload.get("epochs", 300),
        "learning_rate": getattr(args, "lr", None) or payload.get("learning_rate", 0.05),
        "seed": getattr(args, "train_seed", None) or payload.get("seed", 0),
    }
    return TrainConfig(**kwargs)


# -- subcommands -----------------------------------------------------------------


def cmd_simulate_data(args) -> dict:
    config = _sim_config(args)
    world = SimWorld(config, args.instances)
    traces = world.make_traces()
    write_traces(traces, args.out)
    catalog_path = args.catalog_out or str(Path(args.out).with_suffix(".catalog.json"))
    write_catalog(world.catalog, catalog_path)
    branches = sum(len(t.branch_indices) for t in traces)
    return {
        "traces": len(traces),
        "tokens": sum(len(t.gen_tokens) for t in traces),
        "branching_points": branches,
        "out": str(args.out),
        "catalog": catalog_path,
    }


def cmd_build_branch_dataset(args) -> dict:
    if not Path(args.traces).exists():
        raise ValidationFailure(f"trace file not found: {args.traces}")
    traces = read_traces(args.traces)
    if not traces:
        raise ValidationFailure(f"trace file {args.traces} holds no records")
    dataset = build_branch_dataset(traces)
    train, calib = split_dataset(dataset, args.calib_fraction, args.split_seed)
    save_split_dataset(
        train, calib, args.out, calib_fraction=args.calib_fraction, split_seed=args.split_seed
    )
    return {
        "pairs": len(dataset),
        "layers": dataset.n_layers,
        "dim": dataset.dim,
        "train_pairs": len(train),
        "calibration_pairs": len(calib),
        "out": str(args.out),
    }


def cmd_train_bpp(args) -> dict:
    if not Path(args.dataset).exists():
        raise ValidationFailure(f"dataset not found: {args.dataset}")
    train, _, _ = load_split_dataset(args.dataset)
    config = _train_config(args)
    classifiers = fit_classifiers(train, config)
    save_bundle(args.out, classifiers)
    return {
        "layers": len(classifiers),
        "hidden_width": config.hidden_width,
        "epochs": config.epochs,
        "final_losses": {j: round(c.final_loss, 6) for j, c in classifiers.items()},
        "out": str(args.out),
    }


def cmd_calibrate(args) -> dict:
    if not Path(args.model).exists():
        raise ValidationFailure(f"model bundle not found: {args.model}")
    if not Path(args.dataset).exists():
        raise ValidationFailure(f"dataset not found: {args.dataset}")
    bundle = load_bundle(args.model)
    classifiers = bundle["classifiers"]
    _, calib, _ = load_split_dataset(args.dataset)
    calibrators = calibrate_classifiers(
        classifiers, calib, args.alpha, args.mode, n_neighbors=args.neighbors, tau=args.tau
    )
    selection = select_top_k_layers(
        [classifiers[j] for j in sorted(classifiers)], calib, args.k
    )
    save_bundle(
        args.out,
        classifiers,
        calibrators,
        selection,
        base_seed=args.seed,
        method="permutation",
    )
    return {
        "alpha": args.alpha,
        "k": args.k,
        "mode": args.mode,
        "selected_layers": selection.layers,
        "layer_aucs": {i: round(a, 4) for i, a in selection.ranked},
        "out": str(args.out),
    }


def cmd_evaluate(args) -> dict:
    detector = load_detector(args.detector)
    config = _sim_config(args)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    seeds = list(range(args.seeds))
    report = evaluate_policies(
        config,
        detector,
        policies,
        seeds,
        args.instances,
        link_columns=args.link_columns,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary(report.to_dict(), out_dir / "summary.json")
    write_rows_jsonl(report.per_seed, out_dir / "per_seed.jsonl")
    rows = [res.to_dict() for res in report.policies.values()]
    write_rows_csv(rows, out_dir / "policies.csv")
    return {
        "out_dir": str(out_dir),
        "coverage": report.coverage,
        "ear": report.ear,
        "policies": {name: res.em for name, res in report.policies.items()},
    }


def cmd_validate_theorems(args) -> dict:
    report = validate_theorems(trials=args.trials, alpha=args.alpha, k=args.k, seed=args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_summary(report.to_dict(), out_dir / "bounds.json")
    sweep = coverage_sweep(args.sweep_alphas, seed=args.seed)
    write_rows_csv(sweep, out_dir / "coverage_curve.csv")
    if args.ear_by_k:
        rows = ear_by_k(alpha=args.alpha, seed=args.seed)
        write_rows_csv(rows, out_dir / "ear_by_k.csv")
    return {
        "out_dir": str(out_dir),
        "all_within_bounds": report.all_within_bounds,
        "size_bound_violations": report.size_bound_violations,
        "dominance_violations": report.dominance_violations,
        "coverage_curve": [(row["alpha"], round(row["coverage"], 4)) for row in sweep],
    }


class _StdinResponder:
    """Terminal prompts for interactive linking."""

    def relevance(self, kind: str, subject: str, context: dict) -> str:
        noun = "table" if kind.endswith("table") else "column"
        print(f'Is the {noun} `{subject}` relevant to the question: "{context.get("question", "")}"?')
        while True:
            answer = input("[yes/no] > ").strip().lower()
            if answer in ("yes", "no"):
                return answer
            print("please answer yes or no")

    def provide(self, kind: str, context: dict) -> str:
        noun = "table" if kind.endswith("table") else "column"
        denied = ", ".join(context.get("denied", [])) or "none"
        print(f"Declined candidates: {denied}.")
        return input(f"Please provide the correct {noun} name > ").strip()


def cmd_link(args) -> dict:
    config = _sim_config(args)
    world = SimWorld(config, args.instance + 1)
    instance = world.instances[args.instance]
    model = world.table_model(args.instance)
    if args.detector == "oracle":
        detector = OracleDetector(model)
    else:
        detector = load_detector(args.detector)
    run = LinkRun(
        model,
        detector,
        world.catalog,
        args.policy,
        surrogate=world.surrogate(args.instance) if args.policy == "surrogate" else None,
        question=instance.question,
    )
    print(f"question: {instance.question}")
    if args.policy == "human":
        responder = _StdinResponder() if args.interactive else world.oracle_responder(args.instance)
        drive_with_responder(run, responder)
    else:
        run.start()
    outcome = run.outcome()
    print(f"status: {outcome.status}")
    if outcome.status == "done":
        print(f"tables: {', '.join(outcome.tables)}")
    else:
        print(f"abstained: {outcome.abstain_reason}")
    return {
        "status": outcome.status,
        "tables": outcome.tables,
        "abstain_reason": outcome.abstain_reason,
        "gt_tables": list(instance.gt_tables),
    }


def cmd_serve(args) -> dict:
    import uvicorn

    from .service import create_app

    app = create_app(args.workspace)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return {"host": args.host, "port": args.port}


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linkguard",
        description="branch-aware schema linking: simulate, train, calibrate, evaluate, serve",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--workspace", default=None, help="run-log directory (or $LINKGUARD_WORKSPACE)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_sim_flags(sp):
        sp.add_argument("--config", default=None, help="JSON config file with a 'sim' section")
        sp.add_argument("--tables", type=int, default=None)
        sp.add_argument("--layers", type=int, default=None)
        sp.add_argument("--dim", type=int, default=None)
        sp.add_argument("--p-err", dest="p_err", type=float, default=None)
        sp.add_argument("--noisy-layers", dest="noisy_layers", type=int, default=None)
        sp.add_argument("--separation", type=float, default=None)
        sp.add_argument("--confusability", type=float, default=None)
        sp.add_argument("--difficulty-spread", dest="difficulty_spread", type=float, default=None)

    p = sub.add_parser("simulate-data", help="generate a synthetic world and teacher-forcing traces")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--out", required=True)
    p.add_argument("--catalog-out", default=None)
    add_sim_flags(p)
    p.set_defaults(func=cmd_simulate_data)

    p = sub.add_parser("build-branch-dataset", help="pool traces into per-layer training pairs")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--calib-fraction", type=float, default=0.5)
    p.add_argument("--split-seed", type=int, default=17)
    p.set_defaults(func=cmd_build_branch_dataset)

    p = sub.add_parser("train-bpp", help="train the per-layer branching classifiers")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hidden-width", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--train-seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train_bpp)

    p = sub.add_parser("calibrate", help="conformal-calibrate classifiers and select layers")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=("exchangeable", "weighted"), default="exchangeable")
    p.add_argument("--neighbors", type=int, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--seed", type=int, default=0, help="base seed for per-token permutations")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="run policies over simulated instances and report metrics")
    p.add_argument("--detector", required=True)
    p.add_argument("--policies", default="abstain,surrogate,human")
    p.add_argument("--seeds", type=int, default=3, help="evaluate worlds with seeds 0..N-1")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--link-columns", action="store_true")
    p.add_argument("--out-dir", default="reports")
    add_sim_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("validate-theorems", help="Monte-Carlo checks of the coverage bounds")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument(
        "--sweep-alphas", type=float, nargs="+", default=[0.05, 0.1, 0.2]
    )
    p.add_argument("--ear-by-k", action="store_true", help="also run the k-sweep experiment")
    p.add_argument("--out-dir", default="reports")
    p.set_defaults(func=cmd_validate_theorems)

    p = sub.add_parser("link", help="run one simulated linking session")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instance", type=int, default=0)
    p.add_argument("--policy", choices=("abstain", "surrogate", "human"), default="human")
    p.add_argument("--detector", default="oracle", help="'oracle' or a detector bundle path")
    p.add_argument("--interactive", action="store_true", help="answer questions on stdin")
    add_sim_flags(p)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("serve", help="start the HTTP session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--workspace", default=None, help="run-log directory for this service")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    record = RunRecord(command=args.command, config={
        k: v for k, v in vars(args).items() if k not in ("func",) and v is not None
    })
    try:
        outcome = args.func(args)
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TraceFormatError, CatalogError, StoreFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failures
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    record.outcome = outcome or {}
    if args.command != "serve":
        append_run(record, args.workspace)
    print(json.dumps(outcome, indent=1, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
