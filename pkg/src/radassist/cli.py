"""Command line entry points: serve, simulate, merge, report."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .config import load_config
from .errors import RadAssistError
from .model import ModelConfig
from .registry import BASE_OWNER, ModelRegistry
from .sim import (
    ExperimentConfig,
    ExperimentReport,
    blind_spot_matrix,
    run_experiment,
    summary_table,
    write_run_artifacts,
)
from .swarm import MergeSpec, SwarmNode, run_swarm_round


def _add_serve(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--model-name")
    p.add_argument("--n-batch", type=int)
    p.add_argument("--t-max", type=float)
    p.add_argument("--sim-mode", action="store_true", default=None,
                   help="synchronous batch retraining, no timers")
    p.add_argument("--lenient", action="store_true",
                   help="accept paper-literal payloads without width/height")


def _add_simulate(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("simulate", help="run the swarm-vs-isolated-vs-centralized experiment")
    p.add_argument("--config", help="JSON experiment configuration file")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", help="run directory (default runs/<timestamp>)")
    p.add_argument("--nodes", type=int)
    p.add_argument("--studies", type=int, help="studies per node")
    p.add_argument("--test-studies", type=int)
    p.add_argument("--swarm-period", type=int)
    p.add_argument("--arms", help="comma-separated arm list")


def _add_merge(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("merge", help="run one swarm merge round against a data directory")
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=("additive", "weighted"), default="additive")
    p.add_argument("--data-dir", default="data")
    p.add_argument("--nodes", help="comma-separated node ids (default: every non-base owner)")


def _add_report(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("report", help="re-render tables and figures from a run directory")
    p.add_argument("--run", required=True, help="run directory containing report.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radassist")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_serve(sub)
    _add_simulate(sub)
    _add_merge(sub)
    _add_report(sub)
    return parser


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    overrides = {
        "host": args.host,
        "port": args.port,
        "data_dir": args.data_dir,
        "model_name": args.model_name,
        "n_batch": args.n_batch,
        "t_max": args.t_max,
        "sim_mode": args.sim_mode,
    }
    if args.lenient:
        overrides["strict_wire"] = False
    config = load_config(args.config, overrides=overrides)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    exp = ExperimentConfig.from_dict(data)
    overrides = {
        "master_seed": args.seed,
        "nodes": args.nodes,
        "studies_per_node": args.studies,
        "test_studies": args.test_studies,
        "swarm_period": args.swarm_period,
        "arms": tuple(args.arms.split(",")) if args.arms else None,
    }
    exp_kw = {k: v for k, v in overrides.items() if v is not None}
    if exp_kw:
        exp = ExperimentConfig.from_dict({**exp.to_dict(), **exp_kw})

    out_dir = Path(args.out) if args.out else Path("runs") / time.strftime("%Y%m%d-%H%M%S")
    report = run_experiment(exp, ModelConfig(), state_dir=out_dir / "state")
    paths = write_run_artifacts(report, out_dir)
    sys.stdout.write(summary_table(report))
    sys.stdout.write(f"\nrun artifacts under {out_dir}\n")
    for name, path in paths.items():
        sys.stdout.write(f"  {name}: {path}\n")
    return 0


def cmd_merge(args: argparse.Namespace) -> int:
    registry = ModelRegistry(args.data_dir, ModelConfig())
    if args.nodes:
        node_ids = [n.strip() for n in args.nodes.split(",") if n.strip()]
    else:
        node_ids = [o for o in registry.owners(args.model) if o != BASE_OWNER]
    if not node_ids:
        sys.stderr.write("no nodes to merge\n")
        return 2
    nodes = []
    for node_id in node_ids:
        rec, _ = registry.resolve(args.model, node_id)
        nodes.append(SwarmNode(node_id=node_id, model=args.model, local_version=rec.version))
    published = run_swarm_round(
        registry, nodes, MergeSpec(method=args.method),
        report_dir=Path(args.data_dir) / "reports",
    )
    for rec in published:
        sys.stdout.write(f"{rec.owner}: version {rec.version} ({rec.status})\n")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        sys.stderr.write(f"no report.json under {run_dir}\n")
        return 2
    report = _report_from_json(json.loads(report_path.read_text(encoding="utf-8")))
    paths = write_run_artifacts(report, run_dir)
    sys.stdout.write(summary_table(report))
    sys.stdout.write("\nblind-spot matrix (emitted/warranted):\n")
    matrix = blind_spot_matrix(report)
    labels = list(next(iter(matrix.values())))
    sys.stdout.write(f"{'node':<16}" + "".join(f"{l:>14}" for l in labels) + "\n")
    for user, row in matrix.items():
        cells = "".join(
            f"{row[l]['emitted']}/{row[l]['emitted'] + row[l]['suppressed']:<6}".rjust(14)
            for l in labels
        )
        sys.stdout.write(f"{user:<16}{cells}\n")
    sys.stdout.write(f"\nfigures re-rendered under {run_dir / 'figures'}\n")
    return 0


def _report_from_json(data: dict) -> ExperimentReport:
    from .sim import ArmOutcome

    arms = {
        name: ArmOutcome(
            name=name,
            per_node=arm["per_node"],
            correction_counts=arm["correction_counts"],
            batches=arm["batches"],
            rounds=arm["rounds"],
            deferred=arm["deferred"],
        )
        for name, arm in data["arms"].items()
    }
    return ExperimentReport(config=data["config"], base_metrics=data["base_metrics"], arms=arms)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "serve": cmd_serve,
        "simulate": cmd_simulate,
        "merge": cmd_merge,
        "report": cmd_report,
    }
    try:
        return handlers[args.command](args)
    except RadAssistError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
