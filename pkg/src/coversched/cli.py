"""Command-line interface.

Subcommands: gen-maps, train, solve, eval, oracle, export-tsp.
Exit codes: 0 success, 1 usage error (bad flags, missing inputs, violated
size caps), 2 runtime error. Usage errors print a synopsis to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .checkpoint import load_policy
from .decoder import rollout
from .errors import CoverschedError, TooLarge
from .harness import evaluate, schedule_to_json_dict
from .mapgen import generate_maps, load_maps, save_maps
from .policy import PolicyConfig, parameter_breakdown
from .solvers import (
    build_edge_matrix,
    exact_schedule,
    nearest_neighbor,
    symmetrize,
    to_tsplib,
    two_opt,
)
from .training import TrainConfig, train


class UsageError(Exception):
    """Bad invocation; carries the synopsis to print on stderr."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\nerror: {message}")


def build_parser() -> _Parser:
    parser = _Parser(prog="coversched", description=__doc__)
    parser.add_argument("--version", action="store_true", help="print build info")
    parser.add_argument(
        "--config",
        choices=["paper", "small", "tiny"],
        help="with --version: also print the parameter count for a preset",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-maps", help="generate a JSON-lines map dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--n", type=int, required=True, help="areas per map")
    p.add_argument("--radius-min", type=float, default=0.01)
    p.add_argument("--radius-max", type=float, default=0.03)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="run REINFORCE training")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dataset", help="JSON-lines map file (default: on-the-fly maps)")
    p.add_argument("--config-file", help="JSON file with TrainConfig fields")
    for flag, typ in [
        ("epochs", int), ("steps-per-epoch", int), ("batch-size", int),
        ("n", int), ("lr", float), ("d1", int), ("d2", int), ("d3", int),
        ("layers", int), ("heads", int), ("logit-clip", float), ("lanes", int),
        ("baseline-interval", int), ("seed", int),
        ("grad-clip", float), ("checkpoint-interval", int),
    ]:
        p.add_argument(f"--{flag}", type=typ, default=None)
    p.add_argument("--lambda", type=float, default=None, dest="lambda_intra")
    p.add_argument("--baseline", choices=["rollout", "critic"], default=None)
    p.add_argument("--open", action="store_true", help="train on open tours")
    p.add_argument("--no-plots", action="store_true",
                   help="skip rendering the training-curve figure")
    p.add_argument("--log-every", type=int, default=100)

    p = sub.add_parser("solve", help="schedule one map; prints Schedule JSON")
    p.add_argument("--map", required=True, help="JSON-lines map file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--solver", choices=["exact", "nn", "nn2opt"])
    p.add_argument("--checkpoint", help="policy checkpoint (greedy decode)")
    p.add_argument("--trace", action="store_true",
                   help="include per-step probabilities (checkpoint only)")
    p.add_argument("--lambda", type=float, default=0.0, dest="lambda_intra")
    p.add_argument("--open", action="store_true", help="open tour (no return edge)")
    p.add_argument("--lanes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a reference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--reference", choices=["exact", "nn2opt"], default="exact")
    p.add_argument("--lambda", type=float, default=0.0, dest="lambda_intra")
    p.add_argument("--open", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-plots", action="store_true",
                   help="skip rendering the boxplot figure")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("oracle", help="exact solve (n <= 12); prints Schedule JSON")
    p.add_argument("--map", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--lambda", type=float, default=0.0, dest="lambda_intra")
    p.add_argument("--open", action="store_true")
    p.add_argument("--lanes", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser(
        "export-tsp",
        help="fixed-point edge matrix, symmetrized, as TSPLIB explicit text",
    )
    p.add_argument("--map", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--corner", default="0",
                   help="entry corner for all areas, or comma list per area")
    p.add_argument("--pattern", default="0",
                   help="pattern index for all areas, or comma list per area")
    p.add_argument("--scale", type=float, default=100.0)
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--seed", type=int, default=0)

    return parser


def _print_version(config_name: str | None) -> None:
    print(f"coversched {__version__}")
    if config_name:
        config = PolicyConfig.preset(config_name)
        breakdown = parameter_breakdown(config)
        print(
            f"config: {config_name} (d1={config.d1}, d2={config.d2}, "
            f"d3={config.d3}, layers={config.num_layers}, heads={config.heads})"
        )
        print(f"parameters: {breakdown['total']}")
        for group, count in breakdown.items():
            if group != "total":
                print(f"  {group}: {count}")


def _load_map_at(path: str, index: int):
    maps = load_maps(path)
    if not 0 <= index < len(maps):
        raise UsageError(f"--index {index} out of range; file has {len(maps)} maps")
    return maps[index]


def _parse_per_area(spec: str, n: int, what: str, limit: int) -> list[int]:
    parts = spec.split(",")
    try:
        values = [int(x) for x in parts]
    except ValueError:
        raise UsageError(f"--{what} must be an integer or comma list, got {spec!r}")
    if len(values) == 1:
        values = values * n
    if len(values) != n:
        raise UsageError(f"--{what} lists {len(values)} values for {n} areas")
    if any(not 0 <= v < limit for v in values):
        raise UsageError(f"--{what} values must be in [0, {limit})")
    return values


def _cmd_gen_maps(args) -> int:
    maps = generate_maps(
        args.count,
        args.n,
        radius_min=args.radius_min,
        radius_max=args.radius_max,
        seed=args.seed,
    )
    save_maps(maps, args.out)
    print(f"wrote {len(maps)} maps to {args.out}")
    return 0


def _cmd_train(args) -> int:
    fields: dict = {}
    if args.config_file:
        with open(args.config_file) as fh:
            fields.update(json.load(fh))
    overrides = {
        "epochs": args.epochs,
        "steps_per_epoch": args.steps_per_epoch,
        "batch_size": args.batch_size,
        "n_areas": args.n,
        "lr": args.lr,
        "d1": args.d1,
        "d2": args.d2,
        "d3": args.d3,
        "num_layers": args.layers,
        "heads": args.heads,
        "clip": args.logit_clip,
        "lanes": args.lanes,
        "baseline": args.baseline,
        "baseline_interval": args.baseline_interval,
        "seed": args.seed,
        "lambda_intra": args.lambda_intra,
        "grad_clip": args.grad_clip,
        "checkpoint_interval": args.checkpoint_interval,
    }
    fields.update({k: v for k, v in overrides.items() if v is not None})
    if args.open:
        fields["closed"] = False
    try:
        config = TrainConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad training configuration: {exc}") from None

    def progress(row):
        if row["step"] % max(1, args.log_every) == 0:
            print(
                f"step {row['step']:6d} epoch {row['epoch']:3d} "
                f"cost {row['mean_cost']:.4f} adv {row['mean_advantage']:+.4f} "
                f"gnorm {row['grad_norm']:.3f}"
            )

    result = train(config, args.out, dataset=args.dataset, progress=progress)
    print(f"final checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    if not args.no_plots and result.metrics:
        from .plots import save_training_curves

        figure = save_training_curves(
            result.metrics, os.path.join(args.out, "training.png")
        )
        print(f"figure: {figure}")
    return 0


def _cmd_solve(args) -> int:
    if bool(args.solver) == bool(args.checkpoint):
        raise UsageError("pass exactly one of --solver or --checkpoint")
    area_map = _load_map_at(args.map, args.index)
    closed = not args.open
    lam = args.lambda_intra

    if args.checkpoint:
        policy, _ = load_policy(args.checkpoint)
        result = rollout(
            area_map, policy, mode="greedy", lambda_intra=lam, closed=closed,
            record_trace=args.trace,
        )
        doc = schedule_to_json_dict(
            result.schedule, "policy",
            {"checkpoint": args.checkpoint, "lambda": lam},
            map_id=area_map.map_id, trace=result.trace,
        )
    elif args.solver == "exact":
        schedule, _ = exact_schedule(
            area_map, lambda_intra=lam, lanes=args.lanes, closed=closed
        )
        doc = schedule_to_json_dict(
            schedule, "exact", {"lambda": lam, "lanes": args.lanes},
            map_id=area_map.map_id,
        )
    else:
        schedule = nearest_neighbor(area_map, lambda_intra=lam, closed=closed)
        if args.solver == "nn2opt":
            schedule = two_opt(area_map, schedule, lambda_intra=lam, closed=closed)
        doc = schedule_to_json_dict(
            schedule, args.solver, {"lambda": lam}, map_id=area_map.map_id
        )
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_eval(args) -> int:
    policy, header = load_policy(args.checkpoint)
    maps = load_maps(args.dataset)
    report = evaluate(
        policy,
        maps,
        reference=args.reference,
        lambda_intra=args.lambda_intra,
        closed=not args.open,
        metadata={"checkpoint": args.checkpoint, "seed": args.seed,
                  "checkpoint_step": header.get("step")},
    )
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "report.csv")
    json_path = os.path.join(args.out, "summary.json")
    report.write_csv(csv_path)
    report.write_json(json_path)
    print(f"report: {csv_path}")
    print(f"summary: {json_path}")
    if not args.no_plots and report.ok_records:
        from .plots import save_eval_boxplot

        figure = save_eval_boxplot(report, os.path.join(args.out, "boxplot.png"))
        print(f"figure: {figure}")
    agg = report.aggregates()
    print(
        f"gap ratio: mean {agg['gap_ratio_pct']['mean']:.2f}% "
        f"median {agg['gap_ratio_pct']['median']:.2f}% "
        f"(excess mean {agg['excess_pct']['mean']:+.2f}%)"
    )
    if report.incomplete:
        failures = sum(1 for r in report.records if r.error is not None)
        print(f"warning: {failures} instance(s) failed; see summary.json",
              file=sys.stderr)
    return 0


def _cmd_oracle(args) -> int:
    area_map = _load_map_at(args.map, args.index)
    schedule, cost = exact_schedule(
        area_map, lambda_intra=args.lambda_intra, lanes=args.lanes,
        closed=not args.open,
    )
    doc = schedule_to_json_dict(
        schedule, "exact",
        {"lambda": args.lambda_intra, "lanes": args.lanes},
        map_id=area_map.map_id,
    )
    doc["optimal_cost"] = cost
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_export_tsp(args) -> int:
    area_map = _load_map_at(args.map, args.index)
    n = area_map.n
    corners = _parse_per_area(args.corner, n, "corner", 4)
    patterns = _parse_per_area(args.pattern, n, "pattern", 3)
    edge = build_edge_matrix(area_map, list(zip(corners, patterns)))
    sym = symmetrize(edge, round_to_int=True, scale=args.scale)
    text = to_tsplib(sym, name=f"map{area_map.map_id}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {sym.n}x{sym.n} matrix to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "gen-maps": _cmd_gen_maps,
    "train": _cmd_train,
    "solve": _cmd_solve,
    "eval": _cmd_eval,
    "oracle": _cmd_oracle,
    "export-tsp": _cmd_export_tsp,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            _print_version(args.config)
            return 0
        if args.command is None:
            parser.error("a subcommand is required")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        text = str(exc)
        if "usage:" not in text:
            text = f"{parser.format_usage().rstrip()}\nerror: {text}"
        print(text, file=sys.stderr)
        return 1
    except (TooLarge, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CoverschedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
