"""Command-line entry points: run experiments, report results, export data.

``krkc run`` trains one or more strategies over one or more seeds and
writes per-run artifacts under ``<out>/<strategy>/seed_<seed>/``; the
output root resolves from ``--out``, then the ``KRKC_OUT_ROOT``
environment variable, then the config's ``out_dir``.  ``krkc report``
aggregates the metrics files of a finished sweep into per-strategy
medians, and ``krkc export-data`` materialises the synthetic stream as a
CSV for external tooling.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from statistics import median

from .baselines import run_strategy
from .config import ExperimentConfig, config_echo, default_config, load_config
from .data import export_stream_csv, generate_stream
from .trainer import reference_scores

OUT_ROOT_ENV = "KRKC_OUT_ROOT"


def _resolve_config(spec: str) -> ExperimentConfig:
    if spec == "default":
        return default_config()
    return load_config(spec)


def _apply_run_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    stream, train = config.stream, config.train
    strategies, seeds = config.strategies, config.seeds
    if args.tasks is not None:
        stream = replace(stream, n_tasks=args.tasks)
    if args.epochs is not None:
        train = replace(train, e_max=args.epochs)
    if args.strategy is not None:
        strategies = tuple(s.strip() for s in args.strategy.split(",") if s.strip())
    if args.seed is not None:
        seeds = tuple(int(s) for s in args.seed.split(","))
    updated = ExperimentConfig(
        stream=stream, train=train, strategies=strategies, seeds=seeds,
        out_dir=config.out_dir,
    )
    updated.validate()
    return updated


def _out_root(args_out: str | None, config: ExperimentConfig) -> str:
    if args_out:
        return args_out
    env = os.environ.get(OUT_ROOT_ENV)
    if env:
        return env
    return config.out_dir


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = _apply_run_overrides(_resolve_config(args.config), args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    root = _out_root(args.out, config)
    sequential = [s for s in config.strategies if s != "joint"]
    for seed in config.seeds:
        stream = generate_stream(replace(config.stream, seed=seed))
        references = None
        if sequential and len(stream) >= 2:
            references = reference_scores(stream, config.train, seed)
        for name in config.strategies:
            out_dir = os.path.join(root, name, f"seed_{seed}")
            payload = run_strategy(
                name, stream, config.train, seed, references=references,
                out_dir=out_dir, config_echo=config_echo(config, name, seed),
            )
            print(
                f"strategy={name} seed={seed} "
                f"s_bar_rank1={payload['avg_incremental_rank1']:.4f} "
                f"s_bar_map={payload['avg_incremental_map']:.4f} -> {out_dir}"
            )
    return 0


def _collect_payloads(root: str) -> tuple[list[dict], list[str]]:
    payloads, warnings = [], []
    if not os.path.isdir(root):
        return payloads, [f"results root {root!r} does not exist"]
    for strategy in sorted(os.listdir(root)):
        strat_dir = os.path.join(root, strategy)
        if not os.path.isdir(strat_dir):
            continue
        for run_name in sorted(os.listdir(strat_dir)):
            run_dir = os.path.join(strat_dir, run_name)
            path = os.path.join(run_dir, "metrics.json")
            if not os.path.isfile(path):
                warnings.append(f"skipping {run_dir}: no metrics.json")
                continue
            try:
                with open(path, "r", encoding="ascii") as fh:
                    payload = json.load(fh)
                payload["avg_incremental_map"], payload["avg_incremental_rank1"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                warnings.append(f"skipping {path}: {exc}")
                continue
            payloads.append(payload)
    return payloads, warnings


def _median_or_none(values: list) -> float | None:
    present = [v for v in values if v is not None]
    return median(present) if present else None


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:+.4f}"


def cmd_report(args: argparse.Namespace) -> int:
    payloads, warnings = _collect_payloads(args.results)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if not payloads:
        print("error: no readable metrics.json files found", file=sys.stderr)
        return 2
    by_strategy: dict[str, list[dict]] = {}
    for payload in payloads:
        by_strategy.setdefault(payload["strategy"], []).append(payload)
    metric = args.metric

    def stat(payload: dict, field: str, metric_name: str):
        if field == "s_bar":
            return payload[f"avg_incremental_{metric_name}"]
        block = payload[field]
        return None if block is None else block[metric_name]

    print(f"strategy        runs  s_bar({metric})  bwt_final   fwt")
    for name in sorted(by_strategy):
        rows = by_strategy[name]
        s_bar = _median_or_none([stat(r, "s_bar", metric) for r in rows])
        bwt = _median_or_none([stat(r, "bwt_final_row", metric) for r in rows])
        fwt = _median_or_none([stat(r, "fwt", metric) for r in rows])
        print(f"{name:<15} {len(rows):>4}  {s_bar:>12.4f}  {_fmt(bwt):>9}  {_fmt(fwt):>9}")
    if args.out:
        fields = ("s_bar", "bwt_paper", "bwt_final_row", "fwt")
        lines = ["strategy,seed,metric,s_bar,bwt_paper,bwt_final_row,fwt"]
        for name in sorted(by_strategy):
            for payload in sorted(by_strategy[name], key=lambda p: p["seed"]):
                for metric_name in ("map", "rank1"):
                    cells = [stat(payload, f, metric_name) for f in fields]
                    lines.append(
                        ",".join(
                            [name, str(payload["seed"]), metric_name]
                            + ["" if v is None else repr(v) for v in cells]
                        )
                    )
            for metric_name in ("map", "rank1"):
                rows = by_strategy[name]
                med = [
                    _median_or_none([stat(r, f, metric_name) for r in rows])
                    for f in fields
                ]
                lines.append(
                    ",".join(
                        [name, "median", metric_name]
                        + ["" if v is None else repr(v) for v in med]
                    )
                )
        with open(args.out, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_export_data(args: argparse.Namespace) -> int:
    try:
        config = _resolve_config(args.config)
        stream_cfg = config.stream
        if args.seed is not None:
            stream_cfg = replace(stream_cfg, seed=args.seed)
        stream = generate_stream(stream_cfg)
        export_stream_csv(stream, args.out)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    n = sum(t.n_train + t.query_x.shape[0] + t.gallery_x.shape[0] for t in stream)
    print(f"wrote {n} samples across {len(stream)} tasks to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="krkc",
        description="Lifelong representation learning on synthetic identity streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="train strategies across seeds")
    run_p.add_argument("--config", default="default",
                       help="path to an INI config, or 'default' for built-ins")
    run_p.add_argument("--seed", help="comma-separated seeds, overriding the config")
    run_p.add_argument("--strategy", help="comma-separated strategy names")
    run_p.add_argument("--tasks", type=int, help="override the number of tasks")
    run_p.add_argument("--epochs", type=int, help="override epochs per task")
    run_p.add_argument("--out", help="output root (else $KRKC_OUT_ROOT, else config)")
    run_p.set_defaults(func=cmd_run)

    report_p = sub.add_parser("report", help="aggregate a sweep into medians")
    report_p.add_argument("--results", required=True, help="the sweep's output root")
    report_p.add_argument("--metric", choices=("rank1", "map"), default="rank1")
    report_p.add_argument("--out", help="also write a per-run comparison CSV")
    report_p.set_defaults(func=cmd_report)

    export_p = sub.add_parser("export-data", help="write the synthetic stream as CSV")
    export_p.add_argument("--config", default="default")
    export_p.add_argument("--seed", type=int, help="override the stream seed")
    export_p.add_argument("--out", required=True)
    export_p.set_defaults(func=cmd_export_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
