"""Command-line front-end.

Subcommands: gen-traces, train, eval, certify, sweep, report.
Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import json
import os
import sys

import numpy as np

from . import evaluate as eval_mod
from . import traces as traces_mod
from .certify import PropertySpec, write_certificate_csv
from .config import coerce_into, parse_config_file, parse_overrides
from .network import load_checkpoint
from .report import build_report
from .sim import N_FEATURES
from .training import CONFIG_ALIASES, TrainConfig, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="certcc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-traces", help="emit synthetic bandwidth trace files")
    p.add_argument("--shape", required=True, choices=traces_mod.TRACE_SHAPES)
    p.add_argument("--out", required=True, help="output trace file")
    p.add_argument("--lo-mbps", type=float, default=6.0)
    p.add_argument("--hi-mbps", type=float, default=12.0)
    p.add_argument("--period-s", type=float, default=5.0)
    p.add_argument("--duration-s", type=float, default=60.0)
    p.add_argument("--mtu", type=int, default=traces_mod.DEFAULT_MTU)

    p = sub.add_parser("train", help="run certified training")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any configuration key")
    p.add_argument("--progress-every", type=int, default=0)

    p = sub.add_parser("eval", help="evaluate a checkpoint over traces")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--traces", required=True, nargs="+",
                   help="trace files (globs accepted)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="optional config file for overrides")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--property", choices=["performance", "robustness"])
    p.add_argument("--n-components", type=int, default=50)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--noise", type=float, default=None,
                   help="relative delay-noise bound for the robustness experiment")
    p.add_argument("--buffer-bdp", type=float, default=None)
    p.add_argument("--min-rtt-ms", type=float, default=50.0)

    p = sub.add_parser("certify", help="offline certification of a state log")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--state-log", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--property", choices=["performance", "robustness"])
    p.add_argument("--n-components", type=int, default=50)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("sweep", help="train and evaluate across one parameter")
    p.add_argument("--param", required=True, choices=["lambda", "n_components"])
    p.add_argument("--values", required=True,
                   help="comma-separated parameter values")
    p.add_argument("--config", help="base configuration file")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--traces", nargs="+", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--buffer-bdp", type=float, default=None)
    p.add_argument("--min-rtt-ms", type=float, default=50.0)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--eval-components", type=int, default=50)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out-dir", default=None)
    return parser


def _resolve_train_config(args) -> TrainConfig:
    cfg = TrainConfig()
    if getattr(args, "config", None):
        cfg = coerce_into(cfg, parse_config_file(args.config), CONFIG_ALIASES)
    overrides = parse_overrides(getattr(args, "set", None))
    if overrides:
        cfg = coerce_into(cfg, overrides, CONFIG_ALIASES)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _load_traces(patterns, mtu) -> dict:
    paths = []
    for pattern in patterns:
        hits = sorted(glob.glob(pattern))
        if not hits and os.path.exists(pattern):
            hits = [pattern]
        if not hits:
            raise FileNotFoundError(f"no trace files match {pattern!r}")
        paths.extend(hits)
    return {os.path.splitext(os.path.basename(p))[0]: traces_mod.load_trace(p, mtu)
            for p in paths}


def _property_from(config: dict, override_kind: str | None,
                   overrides: dict) -> PropertySpec:
    cfg = TrainConfig()
    if config:
        known = {k: str(v) for k, v in config.items()
                 if CONFIG_ALIASES.get(k, k) in {f.name for f in dataclasses.fields(cfg)}}
        cfg = coerce_into(cfg, known, CONFIG_ALIASES)
    if overrides:
        cfg = coerce_into(cfg, overrides, CONFIG_ALIASES)
    if override_kind:
        cfg = dataclasses.replace(cfg, property_kind=override_kind)
    return cfg.property_spec()


def _cmd_gen_traces(args) -> int:
    trace = traces_mod.generate_trace(args.shape, args.lo_mbps, args.hi_mbps,
                                      args.duration_s, args.period_s, args.mtu)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    traces_mod.save_trace(args.out, trace, args.mtu)
    print(f"wrote {args.shape} trace ({args.duration_s:.0f}s) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    summary = train(cfg, args.out_dir, progress_every=args.progress_every)
    print(json.dumps({k: v for k, v in summary.items() if k != "run_dir"},
                     indent=2, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    nets, _step, config = load_checkpoint(args.checkpoint)
    if "actor" not in nets:
        raise ValueError("checkpoint does not contain an actor network")
    net = nets["actor"]
    overrides = parse_overrides(args.set)
    spec = _property_from(config, args.property, overrides)
    if net.input_dim != spec.input_dim:
        raise ValueError(f"checkpoint input dimension {net.input_dim} does not match "
                         f"property layout {spec.input_dim}")
    mtu = int(config.get("mtu", traces_mod.DEFAULT_MTU))
    traces = _load_traces(args.traces, mtu)
    buffer_bdp = args.buffer_bdp if args.buffer_bdp is not None \
        else float(config.get("buffer_bdp", 2.0))
    summary = eval_mod.evaluate(
        net, spec, traces,
        min_rtt_ms=args.min_rtt_ms, buffer_bdp=buffer_bdp, mtu=mtu,
        monitor_interval_ms=float(config.get("monitor_interval_ms", 20.0)),
        n_components=args.n_components, repeats=args.repeats,
        noise_bound=args.noise, seed=args.seed,
        zeta=float(config.get("zeta", 1.0)), beta=float(config.get("beta", 2.0)),
        out_dir=args.out_dir)
    agg = summary["aggregate"]
    print(json.dumps({"aggregate": agg}, indent=2, sort_keys=True))
    return 0


def _cmd_certify(args) -> int:
    nets, _step, config = load_checkpoint(args.checkpoint)
    net = nets["actor"]
    overrides = parse_overrides(args.set)
    spec = _property_from(config, args.property, overrides)
    rows = eval_mod.read_state_log(args.state_log)
    reports, metrics = eval_mod.certify_state_log(net, spec, rows,
                                                  args.n_components)
    os.makedirs(args.out_dir, exist_ok=True)
    flat = eval_mod._flatten_reports(reports)
    write_certificate_csv(os.path.join(args.out_dir, "certificates.csv"), flat)
    with open(os.path.join(args.out_dir, "certify_summary.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValueError("sweep needs at least one value")
    os.makedirs(args.out_dir, exist_ok=True)
    mtu = traces_mod.DEFAULT_MTU
    traces = _load_traces(args.traces, mtu)
    rows = []
    for value in values:
        run_dir = os.path.join(args.out_dir, f"{args.param}_{value}")
        cfg = _resolve_train_config(args)
        key = "lam" if args.param == "lambda" else args.param
        cfg = coerce_into(cfg, {key: value})
        summary = train(cfg, run_dir)
        nets, _, _ = load_checkpoint(summary["best_checkpoint"])
        spec = cfg.property_spec()
        buffer_bdp = args.buffer_bdp if args.buffer_bdp is not None else 2.0
        ev = eval_mod.evaluate(
            nets["actor"], spec, traces, min_rtt_ms=args.min_rtt_ms,
            buffer_bdp=buffer_bdp, mtu=cfg.mtu,
            monitor_interval_ms=cfg.monitor_interval_ms,
            n_components=args.eval_components, repeats=args.repeats,
            seed=cfg.seed, zeta=cfg.zeta, beta=cfg.beta, out_dir=run_dir)
        agg = ev["aggregate"]
        fcs_key = "fcs_joint" if spec.kind == "performance" else "fcs"
        rows.append({
            args.param: value,
            "utilization": agg["utilization"]["mean"],
            "p95_delay_ms": agg["p95_delay_ms"]["mean"],
            "fcs": agg["cert"][fcs_key]["mean"],
            "epoch_rate": summary["epoch_rate"],
        })
    table_path = os.path.join(args.out_dir, "sweep.csv")
    with open(table_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    widths = {k: max(len(k), 12) for k in rows[0]}
    header = "  ".join(k.ljust(widths[k]) for k in rows[0])
    print(header)
    for row in rows:
        print("  ".join((f"{v:.4f}" if isinstance(v, float) else str(v)).ljust(widths[k])
                        for k, v in row.items()))
    print(f"sweep table written to {table_path}")
    return 0


def _cmd_report(args) -> int:
    report = build_report(args.run_dir, args.out_dir)
    sections = sorted(k for k in report if k != "run_dir")
    print(f"report written under {args.out_dir or args.run_dir} "
          f"(sections: {', '.join(sections)})")
    return 0


_COMMANDS = {
    "gen-traces": _cmd_gen_traces,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "certify": _cmd_certify,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
