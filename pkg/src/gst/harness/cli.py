"""Command line entry point: ``gst train|sweep|convert|measure|report``."""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from ..bitmap import encode_bitmap
from ..checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from ..grouping import DENSE, ConversionError, StructureError, pattern_from_name
from ..netcore import convert_layer
from ..schedule import CONVERTED
from ..sparsity import cr_bitmap, cr_exact, cr_ideal, measure
from .config import ConfigError, load_config, render_config
from .report import aggregate, aggregate_columns, report, write_rows
from .runner import read_runlog, train

THREADS_ENV = "GST_THREADS"


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def _gst_nets(ck: dict) -> dict:
    names = ck["extra"].get("gst_nets") or list(ck["nets"])
    return {name: ck["nets"][name] for name in names}


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    print(render_config(cfg), file=sys.stderr)
    summary = train(cfg, args.out, resume_from=args.resume)
    print(f"wrote {Path(args.out) / 'runlog.csv'}  average_cr={summary['average_cr']!r}  final_eval={summary['final_eval_return']!r}")
    return 0


def _sweep_one(config_path: str, seed: int, out: str) -> dict:
    return train(load_config(config_path).with_seed(seed), out)


def cmd_sweep(args) -> int:
    if args.seeds < 1:
        raise SystemExit("--seeds must be >= 1")
    cfg = load_config(args.config)
    print(render_config(cfg), file=sys.stderr)
    first = cfg.run.seed if args.first_seed is None else args.first_seed
    seeds = [first + i for i in range(args.seeds)]
    out = Path(args.out)
    dirs = {s: str(out / f"seed-{s}") for s in seeds}
    failures = {}
    workers = min(_threads(), len(seeds))
    if workers == 1:
        for s in seeds:
            try:
                _sweep_one(args.config, s, dirs[s])
            except Exception as exc:  # report every failing seed, keep the rest
                failures[s] = exc
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {s: pool.submit(_sweep_one, args.config, s, dirs[s]) for s in seeds}
            for s, fut in futures.items():
                try:
                    fut.result()
                except Exception as exc:
                    failures[s] = exc
    if failures:
        for s, exc in failures.items():
            print(f"seed {s} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    rows = aggregate([read_runlog(Path(dirs[s]) / "runlog.csv") for s in seeds])
    write_rows(out / "aggregate.csv", aggregate_columns(), rows)
    print(f"wrote {out / 'aggregate.csv'} over seeds {seeds}")
    return 0


def cmd_convert(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    nets = _gst_nets(ck)
    worst = 0.0
    for name, net in nets.items():
        opt = ck["optims"].get(name)
        for i, layer in enumerate(net.layers):
            if not layer.compressed:
                continue
            if layer.weight.pattern.kind == DENSE:
                raise ConversionError(f"{name} layer {i} is not grouped; nothing to convert")
            target = pattern_from_name(args.target, layer.out_dim, layer.in_dim)
            worst = max(worst, convert_layer(net, i, target, args.method, opt))
    sched = ck["scheduler"]
    if sched is not None:
        sched = {**sched, "phase": CONVERTED, "conversion_done": True}
    save_checkpoint(args.out, ck["nets"], ck["optims"], sched, ck["extra"], ck["extra_arrays"])
    print(f"max_abs_change {worst!r}")
    return 0


def cmd_measure(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    nets = _gst_nets(ck)
    layers = [layer for net in nets.values() for layer in net.layers]
    rep = measure(layers)
    export = Path(args.export) if args.export else None
    if export is not None:
        export.mkdir(parents=True, exist_ok=True)
    print(f"{'layer':<16} {'shape':>9} {'pattern':<18} {'sparsity':>9} {'bitmap_bytes':>12}")
    k = 0
    for name, net in nets.items():
        for i, layer in enumerate(net.layers):
            shape = f"{layer.out_dim}x{layer.in_dim}"
            if not layer.compressed:
                print(f"{name}.{i:<{15 - len(name)}} {shape:>9} {'(not compressed)':<18} {'-':>9} {'-':>12}")
                continue
            blob = encode_bitmap(layer.weight)
            print(f"{name}.{i:<{15 - len(name)}} {shape:>9} {layer.weight.pattern.name:<18} {rep.s_layer[k]:>9.6f} {len(blob.data):>12}")
            if export is not None:
                blob.save(export / f"{name}.{i}.gstb")
            k += 1
    print(f"global_sparsity {rep.s_global!r}")
    print(f"block_eff {rep.block_eff!r}")
    print(f"frac {rep.frac!r}")
    print(f"cr_ideal {cr_ideal(rep.block_eff, rep.s_global, rep.frac)!r}")
    print(f"cr_bitmap {cr_bitmap(rep.block_eff, rep.s_global, rep.frac)!r}")
    print(f"cr_exact {cr_exact(layers)!r}")
    return 0


def cmd_report(args) -> int:
    summary = report(args.runs, args.out)
    for row in summary:
        print(f"{row['run']}: average_cr={row['average_cr']!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gst", description="Group-sparse training runs and model tooling.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run one configuration end to end")
    t.add_argument("config", help="INI run configuration")
    t.add_argument("--seed", type=int, help="override [run] seed")
    t.add_argument("--out", required=True, help="output directory for runlog.csv, summary.json, final.gstc")
    t.add_argument("--resume", help="continue from a .gstc written by an earlier run of the same config")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help=f"run several seeds (parallelism from ${THREADS_ENV}) and aggregate")
    s.add_argument("config")
    s.add_argument("--seeds", type=int, required=True, help="number of seeds")
    s.add_argument("--first-seed", type=int, help="first seed (default: the config's seed)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("convert", help="change the block pattern of a checkpoint's grouped layers")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--method", choices=["friendly", "projection"], required=True)
    c.add_argument("--target", required=True, help="pattern name, e.g. circulant-2 or b4-friendly-b2")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    m = sub.add_parser("measure", help="print sparsity and compression accounting for a checkpoint")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--export", help="directory for per-layer .gstb bitmap files")
    m.set_defaults(func=cmd_measure)

    r = sub.add_parser("report", help="summary CSV and SVG charts from run logs")
    r.add_argument("--runs", required=True, help="directory searched for runlog.csv files")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, ConversionError, StructureError, FileNotFoundError, ValueError) as exc:
        print(f"gst {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"gst {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
