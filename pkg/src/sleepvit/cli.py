"""Command-line entry point: ``sleepvit {gen-weights,infer,report,sweep,exp-error}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import profiling
from .config import ModelConfig, count_parameters
from .eegio import EpochFileError, read_epochs
from .memory import CapacityError, WeightFileError, load_weight_file, save_weight_file
from .model import (
    Engine,
    InferenceOutput,
    RollingFilter,
    build_memory,
    fill_weights,
    random_epochs,
    random_weights,
    stored_weights,
)
from .oracle import exp_error_csv, exp_error_table, sweep_bitwidths, sweep_csv

EXIT_OK = 0
EXIT_USAGE = 2  # argparse's own code
EXIT_PARSE = 3
EXIT_WEIGHTS = 4
EXIT_CAPACITY = 5
EXIT_FLAGGED = 6

OUT_DIR_ENV = "SLEEPVIT_OUT_DIR"
WEIGHT_FILE_NAME = "weights.svw"


class UsageError(Exception):
    pass


def _range(text: str, lo: int, hi: Optional[int] = None) -> range:
    try:
        a, b = (int(p) for p in text.split(":"))
    except ValueError:
        raise UsageError(f"bad range {text!r}, expected LO:HI") from None
    if a > b or a < lo or (hi is not None and b > hi):
        bound = f"{lo}..{hi}" if hi is not None else f">= {lo}"
        raise UsageError(f"range {text!r} must be ascending within {bound}")
    return range(a, b + 1)


def parse_sweep(text: str) -> tuple[range, range]:
    try:
        wb, ab = text.split(",")
    except ValueError:
        raise UsageError(f"bad sweep {text!r}, expected WB_LO:WB_HI,AB_LO:AB_HI") from None
    return _range(wb, 2), _range(ab, 2)


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(text)
    return path


def _config(args, header: Optional[dict] = None) -> ModelConfig:
    from_file = ModelConfig.from_dict(header["config"]) if header and "config" in header else None
    if args.config:
        cfg = ModelConfig.load(args.config)
        if from_file is not None and from_file != cfg:
            raise WeightFileError("weight file was built for a different config")
        return cfg
    return from_file or ModelConfig()


def load_engine(args) -> Engine:
    """Engine from ``--weights``, or random weights from ``--seed``/``--scale``."""
    if args.weights:
        header, mem = load_weight_file(args.weights, strict_formats=True)
        cfg = _config(args, header)
        try:
            return Engine(mem, cfg)
        except ValueError as exc:
            raise WeightFileError(f"{args.weights}: {exc}") from None
    cfg = _config(args)
    mem = build_memory(cfg)
    fill_weights(mem, random_weights(mem, args.seed, args.scale))
    return Engine(mem, cfg)


# -- gen-weights ----------------------------------------------------------

def cmd_gen_weights(args) -> int:
    if args.scale < 0:
        raise UsageError("--scale must be >= 0")
    cfg = _config(args)
    mem = build_memory(cfg)
    fill_weights(mem, random_weights(mem, args.seed, args.scale))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / WEIGHT_FILE_NAME
    save_weight_file(path, mem, extra={"config": cfg.to_dict(), "seed": args.seed,
                                       "scale": args.scale})
    n_weights = sum(1 for d in mem.tensors.values() if d.bank_set.value == "weights")
    print(f"wrote {path}")
    print(f"tensors: {n_weights} weight, {len(mem.tensors) - n_weights} intermediate")
    print(f"parameters: {count_parameters(cfg)}")
    for kind, fp in mem.footprint_report().items():
        print(f"{kind}: {fp['used']} of {fp['capacity']} words used")
    return EXIT_OK


# -- infer ----------------------------------------------------------------

RESULT_FIELDS = ["file", "epoch", "stage", "raw_stage", "cycles", "flags"]


def _result_rows(name: str, outs: Sequence[InferenceOutput], n_classes: int) -> list[dict]:
    rows = []
    for i, o in enumerate(outs):
        row = {"file": name, "epoch": i, "stage": o.stage.name.lower(),
               "raw_stage": o.raw_stage.name.lower(), "cycles": o.total_cycles,
               "flags": o.trace.flag_count}
        for c in range(n_classes):
            row[f"p{c}"] = float(o.class_probs[c])
        for c in range(n_classes):
            row[f"f{c}"] = float(o.filtered_probs[c])
        rows.append(row)
    return rows


def _run_file(job) -> tuple[list[dict], list[dict]]:
    args, path = job
    engine = load_engine(args)
    epochs = read_epochs(path, engine.cfg.samples)
    state = None if args.no_filter else RollingFilter(engine.cfg.avg_depth, engine.fmt)
    outs = [engine.infer(e, state) for e in epochs]
    rows = _result_rows(str(path), outs, engine.cfg.num_classes)
    return rows, [o.trace.to_dict() for o in outs]


def _csv(rows: list[dict], fields: list[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def cmd_infer(args) -> int:
    if not args.input:
        raise UsageError("infer needs at least one --input file")
    jobs = [(args, p) for p in args.input]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_file, jobs))
    else:
        results = [_run_file(j) for j in jobs]
    rows = [r for res, _ in results for r in res]
    n_classes = sum(1 for k in rows[0] if k.startswith("p")) if rows else 0
    fields = (RESULT_FIELDS[:4] + [f"p{c}" for c in range(n_classes)]
              + [f"f{c}" for c in range(n_classes)] + RESULT_FIELDS[4:])
    out = Path(args.out_dir)
    _write(out, "results.csv", _csv(rows, fields))
    _write(out, "results.json", profiling.to_json(rows))
    if args.emit_trace:
        traces = [{"file": str(p), "epochs": t} for p, (_, t) in zip(args.input, results)]
        _write(out, "trace.json", profiling.to_json(traces))
    flagged = sum(r["flags"] for r in rows)
    print(f"{len(rows)} epochs -> {out / 'results.csv'}" + (f" ({flagged} flag events)" if flagged else ""))
    if args.strict and flagged:
        print(f"strict: {flagged} overflow/divide/sqrt flag events raised", file=sys.stderr)
        return EXIT_FLAGGED
    return EXIT_OK


# -- report ---------------------------------------------------------------

def _trace_for_report(args) -> profiling.ActivityTrace:
    if args.trace:
        data = json.loads(Path(args.trace).read_text())
        try:
            return profiling.ActivityTrace.from_dict(data[-1]["epochs"][-1])
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EpochFileError(f"{args.trace}: not a trace file ({exc})") from None
    engine = load_engine(args)
    if args.input:
        epoch = read_epochs(args.input[0], engine.cfg.samples)[0]
    else:
        epoch = random_epochs(args.seed, 1, engine.cfg.samples)[0]
    return engine.infer(epoch).trace


def cmd_report(args) -> int:
    trace = _trace_for_report(args)
    pm = profiling.PowerModel()
    rows = profiling.activity_ratios(trace, pm)
    lat = profiling.latency_report(trace, pm.clock_hz, pm.inference_period_s)
    summ = profiling.summary(trace, pm)
    out = Path(args.out_dir)
    _write(out, "activity.csv", profiling.activity_csv(rows))
    _write(out, "latency.csv", profiling.latency_csv(lat))
    _write(out, "summary.csv", profiling.summary_csv(summ))
    _write(out, "report.json", profiling.to_json({
        "activity": [vars(r) for r in rows], "latency": lat, "summary": summ,
        "trace": trace.to_dict()}))
    print(f"latency {lat['cycles']} cycles = {lat['seconds'] * 1e3:.2f} ms "
          f"({lat['epoch_fraction'] * 100:.3f}% of the epoch)")
    print(f"effective power {summ['effective_power_mw']:.3f} mW")
    if args.strict and trace.flag_count:
        return EXIT_FLAGGED
    return EXIT_OK


# -- sweep ----------------------------------------------------------------

def cmd_sweep(args) -> int:
    wbs, abs_ = parse_sweep(args.sweep)
    if args.weights:
        header, mem = load_weight_file(args.weights)
        cfg = _config(args, header)
        weights = stored_weights(mem)
    else:
        cfg = _config(args)
        mem = build_memory(cfg)
        fill_weights(mem, random_weights(mem, args.seed, args.scale))
        weights = stored_weights(mem)
    if args.input:
        epochs = np.concatenate([read_epochs(p, cfg.samples) for p in args.input])
    else:
        epochs = random_epochs(args.seed, args.epochs, cfg.samples)
    points = sweep_bitwidths(weights, epochs, wbs, abs_, cfg, workers=args.jobs)
    path = _write(Path(args.out_dir), "sweep.csv", sweep_csv(points))
    print(f"{len(points)} sweep points over {len(epochs)} epochs -> {path}")
    return EXIT_OK


# -- exp-error ------------------------------------------------------------

def cmd_exp_error(args) -> int:
    terms = _range(args.terms, 1, 8)
    rows = exp_error_table(terms, args.grid)
    path = _write(Path(args.out_dir), "exp_error.csv", exp_error_csv(rows))
    print(f"{len(rows)} rows -> {path}")
    return EXIT_OK


# -- wiring ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="model config JSON (default: built-in)")
    common.add_argument("--out-dir", default=os.environ.get(OUT_DIR_ENV, "out"),
                        help=f"output directory (default: ${OUT_DIR_ENV} or ./out)")
    common.add_argument("--seed", type=int, default=0, help="seed for random weights/epochs")
    common.add_argument("--scale", type=float, default=0.25,
                        help="random weights are uniform in [-scale, scale]")
    common.add_argument("--strict", action="store_true",
                        help="exit nonzero if any overflow/divide/sqrt flag was raised")

    engine = argparse.ArgumentParser(add_help=False)
    engine.add_argument("--weights", help="weight file (default: random weights from --seed)")
    engine.add_argument("--input", nargs="+", default=[],
                        help="epoch files: .csv/.txt one sample per line, otherwise raw u16 LE")
    engine.add_argument("--jobs", type=int, default=1, help="parallel workers")

    p = argparse.ArgumentParser(prog="sleepvit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-weights", parents=[common], help="write a seeded random weight file")
    s.set_defaults(func=cmd_gen_weights)

    s = sub.add_parser("infer", parents=[common, engine], help="classify epoch files")
    s.add_argument("--no-filter", action="store_true", help="disable the rolling average")
    s.add_argument("--emit-trace", action="store_true", help="also write trace.json")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("report", parents=[common, engine],
                       help="activity, latency and power for one inference")
    s.add_argument("--trace", help="trace.json from 'infer --emit-trace' (uses its last epoch)")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("sweep", parents=[common, engine], help="storage bit-width sweep")
    s.add_argument("--sweep", default="2:16,2:16", help="WB_LO:WB_HI,AB_LO:AB_HI")
    s.add_argument("--epochs", type=int, default=200,
                   help="random epochs to use when no --input is given")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("exp-error", parents=[common], help="exponential approximation error")
    s.add_argument("--terms", default="1:8", help="LO:HI within 1..8")
    s.add_argument("--grid", type=int, default=2001, help="grid points over [-1, 1]")
    s.set_defaults(func=cmd_exp_error)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EpochFileError, json.JSONDecodeError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except WeightFileError as exc:
        print(f"invalid weights: {exc}", file=sys.stderr)
        return EXIT_WEIGHTS
    except CapacityError as exc:
        print(f"capacity: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
