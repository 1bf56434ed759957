"""Command-line harness: train fixtures, convert, simulate, and report
conversion diagnostics (accuracy-vs-time, output differences, SIN counts).

Exit codes: 0 success, 1 usage, 2 validation, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import ann, model_io, snn, trainer
from .errors import SpikekitError

EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_IO = 3

STATS_NAME = "stats.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_threads() -> int:
    return int(os.environ.get("SPIKEKIT_THREADS", "1"))


def _load_data(path: str, fmt: str, scale: float, limit: int | None):
    inputs, labels = model_io.load_dataset(path, fmt)
    if limit is not None:
        inputs, labels = inputs[:limit], labels[:limit]
    return inputs.astype(np.float32) * np.float32(scale), labels


def _load_stats(conv_dir: Path) -> dict:
    with open(conv_dir / STATS_NAME, encoding="utf-8") as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    out = Path(args.out)
    if args.dataset == "blobs":
        widths = [int(w) for w in args.widths.split(",")]
        xtr, ytr = trainer.make_blobs(args.train_samples, dim=widths[0], seed=args.seed + 1)
        xte, yte = trainer.make_blobs(args.test_samples, dim=widths[0], seed=args.seed + 2)
        out.mkdir(parents=True, exist_ok=True)
        model_io.write_bsd(out / "train.bsd", xtr, ytr)
        model_io.write_bsd(out / "test.bsd", xte, yte)
    else:
        xtr, ytr = _load_data(args.dataset, args.format, args.input_scale, None)
        xtr = xtr.reshape(len(xtr), -1)
        widths = [int(w) for w in args.widths.split(",")]
        if widths[0] != xtr.shape[1]:
            widths = [xtr.shape[1]] + widths[1:]
        xte = yte = None
    cfg = trainer.TrainConfig(
        widths=widths,
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    test_set = (xte, yte) if xte is not None else None
    model, info = trainer.train_mlp(cfg, (xtr, ytr), test_set)
    model_io.save_model(model, out)
    print(f"train accuracy: {info['train_accuracy']:.4f}")
    if "test_accuracy" in info:
        print(f"test accuracy:  {info['test_accuracy']:.4f}")
    print(f"model written to {out}")
    return 0


# ---------------------------------------------------------------------------
# convert


def cmd_convert(args) -> int:
    model = model_io.load_model(args.model)
    inputs, _ = _load_data(args.calib, args.format, args.input_scale, args.calib_samples)
    folded = ann.fold_batchnorm(model)
    stats = ann.collect_lambdas(folded, inputs, p_max=args.p_max)
    normalized = ann.normalize_weights(folded, stats)
    out = Path(args.out)
    model_io.save_model(normalized, out)
    scales = {}
    for layer in normalized.layers:
        if layer.kind == "residual":
            scales[layer.out_point] = ann.residual_scale(stats, layer)
    payload = stats.to_dict()
    payload["input_scale"] = args.input_scale
    payload["residual_scales"] = scales
    with open(out / STATS_NAME, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=1, sort_keys=True)
        f.write("\n")
    print(f"converted model written to {out} ({len(stats.lambdas)} lambda points)")
    return 0


# ---------------------------------------------------------------------------
# simulate


def _simulate_chunk(net, normalized, x_norm, labels, cfg, input_mode, lam_out):
    trace = snn.simulate(net, x_norm, cfg, input_mode=input_mode)
    ann_logits, record = ann.run_inference(normalized, x_norm, capture=True)
    n = cfg.n_periods
    out = trace.output or {"period_in": None}
    # cumulative per-period readout; argmax is scale-invariant so raw sums do
    if trace.output is not None:
        warm = trace.output["warmup"] if net.mode == "bsnn" else 0
        per_period = trace.output["period_in"]
    else:
        entry = trace.units[trace.readout_point]
        warm = entry["warmup"] if net.mode == "bsnn" else 0
        per_period = entry["period_ws"].reshape(n, len(labels), -1)
    curve_correct = []
    for p in range(1, n + 1):
        lo = min(warm, p - 1)
        decoded = per_period[lo:p].sum(axis=0)
        curve_correct.append(int(np.sum(decoded.argmax(axis=1) == labels)))
    final = snn.decode_output(trace)
    diffs = np.abs(final * lam_out - ann_logits * lam_out)
    sin = snn.sin_count(record, trace)
    spikes = sum(float(e["spikes"].sum()) for e in trace.units.values())
    return {
        "curve_correct": curve_correct,
        "final_correct": int(np.sum(final.argmax(axis=1) == labels)),
        "ann_correct": int(np.sum(ann_logits.argmax(axis=1) == labels)),
        "diff_max": float(diffs.max()),
        "diff_sum": float(diffs.sum()),
        "diff_count": int(diffs.size),
        "sin": sin,
        "spikes": spikes,
        "samples": len(labels),
    }


def run_simulation(
    normalized,
    stats: dict,
    inputs,
    labels,
    mode: str,
    cfg: snn.PhaseConfig,
    sn: bool = True,
    input_mode: str = "phase",
    threads: int = 1,
    chunk_size: int = 256,
) -> dict:
    """Simulate all samples and aggregate a SimReport dict."""
    has_residual = any(l.kind == "residual" for l in normalized.layers)
    if sn and not has_residual:
        print("note: --sn has no effect on a model without residual blocks")
    net = snn.build_snn(normalized, cfg, mode=mode, sn_enabled=sn)
    lam_in = stats["lambdas"].get("input", 1.0)
    lam_out = stats["lambdas"].get("output", 1.0)
    x_norm = inputs.astype(np.float64).reshape((len(inputs),) + net.input_shape) / lam_in
    chunks = [
        (x_norm[i : i + chunk_size], labels[i : i + chunk_size])
        for i in range(0, len(labels), chunk_size)
    ]
    t0 = time.perf_counter()

    def work(chunk):
        x, y = chunk
        local = snn.build_snn(normalized, cfg, mode=mode, sn_enabled=sn)
        return _simulate_chunk(local, normalized, x, y, cfg, input_mode, lam_out)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    wall = time.perf_counter() - t0
    n_samples = sum(p["samples"] for p in parts)
    curve = [
        sum(p["curve_correct"][i] for p in parts) / n_samples
        for i in range(cfg.n_periods)
    ]
    sin_totals: dict[str, int] = {}
    for p in parts:
        for point, c in p["sin"].items():
            sin_totals[point] = sin_totals.get(point, 0) + c
    return {
        "mode": mode,
        "K": cfg.K,
        "n_periods": cfg.n_periods,
        "sn": sn,
        "input_mode": input_mode,
        "samples": n_samples,
        "curve": [{"period": i + 1, "accuracy": a} for i, a in enumerate(curve)],
        "final_accuracy": sum(p["final_correct"] for p in parts) / n_samples,
        "ann_accuracy": sum(p["ann_correct"] for p in parts) / n_samples,
        "output_diff_max": max(p["diff_max"] for p in parts),
        "output_diff_mean": sum(p["diff_sum"] for p in parts)
        / sum(p["diff_count"] for p in parts),
        "sin": sin_totals,
        "spike_total": sum(p["spikes"] for p in parts),
        "wall_clock_sec": wall,
    }


def write_report(report: dict, report_path, curve_path=None) -> None:
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=1, sort_keys=True)
        f.write("\n")
    if curve_path:
        with open(curve_path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(["period", "accuracy"])
            for row in report["curve"]:
                w.writerow([row["period"], repr(row["accuracy"])])


def read_report(report_path) -> dict:
    with open(report_path, encoding="utf-8") as f:
        return json.load(f)


def cmd_simulate(args) -> int:
    if args.periods < 1:
        raise UsageError("--periods must be >= 1")
    conv = Path(args.model)
    normalized = model_io.load_model(conv)
    stats = _load_stats(conv)
    inputs, labels = _load_data(
        args.data, args.format, stats.get("input_scale", 1.0), args.limit
    )
    cfg = snn.PhaseConfig(K=args.K, n_periods=args.periods)
    report = run_simulation(
        normalized,
        stats,
        inputs,
        labels,
        mode=args.mode,
        cfg=cfg,
        sn=args.sn,
        input_mode=args.input_mode,
        threads=args.threads,
    )
    write_report(report, args.report, args.curve)
    print(
        f"mode={report['mode']} T={cfg.T} ann={report['ann_accuracy']:.4f} "
        f"snn={report['final_accuracy']:.4f} max|diff|={report['output_diff_max']:.5f}"
    )
    print(f"report written to {args.report}")
    return 0


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args) -> int:
    if args.periods < 1:
        raise UsageError("--periods must be >= 1")
    conv = Path(args.model)
    normalized = model_io.load_model(conv)
    stats = _load_stats(conv)
    inputs, _ = _load_data(
        args.data, args.format, stats.get("input_scale", 1.0), args.limit
    )
    cfg = snn.PhaseConfig(K=args.K, n_periods=args.periods)
    if args.periods <= 1:
        print("warning: a single period is pre-warm-up for bsnn decoding")
    lam_in = stats["lambdas"].get("input", 1.0)
    lam_out = stats["lambdas"].get("output", 1.0)
    x_norm = inputs.astype(np.float64).reshape(
        (len(inputs),) + tuple(normalized.input_shape)
    ) / lam_in
    ann_logits, _ = ann.run_inference(normalized, x_norm)
    modes = args.modes.split(",")
    rows = []
    summary = {}
    bin_w = 0.001
    for mode in modes:
        if mode not in snn.MODES:
            raise UsageError(f"unknown mode {mode!r}")
        net = snn.build_snn(normalized, cfg, mode=mode, sn_enabled=args.sn)
        trace = snn.simulate(net, x_norm, cfg)
        decoded = snn.decode_output(trace)
        diffs = (decoded - ann_logits) * lam_out
        summary[mode] = {
            "max_abs": float(np.abs(diffs).max()),
            "mean_abs": float(np.abs(diffs).mean()),
        }
        bins = np.floor(diffs.ravel() / bin_w).astype(np.int64)
        for b, count in zip(*np.unique(bins, return_counts=True)):
            rows.append((mode, b * bin_w, int(count)))
    with open(args.out, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["mode", "bin_lo", "count"])
        for mode, lo, count in rows:
            w.writerow([mode, f"{lo:.3f}", count])
    for mode in modes:
        s = summary[mode]
        print(f"{mode}: max|diff|={s['max_abs']:.5f} mean|diff|={s['mean_abs']:.5f}")
    print(f"histogram written to {args.out}")
    return 0


def cmd_report(args) -> int:
    report = read_report(args.report)
    print(json.dumps(report, indent=1, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> _Parser:
    p = _Parser(prog="spikekit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a dense MLP fixture")
    t.add_argument("--dataset", default="blobs", help="'blobs' or a dataset path")
    t.add_argument("--format", default="bsd", choices=["bsd", "idx"])
    t.add_argument("--out", required=True)
    t.add_argument("--widths", default="16,64,32,10")
    t.add_argument("--epochs", type=int, default=15)
    t.add_argument("--lr", type=float, default=0.2)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--input-scale", type=float, default=1.0)
    t.add_argument("--train-samples", type=int, default=4000)
    t.add_argument("--test-samples", type=int, default=2000)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("convert", help="fold, calibrate, and normalize a model")
    c.add_argument("--model", required=True)
    c.add_argument("--calib", required=True)
    c.add_argument("--format", default="bsd", choices=["bsd", "idx"])
    c.add_argument("--p-max", type=float, default=1.0)
    c.add_argument("--calib-samples", type=int, default=1000)
    c.add_argument("--input-scale", type=float, default=1.0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_convert)

    s = sub.add_parser("simulate", help="run the converted model as an SNN")
    s.add_argument("--model", required=True, help="converted model directory")
    s.add_argument("--data", required=True)
    s.add_argument("--format", default="bsd", choices=["bsd", "idx"])
    s.add_argument("--mode", default="bsnn", choices=list(snn.MODES))
    s.add_argument("--K", type=int, default=8)
    s.add_argument("--periods", type=int, default=16)
    s.add_argument("--sn", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--input-mode", default="phase", choices=["phase", "constant"])
    s.add_argument("--threads", type=int, default=_default_threads())
    s.add_argument("--limit", type=int, default=None)
    s.add_argument("--report", default="report.json")
    s.add_argument("--curve", default="curve.csv")
    s.set_defaults(func=cmd_simulate)

    cp = sub.add_parser("compare", help="output-difference histograms per mode")
    cp.add_argument("--model", required=True)
    cp.add_argument("--data", required=True)
    cp.add_argument("--format", default="bsd", choices=["bsd", "idx"])
    cp.add_argument("--modes", default="bsnn,phase,rate")
    cp.add_argument("--K", type=int, default=8)
    cp.add_argument("--periods", type=int, default=16)
    cp.add_argument("--sn", action=argparse.BooleanOptionalAction, default=True)
    cp.add_argument("--limit", type=int, default=100)
    cp.add_argument("--out", default="hist.csv")
    cp.set_defaults(func=cmd_compare)

    r = sub.add_parser("report", help="pretty-print a report.json")
    r.add_argument("--report", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except SpikekitError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
