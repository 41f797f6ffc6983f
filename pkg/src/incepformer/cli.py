"""Command-line harness: train, eval, gradcheck, bench, shapes.

Every command is deterministic under a fixed seed and exits 0 only when all
of its internal validations pass.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

from .bench import (ATTENTION_KINDS, DEFAULT_SIZES, format_report, run_bench,
                    token_reduction_ratio)
from .config import (ConfigError, RunConfig, load_config, parse_config,
                     to_model_config)
from .data import read_corpus, synth_corpus
from .gradcheck import format_module_table, gradcheck_variant
from .metrics import metrics_csv, metrics_text, report_from_masks
from .model import VARIANTS, build_model, load_weights, read_checkpoint, shape_trace
from .tensor import DimensionError, IntegrityError
from .train import evaluate_model, run_training


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "variant", None):
        cfg = replace(cfg, variant=args.variant)
    if getattr(args, "bridge", None):
        cfg = replace(cfg, bridge=args.bridge)
    to_model_config(cfg).validate()
    return cfg


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    out = Path(args.out) if args.out else Path("run_out")
    start = time.perf_counter()
    result = run_training(cfg, out, log_every=args.log_every)
    elapsed = time.perf_counter() - start
    report = result.report
    print(f"trained {cfg.variant} for {len(result.history)} steps "
          f"in {elapsed:.1f}s; final loss {result.final_loss:.5f}")
    print(f"mean dice (foreground): {report.mean_dice():.4f}")
    print(f"artifacts under {out}: checkpoint.tcck history.csv metrics.csv "
          f"metrics.txt config.txt corpus/")
    return 0


def cmd_eval(args) -> int:
    config_text, tensors = read_checkpoint(args.checkpoint)
    cfg = parse_config(config_text)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    model = build_model(to_model_config(cfg), seed=cfg.seed)
    load_weights(model, tensors)

    if args.corpus:
        samples = read_corpus(args.corpus)
    else:
        samples = synth_corpus(cfg.corpus_size, cfg.image_size, cfg.num_classes,
                               cfg.seed, channels=cfg.in_channels)

    if args.gt_as_pred:
        ids = [s.sample_id for s in samples]
        trues = [s.mask for s in samples]
        report = report_from_masks(ids, trues, trues, cfg.num_classes)
        se_sp = None
    else:
        report, se_sp = evaluate_model(model, samples, cfg.num_classes)

    csv_text = metrics_csv(report)
    summary = metrics_text(report, se_sp)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(csv_text)
        (out / "metrics.txt").write_text(summary)
        print(f"wrote {out / 'metrics.csv'} and {out / 'metrics.txt'}")
    print(summary, end="")
    return 0


def cmd_gradcheck(args) -> int:
    variants = VARIANTS if args.variant in (None, "all") else (args.variant,)
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant '{v}', expected one of {VARIANTS}")
    all_ok = True
    start = time.perf_counter()
    for v in variants:
        report = gradcheck_variant(v, seed=args.seed or 0, tol=args.tol, eps=args.eps)
        print(format_module_table(v, report))
        print()
        all_ok &= report.passed
    print(f"gradcheck total: {'PASS' if all_ok else 'FAIL'} "
          f"({time.perf_counter() - start:.1f}s)")
    return 0 if all_ok else 1


def cmd_bench(args) -> int:
    kinds = tuple(args.kinds.split(",")) if args.kinds else ATTENTION_KINDS
    for k in kinds:
        if k not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention kind '{k}', expected {ATTENTION_KINDS}")
    sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else DEFAULT_SIZES
    results = run_bench(kinds, sizes, dim=args.dim, seed=args.seed or 0)
    ratio = token_reduction_ratio(max(sizes), dim=args.dim) if "token" in kinds else None
    print(format_report(results, ratio))
    ok = all(r.ok for r in results) and (ratio is None or 0.45 <= ratio <= 0.55)
    return 0 if ok else 1


def cmd_shapes(args) -> int:
    cfg = _load_run_config(args)
    sizes = [int(s) for s in args.size.split(",")] if args.size else [cfg.image_size]
    model = build_model(to_model_config(cfg), seed=cfg.seed)
    for size in sizes:
        if size % 32:
            raise DimensionError(
                f"input size {size} not divisible by 32 (five spatial halvings)")
        trace = shape_trace(model, size)
        print(f"== shape trace: variant {cfg.variant}, C={cfg.base_dim}, "
              f"input {size}x{size} ==")
        for name, shape in trace:
            print(f"{name:<18} {'x'.join(str(d) for d in shape)}")
        print(f"parameters: {model.parameter_count():,}")
        print()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="incepformer",
        description="Hierarchical multi-branch segmentation transformer harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_model_flags=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--out", help="output directory")
        if with_model_flags:
            p.add_argument("--variant", choices=VARIANTS, help="override variant")
            p.add_argument("--bridge", help="override bridge arrangement")

    p = sub.add_parser("train", help="train on the synthetic corpus")
    common(p)
    p.add_argument("--log-every", type=int, default=0, help="print every k steps")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="path to .tcck file")
    p.add_argument("--corpus", help="directory of .tcsm samples (default: regenerate)")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--out", help="output directory for metrics files")
    p.add_argument("--gt-as-pred", action="store_true",
                   help="score ground truth against itself (metrics self-check)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--variant", default="all", help="one variant or 'all'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-6)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("bench", help="attention flop-scaling benchmark")
    p.add_argument("--kinds", help="comma list from factorized,token,channel")
    p.add_argument("--sizes", help="comma list of token counts (squares)")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("shapes", help="print the module-boundary shape trace")
    common(p)
    p.add_argument("--size", help="comma list of input extents (default: config)")
    p.set_defaults(fn=cmd_shapes)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DimensionError, IntegrityError, ValueError,
            FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
