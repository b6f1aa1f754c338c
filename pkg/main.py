"""
Command-line entry point: byteplot, scale, train, gen-vnnlib, verify, bench, report.
"""

from typing import List, Optional
import argparse
import csv
import logging
import os
import sys

import numpy as np
from pydantic import ValidationError

from bench import (
    AGGREGATE_HEADER, BenchPlan, SampleSelection, aggregate, load_rows, run_benchmark, select_samples,
    write_report,
)
from utils.config import LOG_LEVELS, settings, setup_logging
from utils.datasets import load_dataset, save_feature_csv
from utils.errors import SpecError, VerificationError
from utils.network import load_model_file
from utils.preprocess import (
    apply_scaler, bytes_to_image, fit_scaler, image_to_csv_row, load_scaler, read_binary,
    resize_nearest, save_pgm, save_scaler,
)
from utils.specgen import (
    EPSILON_PRESETS, MASK_ALIASES, FeatureMask, MaskPreset, build_feature_spec, build_pixel_spec,
    load_schema, save_schema, schema_from_data,
)
from utils.trainer import ARCHITECTURES, TrainConfig, Trainer
from utils.verdict import save_verdict
from utils.vnnlib import batch_emit, read_vnnlib
from verifier import VerifierConfig, VerifyMethod, run_query

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def status(message: str) -> None:
    """Human-readable progress goes to stderr; stdout stays machine-readable"""
    print(message, file=sys.stderr)


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1"""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        status(f"❌ {message}")
        raise SystemExit(EXIT_USAGE)


def _add_verifier_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=settings.seed)
    parser.add_argument("--timeout", type=float, default=settings.timeout_s, help="seconds per query")
    parser.add_argument("--nr", type=int, default=settings.num_samples, help="falsifier sample count")
    parser.add_argument("--relax-factor", type=float, default=settings.relax_factor)
    parser.add_argument("--method", choices=[m.value for m in VerifyMethod], default=VerifyMethod.AUTO.value)
    parser.add_argument("--max-stars", type=int, default=settings.max_stars)


def _add_selection_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--samples", type=int, default=None, help="number of samples (default 100)")
    parser.add_argument("--per-class", type=int, default=None, help="samples per class")


def build_parser() -> CliParser:
    parser = CliParser(prog="malverify", description="Robustness verification for malware classifiers")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=settings.log_level)
    parser.add_argument("--quiet", action="store_true", help="no status lines or progress bars")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("byteplot", help="convert binaries to grayscale images")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--width", type=int, default=settings.image_width)
    p.add_argument("--resize", type=int, default=0, help="resize to N x N (nearest neighbour)")
    p.add_argument("--out", required=True, help=".pgm file for one input, otherwise a directory")
    p.add_argument("--csv", default=None, help="also append normalized pixel rows to this CSV")

    p = commands.add_parser("scale", help="standardize a feature CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scaler", default=None, help="apply existing scaler JSON instead of fitting")
    p.add_argument("--scaler-out", default=None)
    p.add_argument("--schema-out", default=None, help="write a schema with ranges of the scaled data")
    p.add_argument("--kinds", default=None, help="schema JSON whose feature kinds are copied")

    p = commands.add_parser("train", help="train a small classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=sorted(ARCHITECTURES), default=None)
    p.add_argument("--hidden", default=None, help="comma-separated hidden widths, e.g. 16,8")
    p.add_argument("--conv-filters", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--out", required=True)

    p = commands.add_parser("gen-vnnlib", help="write VNN-LIB robustness specs")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--mask", action="append", choices=list(MASK_ALIASES), default=None)
    p.add_argument("--eps", action="append", type=float, default=None)
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--model", default=None, help="take the class count from this model")
    p.add_argument("--seed", type=int, default=settings.seed)
    p.add_argument("--out", required=True)
    _add_selection_flags(p)

    p = commands.add_parser("verify", help="verify one query")
    p.add_argument("--model", required=True)
    p.add_argument("--vnnlib", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--index", type=int, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--schema", default=None)
    p.add_argument("--mask", choices=list(MASK_ALIASES), default="all")
    p.add_argument("--out", default=None, help="write the verdict JSON here")
    _add_verifier_flags(p)

    p = commands.add_parser("bench", help="run a benchmark sweep")
    p.add_argument("--model", action="append", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", default=None)
    p.add_argument("--mask", action="append", choices=list(MASK_ALIASES), default=None)
    p.add_argument("--eps", action="append", type=float, required=True)
    p.add_argument("--workers", type=int, default=settings.workers)
    p.add_argument("--train-data", default=None, help="dataset whose class counts go into per_class.csv")
    p.add_argument("--out", required=True)
    _add_selection_flags(p)
    _add_verifier_flags(p)

    p = commands.add_parser("report", help="recompute aggregates from a report CSV")
    p.add_argument("rows")
    p.add_argument("--out", default=None)
    return parser


def _verifier_config(args) -> VerifierConfig:
    return VerifierConfig(num_samples=args.nr, relax_factor=args.relax_factor, timeout_s=args.timeout,
                          seed=args.seed, method=args.method, max_stars=args.max_stars,
                          lp_max_iter=settings.lp_max_iter)


def _selection(args) -> SampleSelection:
    return SampleSelection(count=args.samples, per_class=args.per_class, seed=args.seed)


def cmd_byteplot(args) -> int:
    single = len(args.inputs) == 1 and args.out.lower().endswith(".pgm")
    if not single:
        os.makedirs(args.out, exist_ok=True)
    rows = []
    for path in args.inputs:
        img = bytes_to_image(read_binary(path), args.width)
        if args.resize:
            img = resize_nearest(img, args.resize, args.resize)
        target = args.out if single else os.path.join(args.out, os.path.basename(path) + ".pgm")
        save_pgm(img, target)
        rows.append(image_to_csv_row(img))
        if not args.quiet:
            status(f"✅ {path} -> {target} ({img.width}x{img.height})")
    if args.csv:
        with open(args.csv, "a", encoding="utf-8") as f:
            f.writelines(row + "\n" for row in rows)
    return EXIT_OK


def cmd_scale(args) -> int:
    dataset = load_dataset(args.data)
    params = load_scaler(args.scaler) if args.scaler else fit_scaler(dataset.X)
    scaled = apply_scaler(params, dataset.X)
    save_feature_csv(args.out, scaled, dataset.y, dataset.feature_names)
    if args.scaler_out:
        save_scaler(params, args.scaler_out)
    if args.schema_out:
        kinds = [f.kind for f in load_schema(args.kinds).features] if args.kinds else None
        save_schema(schema_from_data(scaled, dataset.feature_names, kinds), args.schema_out)
    if not args.quiet:
        status(f"✅ scaled {len(dataset)} rows -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    hidden = [int(w) for w in args.hidden.split(",") if w] if args.hidden else None
    overrides = {"hidden": hidden, "conv_filters": args.conv_filters, "epochs": args.epochs,
                 "batch_size": args.batch_size, "learning_rate": args.lr, "seed": args.seed}
    if args.arch:
        cfg = TrainConfig.from_preset(args.arch, **overrides)
    else:
        cfg = TrainConfig(**{key: value for key, value in overrides.items() if value is not None})
    trainer = Trainer(cfg)
    trainer.fit(dataset.X, dataset.y)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(trainer.model_text)
    if not args.quiet:
        status(f"✅ trained {args.out}: train accuracy {trainer.train_accuracy:.4f}, "
               f"final loss {trainer.history[-1]:.4f}")
    return EXIT_OK


def cmd_gen_vnnlib(args) -> int:
    dataset = load_dataset(args.data)
    samples = select_samples(dataset, _selection(args))
    if args.model:
        num_outputs = load_model_file(args.model).num_classes
    else:
        num_outputs = args.num_classes or int(dataset.y.max()) + 1
    masks = args.mask or ["all"]
    if dataset.pixel_mode:
        schema = None
        eps_list = args.eps or list(EPSILON_PRESETS[MaskPreset.PIXELS])
    else:
        schema = load_schema(args.schema) if args.schema else schema_from_data(dataset.X, dataset.feature_names)
        if args.eps:
            eps_list = args.eps
        elif len(masks) == 1:
            eps_list = list(EPSILON_PRESETS[FeatureMask.parse(masks[0]).preset])
        else:
            raise SpecError("--eps is required when several masks are given")
    rows = batch_emit([(s.x, s.label) for s in samples], eps_list, masks, schema, args.out,
                      num_outputs, dataset=dataset.name, sample_ids=[s.sample_id for s in samples])
    if not args.quiet:
        status(f"✅ wrote {len(rows)} VNN-LIB files to {args.out}")
    return EXIT_OK


def _query_from_data(args, net):
    if args.data is None or args.index is None or args.eps is None:
        raise SpecError("verify needs --vnnlib or all of --data, --index and --eps")
    dataset = load_dataset(args.data)
    if not 0 <= args.index < len(dataset):
        raise SpecError(f"index {args.index} outside dataset of {len(dataset)} samples")
    x, y = dataset.X[args.index], int(dataset.y[args.index])
    if dataset.pixel_mode:
        return build_pixel_spec(x, y, args.eps)
    schema = load_schema(args.schema) if args.schema else schema_from_data(dataset.X, dataset.feature_names)
    return build_feature_spec(x, y, args.eps, schema, FeatureMask.parse(args.mask))


def cmd_verify(args) -> int:
    net = load_model_file(args.model)
    if args.vnnlib:
        vnn = read_vnnlib(args.vnnlib)
        if vnn.num_outputs != net.num_classes or vnn.num_inputs != net.input_dim:
            raise SpecError(f"{args.vnnlib} declares {vnn.num_inputs} inputs / {vnn.num_outputs} outputs, "
                            f"model has {net.input_dim} / {net.num_classes}")
        spec = vnn.to_input_spec()
    else:
        vnn = None
        spec = _query_from_data(args, net)
    verdict = run_query(net, spec, _verifier_config(args))
    if vnn is not None and verdict.counterexample is not None:
        logits = net.forward(np.asarray(verdict.counterexample))
        if not vnn.is_violated_by(logits):
            logger.warning("counterexample does not satisfy the file's property")
    if args.out:
        save_verdict(verdict, args.out)
    print(verdict.word)
    if not args.quiet:
        status(f"{'✅' if verdict.robust else '⚠️'} stage {verdict.stage.value}, {verdict.time_s.total:.3f}s")
    return EXIT_OK


def cmd_bench(args) -> int:
    plan = BenchPlan(
        models=args.model,
        dataset=args.data,
        schema_path=args.schema,
        masks=args.mask or ["all"],
        epsilons=args.eps,
        selection=_selection(args),
        verifier=_verifier_config(args),
        workers=args.workers,
        train_dataset=args.train_data,
    )
    report = run_benchmark(plan, progress=not args.quiet)
    paths = write_report(report, args.out)
    if not args.quiet:
        for row in report.aggregates:
            status(f"📊 {row.model} {row.mask} eps={row.epsilon:g}: CRA {row.cra_pct:.1f}% "
                   f"avg {row.avg_time_s:.3f}s")
        status(f"✅ report written to {paths['report']}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = load_rows(args.rows)
    table = aggregate(rows)
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(AGGREGATE_HEADER)
        for row in table:
            writer.writerow([row.model, row.mask, repr(row.epsilon), repr(row.cra_pct), repr(row.avg_time_s)])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


COMMANDS = {
    "byteplot": cmd_byteplot,
    "scale": cmd_scale,
    "train": cmd_train,
    "gen-vnnlib": cmd_gen_vnnlib,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    setup_logging("ERROR" if args.quiet else args.log_level)
    try:
        return COMMANDS[args.command](args)
    except (VerificationError, OSError, ValidationError, ValueError) as e:
        message = str(e).splitlines()[0] if str(e) else type(e).__name__
        status(f"❌ {args.command} failed: {message}")
        logger.debug("%s failed", args.command, exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
