"""Command-line front end.

    ttadapt run --manifest data/manifest.json --report out.json
    ttadapt synth --out data --samples 2000 --shift-angle 0.5
    ttadapt gradcheck --seed 0
    ttadapt sweep --manifest data/manifest.json --param gamma \\
        --values 0,0.2,0.4,0.6,0.8,1.0 --out sweep.csv
    ttadapt inspect --manifest data/manifest.json

Exit codes: 0 success, 1 usage error, 2 data or validation error. Standard
output carries only the machine-readable result; diagnostics go to standard
error. All flags are long-form and every default matches TtaConfig.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import adapter, featurestore, pipeline
from .config import TtaConfig
from .errors import TtaError

GRAD_CHECK_CLASSES = 5
GRAD_CHECK_DIM = 8
GRAD_CHECK_SUPPORT = 3
GRAD_CHECK_TOLERANCE = 1e-3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse normally exits with status 2 on bad flags; we reserve 2 for
    data errors, so parse failures surface as exceptions instead."""

    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _values_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated numbers, got '{text}'"
        ) from None


def _add_config_flags(parser: _Parser) -> None:
    defaults = TtaConfig()
    parser.add_argument(
        "--gamma", type=float, default=defaults.gamma,
        help=f"adapter fusion weight (default {defaults.gamma})",
    )
    parser.add_argument(
        "--lam", type=float, default=defaults.lambda_frac,
        help=f"fraction of the stream used for collection (default {defaults.lambda_frac})",
    )
    parser.add_argument(
        "--lr", type=float, default=defaults.lr,
        help=f"adapter learning rate (default {defaults.lr})",
    )
    parser.add_argument(
        "--epochs", type=int, default=defaults.epochs,
        help=f"adapter training epochs (default {defaults.epochs})",
    )
    parser.add_argument(
        "--batch", type=int, default=defaults.batch,
        help=f"adapter minibatch size (default {defaults.batch})",
    )
    parser.add_argument(
        "--neg-cache", choices=("on", "off"), default="on",
        help="negative cache term in the fused logits (default on)",
    )
    parser.add_argument(
        "--per-sample", choices=("on", "off"), default="off",
        help="refresh pooled text rows per phase-2 sample (default off)",
    )
    parser.add_argument(
        "--seed", type=int, default=defaults.seed,
        help=f"seed for every random draw (default {defaults.seed})",
    )


def _config_from(args) -> TtaConfig:
    return TtaConfig(
        lambda_frac=args.lam,
        gamma=args.gamma,
        lr=args.lr,
        epochs=args.epochs,
        batch=args.batch,
        use_neg_cache=args.neg_cache == "on",
        per_sample_adaptation=args.per_sample == "on",
        seed=args.seed,
    )


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return format(value, ".6f")
    return str(value)


def _cmd_run(args) -> int:
    report = pipeline.run_stream(args.manifest, _config_from(args))
    if args.report is not None:
        pipeline.write_report(report, args.report)
        print(args.report)
    else:
        print(
            " ".join(
                f"{key}={_fmt(value)}"
                for key, value in (
                    ("n_samples", report.n_samples),
                    ("overall_top1", report.overall_top1),
                    ("phase1_top1", report.phase1_top1),
                    ("phase2_top1", report.phase2_top1),
                    ("zero_shot_top1", report.zero_shot_top1),
                    ("support", report.support_set_size),
                    ("cache_total", report.cache_stats["total"]),
                )
            )
        )
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def _cmd_synth(args) -> int:
    shift = featurestore.ShiftSpec(
        kind="composite",
        angle_rad=args.shift_angle,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    manifest = featurestore.synth_generate(
        n_classes=args.classes,
        dim=args.dim,
        n_samples=args.samples,
        intra_class_sigma=args.sigma,
        shift=shift,
        seed=args.seed,
        out_dir=args.out,
    )
    print(manifest)
    return 0


def _cmd_gradcheck(args) -> int:
    err = adapter.grad_check(
        GRAD_CHECK_CLASSES, GRAD_CHECK_DIM, GRAD_CHECK_SUPPORT,
        seed=args.seed, eps=args.eps,
    )
    print(f"max_rel_err={err:.6e} tolerance={GRAD_CHECK_TOLERANCE:.6e}")
    if err >= GRAD_CHECK_TOLERANCE:
        print("gradient check failed", file=sys.stderr)
        return 2
    return 0


def _cmd_sweep(args) -> int:
    rows = pipeline.sweep(args.manifest, _config_from(args), args.param, args.values)
    if args.out is not None:
        pipeline.write_sweep_csv(rows, args.out)
        print(args.out)
    else:
        print(pipeline.CSV_HEADER)
        for value, report in rows:
            print(
                ",".join(
                    [
                        format(value, ".6f"),
                        "" if report.overall_top1 is None else format(report.overall_top1, ".6f"),
                        "" if report.phase1_top1 is None else format(report.phase1_top1, ".6f"),
                        "" if report.phase2_top1 is None else format(report.phase2_top1, ".6f"),
                        "" if report.zero_shot_top1 is None else format(report.zero_shot_top1, ".6f"),
                        format(report.wall_ms_total, ".6f"),
                    ]
                )
            )
    return 0


def _cmd_inspect(args) -> int:
    manifest = featurestore.load_manifest(args.manifest)
    labels = featurestore.load_label_file(manifest.labels, n_classes=manifest.n_classes)
    count, dim = featurestore.read_feature_header(manifest.image_features)
    labeled = int((labels >= 0).sum())
    print(
        f"dataset={manifest.dataset_name} classes={manifest.n_classes} "
        f"dim={dim} samples={count} labeled={labeled}"
    )
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ttadapt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="process a stream and report accuracies")
    run.add_argument("--manifest", required=True, help="dataset manifest JSON")
    run.add_argument("--report", default=None, help="write the full report JSON here")
    _add_config_flags(run)
    run.set_defaults(func=_cmd_run)

    synth = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    synth.add_argument("--classes", type=int, default=10, help="class count (default 10)")
    synth.add_argument("--dim", type=int, default=64, help="feature dimension (default 64)")
    synth.add_argument("--samples", type=int, default=2000, help="sample count (default 2000)")
    synth.add_argument(
        "--sigma", type=float, default=0.25,
        help="intra-class noise standard deviation (default 0.25)",
    )
    synth.add_argument(
        "--shift-angle", type=float, default=0.5,
        help="rotation shift angle in radians, 0 disables (default 0.5)",
    )
    synth.add_argument(
        "--noise", type=float, default=0.0,
        help="additive shift noise sigma, 0 disables (default 0.0)",
    )
    synth.add_argument("--seed", type=int, default=0, help="generation seed (default 0)")
    synth.add_argument("--out", required=True, help="output directory")
    synth.set_defaults(func=_cmd_synth)

    grad = sub.add_parser(
        "gradcheck",
        help="compare analytic adapter gradients against finite differences "
        "on a 5-class, dim-8, 3-sample instance",
    )
    grad.add_argument("--seed", type=int, default=0, help="instance seed (default 0)")
    grad.add_argument(
        "--eps", type=float, default=1e-3,
        help="finite-difference step (default 0.001)",
    )
    grad.set_defaults(func=_cmd_gradcheck)

    swp = sub.add_parser("sweep", help="rerun the stream over a range of one parameter")
    swp.add_argument("--manifest", required=True, help="dataset manifest JSON")
    swp.add_argument(
        "--param", required=True, choices=pipeline.SWEEP_PARAMS,
        help="config field to vary",
    )
    swp.add_argument(
        "--values", required=True, type=_values_list,
        help="comma-separated values, e.g. 0,0.2,0.4",
    )
    swp.add_argument("--out", default=None, help="write CSV here instead of stdout")
    _add_config_flags(swp)
    swp.set_defaults(func=_cmd_sweep)

    ins = sub.add_parser("inspect", help="validate a manifest and describe its files")
    ins.add_argument("--manifest", required=True, help="dataset manifest JSON")
    ins.set_defaults(func=_cmd_inspect)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (TtaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))
