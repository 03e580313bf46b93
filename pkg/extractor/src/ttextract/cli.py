"""Command-line front end.

    ttextract extract --dataset data/pets --backbone ViT-B/16 --out feats/pets
    ttextract verify --manifest feats/pets/manifest.json

Exit codes: 0 success, 1 usage error, 2 data or runtime error (bad dataset
layout, unavailable encoder, invalid manifest). `verify` also exits 2 when
the manifest is flagged as misaligned, so scripts can gate on it.
"""

from __future__ import annotations

import argparse
import sys

from ttadapt.errors import TtaError

from .encoders import BACKBONE_DIMS
from .errors import ExtractorError
from .extract import DEFAULT_TEMPLATE, ExtractJob, extract, verify_alignment


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse normally exits with status 2 on bad flags; we reserve 2 for
    data errors, so parse failures surface as exceptions instead."""

    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _cmd_extract(args) -> int:
    job = ExtractJob(
        dataset_dir=args.dataset,
        backbone=args.backbone,
        out_dir=args.out,
        template=args.template,
    )
    manifest_path = extract(job)
    print(manifest_path)
    return 0


def _cmd_verify(args) -> int:
    report = verify_alignment(args.manifest)
    top1 = "none" if report.top1 is None else f"{report.top1:.6f}"
    print(
        f"dataset={report.dataset_name} images={report.n_images} "
        f"classes={report.n_classes} top1={top1} chance={report.chance:.6f} "
        f"flagged={'yes' if report.flagged else 'no'}"
    )
    if report.flagged:
        print(
            "error: nearest-prompt accuracy is within 5 points of chance; "
            "image and text features look misaligned",
            file=sys.stderr,
        )
        return 2
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ttextract", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ext = sub.add_parser(
        "extract",
        help="encode a class-folder image dataset into feature/label/manifest files",
    )
    ext.add_argument("--dataset", required=True, help="dataset root directory")
    ext.add_argument(
        "--backbone", required=True, choices=sorted(BACKBONE_DIMS),
        help="pretrained encoder to use",
    )
    ext.add_argument("--out", required=True, help="output directory")
    ext.add_argument(
        "--template", default=DEFAULT_TEMPLATE,
        help=f"class prompt template (default '{DEFAULT_TEMPLATE}')",
    )
    ext.set_defaults(func=_cmd_extract)

    ver = sub.add_parser(
        "verify",
        help="check that a manifest's image and text features belong together",
    )
    ver.add_argument("--manifest", required=True, help="dataset manifest JSON")
    ver.set_defaults(func=_cmd_verify)

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
    except (ExtractorError, TtaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(dispatch(sys.argv[1:]))
