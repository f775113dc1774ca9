"""Command-line front end mirroring ExtractSpec."""

import argparse
import sys

from .errors import ExtractError
from .extract import ExtractSpec, extract_features, extract_textbank


def _add_common(parser):
    parser.add_argument("--class-name", required=True)
    parser.add_argument("--backbone", default="stub-vit-l16")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adextract",
        description="Dump frozen-backbone features and prompt embeddings "
                    "into .adft/.adtx files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="images (+masks) -> bundles + manifest")
    p.add_argument("--images", required=True, help="image dir; subdirs name splits")
    p.add_argument("--masks", default=None, help="mask dir matched by file stem")
    p.add_argument("--out", required=True)
    p.add_argument("--resize", type=int, default=512)
    p.add_argument("--layers", type=int, nargs="+", default=[6, 12, 18, 24])
    _add_common(p)

    p = sub.add_parser("textbank", help="prompt templates -> text bank")
    p.add_argument("--out", required=True, help="output .adtx path")
    p.add_argument("--normal-template", action="append", default=None,
                   help="repeatable; [state]/[class] are substituted")
    p.add_argument("--abnormal-template", action="append", default=None)
    p.add_argument("--normal-state", default="flawless")
    p.add_argument("--abnormal-state", default="damaged")
    _add_common(p)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "features":
            spec = ExtractSpec(
                image_dir=args.images, mask_dir=args.masks, out_dir=args.out,
                class_name=args.class_name, resize=args.resize,
                layers=tuple(args.layers), backbone=args.backbone,
            )
            extract_features(spec)
        else:
            spec = ExtractSpec(
                image_dir=".", out_dir=".", class_name=args.class_name,
                backbone=args.backbone,
                normal_state=args.normal_state,
                abnormal_state=args.abnormal_state,
            )
            if args.normal_template:
                spec.normal_templates = tuple(args.normal_template)
            if args.abnormal_template:
                spec.abnormal_templates = tuple(args.abnormal_template)
            extract_textbank(spec, out_path=args.out)
    except ExtractError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
