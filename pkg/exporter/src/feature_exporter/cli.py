"""CLI: export image-directory features to an FTEN file plus manifest."""

from __future__ import annotations

import argparse
import logging
import sys

from .export import ExportConfig, export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feature-exporter",
        description="Export pretrained-CNN block features to FTEN.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="export a directory of images")
    p.add_argument("--images", required=True, help="directory of input images")
    p.add_argument("--backbone", default="efficientnet_b4")
    p.add_argument("--blocks", default="1,2,3,4",
                   help="comma-separated block numbers (default 1,2,3,4)")
    p.add_argument("--hw", type=int, default=16,
                   help="target feature resolution (h = w, default 16)")
    p.add_argument("--out", required=True, help="output FTEN file")
    p.add_argument("--random-init", action="store_true",
                   help="use an untrained backbone (offline smoke runs only; "
                        "by default missing pretrained weights are a hard error)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = ExportConfig(
            image_dir=args.images,
            out_path=args.out,
            backbone=args.backbone,
            blocks=tuple(int(b) for b in args.blocks.split(",")),
            hw=(args.hw, args.hw),
            pretrained=not args.random_init,
        )
        n_ok, n_skip = export_features(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {n_ok} images ({n_skip} skipped), "
          f"{cfg.channels} channels at {args.hw}x{args.hw} -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
