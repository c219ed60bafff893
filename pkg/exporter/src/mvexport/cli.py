"""Command line for the embedding exporter."""
from __future__ import annotations

import argparse
import sys

from .export import ExportError, ExportJob, export


def build_parser():
    ap = argparse.ArgumentParser(
        prog="mvexport",
        description="Encode object_id/view_*.png trees into an embedding "
                    "dataset directory")
    ap.add_argument("--images", required=True, help="root of per-object view dirs")
    ap.add_argument("--labels", required=True,
                    help="CSV: object_id,label[,split]")
    ap.add_argument("--vision-model", required=True,
                    help="backbone id or path for view embeddings")
    ap.add_argument("--text-model", default="",
                    help="aligned image-text model id or path (optional)")
    ap.add_argument("--prompt", default="a photo of {label}")
    ap.add_argument("--out", required=True)
    ap.add_argument("--batch-size", type=int, default=16)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    job = ExportJob(
        images_root=args.images,
        labels_file=args.labels,
        vision_model=args.vision_model,
        text_model=args.text_model,
        prompt=args.prompt,
        out_dir=args.out,
        batch_size=args.batch_size,
    )
    try:
        out = export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote dataset to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
