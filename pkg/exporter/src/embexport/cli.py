"""embexport command line. Exit codes: 0 success, 2 input/config error."""

import argparse
import sys

from .errors import ExportError
from .export import ExportJob, export_layers, export_prototypes


def _int_list(s):
    return [int(v) for v in s.split(",")]


def cmd_layers(args):
    job = ExportJob(encoder=args.encoder, modality=args.modality,
                    layers=args.layers, source=args.source, out=args.out,
                    pool=args.pool, batch_size=args.batch_size,
                    device=args.device)
    path = export_layers(job)
    print(f"wrote {path}")
    return 0


def cmd_prototypes(args):
    with open(args.classes, "r", encoding="utf-8") as fh:
        classes = [ln.strip() for ln in fh if ln.strip()]
    with open(args.templates, "r", encoding="utf-8") as fh:
        templates = [ln.rstrip("\n") for ln in fh if ln.strip()]
    path = export_prototypes(args.encoder, classes, templates, args.layer,
                             args.out, pool=args.pool)
    print(f"wrote {path}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="embexport",
                                description="dump per-layer embeddings to EMB1")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("layers", help="export pooled per-layer embeddings")
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--modality", required=True, choices=["text", "image", "audio"])
    sp.add_argument("--layers", required=True, type=_int_list)
    sp.add_argument("--source", required=True,
                    help="caption file (text) or input directory (image/audio)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--pool", default="mean", choices=["mean", "last-token"])
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--device", default="cpu")
    sp.set_defaults(fn=cmd_layers)

    sp = sub.add_parser("prototypes", help="export class-prompt prototypes")
    sp.add_argument("--encoder", required=True)
    sp.add_argument("--classes", required=True, help="one class name per line")
    sp.add_argument("--templates", required=True,
                    help="one template per line, {} marks the class slot")
    sp.add_argument("--layer", required=True, type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pool", default="mean", choices=["mean", "last-token"])
    sp.set_defaults(fn=cmd_prototypes)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ExportError, FileNotFoundError, NotADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
