"""snapexport: convert a training checkpoint into a snapshot manifest+blob."""

import argparse
import json
import sys

from .checkpoint import CheckpointError
from .export import ExportError, export


def build_parser():
    p = argparse.ArgumentParser(prog="snapexport")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("export", help="convert a checkpoint")
    sp.add_argument("--checkpoint", required=True, help=".npz or torch-style zip file")
    sp.add_argument("--arch", required=True, choices=["vgg16", "tiny_vgg"])
    sp.add_argument("--out-manifest", required=True)
    sp.add_argument("--out-blob", required=True)
    sp.add_argument("--input-shape", default=None,
                    help="C,H,W override (defaults per architecture)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    shape = None
    if args.input_shape:
        try:
            shape = tuple(int(x) for x in args.input_shape.split(","))
            assert len(shape) == 3
        except (ValueError, AssertionError):
            print(f"error: bad --input-shape {args.input_shape!r}", file=sys.stderr)
            return 2
    try:
        summary = export(args.checkpoint, args.arch, args.out_manifest,
                         args.out_blob, input_shape=shape)
    except (ExportError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    json.dump(summary.to_json(), sys.stdout, indent=1)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
