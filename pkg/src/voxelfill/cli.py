"""Command line entry point.

    inpaint phantom|preprocess|train|infer|evaluate|montage --config <path>
            [--seed N] [--resume] ...

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure. The
INPAINT_DATA_DIR environment variable supplies the default dataset root.
"""

import argparse
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, DataError, NumericError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inpaint",
        description="Desk-scale 3D brain tumor inpainting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("phantom", help="generate the synthetic dataset")
    common(p)

    p = sub.add_parser("preprocess", help="produce model-family training artifacts")
    common(p)

    p = sub.add_parser("train", help="train the configured model")
    common(p)
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint")

    p = sub.add_parser("infer", help="inpaint one volume")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input scan (.nii/.nii.gz/.rawvol)")
    p.add_argument("--mask", required=True, help="binary tumor mask")
    p.add_argument("--out", required=True, help="output NIfTI path")

    p = sub.add_parser("evaluate", help="score predictions against references")
    common(p)
    p.add_argument("--pred", required=True, help="directory of predicted volumes")
    p.add_argument("--ref", required=True, help="dataset directory with manifest.json")
    p.add_argument("--out", required=True, help="report output directory")

    p = sub.add_parser("montage", help="slice comparison grid as PGM")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--slice", type=int, required=True, dest="slice_index")
    p.add_argument("--axis", type=int, default=2, choices=(0, 1, 2))
    p.add_argument("volumes", nargs="+")

    return parser


def run(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {"seed": args.seed} if args.seed is not None else None
    cfg = load_config(args.config, overrides)

    if args.command == "phantom":
        out = pipeline.cmd_phantom(cfg)
        print(f"dataset written to {out}")
    elif args.command == "preprocess":
        out = pipeline.cmd_preprocess(cfg)
        print(f"preprocessed artifacts written to {out}")
    elif args.command == "train":
        ckpt = pipeline.cmd_train(cfg, resume=args.resume)
        print(f"final checkpoint: {ckpt}")
    elif args.command == "infer":
        pipeline.cmd_infer(cfg, args.checkpoint, args.image, args.mask, args.out)
        print(f"inpainted volume written to {args.out}")
    elif args.command == "evaluate":
        out = pipeline.cmd_evaluate(cfg, args.pred, args.ref, args.out)
        print((out / "report.txt").read_text(), end="")
    elif args.command == "montage":
        pipeline.cmd_montage(args.volumes, args.slice_index, args.axis, args.out)
        print(f"montage written to {args.out}")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
