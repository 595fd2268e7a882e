"""Command-line entry point.

biasforge <command> --config <path> [--seed N] [--out DIR]
                    [--checkpoint PATH] [--override-hash]

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import load_pipeline_config
from .errors import BiasForgeError, DataError, NumericError, UsageError
from .version import TOOL_VERSION

COMMANDS = {
    "analyze": pipeline.cmd_analyze,
    "train-skin": pipeline.cmd_train_skin,
    "train-ergan": pipeline.cmd_train_ergan,
    "train-enhance": pipeline.cmd_train_enhance,
    "generate": pipeline.cmd_generate,
    "enhance": pipeline.cmd_enhance,
    "evaluate": pipeline.cmd_evaluate,
    "assemble": pipeline.cmd_assemble,
}

_HELP = {
    "analyze": "report attribute frequencies, skin-tone histogram, and flagged biases",
    "train-skin": "train the skin-tone WGAN-GP model",
    "train-ergan": "train the eyeglasses-removal GAN",
    "train-enhance": "train the enhancement generator and its two critics",
    "generate": "run a trained skin or eyeglasses model over a directory of images",
    "enhance": "run the trained enhancement model over a directory of frames",
    "evaluate": "compute PSNR/SSIM report from a pairs manifest",
    "assemble": "build a balanced manifest from originals plus tagged synthetics",
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="biasforge",
                     description="Dataset bias analysis, compensating synthesis, "
                                 "enhancement, and evaluation.")
    parser.add_argument("--version", action="version", version=f"biasforge {TOOL_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        p.add_argument("--config", required=True, help="path to a key = value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--checkpoint", default=None,
                       help="checkpoint to load (inference) or resume from (training)")
        p.add_argument("--override-hash", action="store_true",
                       help="proceed when the checkpoint's config hash differs")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_pipeline_config(args.config)
        ctx = pipeline.make_context(cfg, seed=args.seed, out=args.out,
                                    checkpoint=args.checkpoint,
                                    override_hash=args.override_hash)
        return args.func(ctx)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except BiasForgeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
