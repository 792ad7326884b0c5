"""``neo-oracle-adapter``: serve a classifier over neo-oracle/1 on stdio."""

from __future__ import annotations

import argparse
import sys

from .adapter import AdapterConfig, serve


def _parse_dims(text: str) -> tuple:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neo-oracle-adapter",
        description="Expose an image classifier over the neo-oracle/1 "
                    "line protocol on standard streams",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", help="saved sim-model directory "
                                        "(sim_model.npz + simlab.json)")
    source.add_argument("--predictor",
                        help="'module:callable' predict entry point "
                             "taking a (H, W, C) uint8 array")
    parser.add_argument("--classes", type=int, required=True,
                        help="number of classes the model distinguishes")
    parser.add_argument("--expect-dims", type=_parse_dims, default=None,
                        metavar="WxH",
                        help="require inputs of exactly this size "
                             "(mismatches draw per-request errors)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = AdapterConfig(
            num_classes=args.classes,
            predictor=args.predictor,
            model_path=args.model,
            expect_dims=args.expect_dims,
        )
        return serve(config)
    except (ValueError, ImportError, AttributeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
