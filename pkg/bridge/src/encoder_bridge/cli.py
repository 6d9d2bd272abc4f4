"""Command line front end for the embedding bridge."""
from __future__ import annotations

import argparse
import sys

from .service import BridgeConfig, BridgeError, Pooling, serve_embeddings


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="encoder-bridge",
        description="Serve pooled acoustic-encoder features over HTTP.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("serve", help="load a checkpoint and serve /embed")
    p.add_argument("--checkpoint", required=True, help="TorchScript encoder file")
    p.add_argument("--device", default="cpu")
    p.add_argument("--pooling", default="mean",
                   choices=[p.value for p in Pooling])
    p.add_argument("--port", type=int, default=8601)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("make-test-checkpoint",
                       help="write a small deterministic encoder for smoke runs")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=_cmd_make_test_checkpoint)
    return parser


def _cmd_serve(args: argparse.Namespace) -> int:
    cfg = BridgeConfig(checkpoint=args.checkpoint, device=args.device,
                       pooling=args.pooling, port=args.port)
    serve_embeddings(cfg, host=args.host)
    return 0


def _cmd_make_test_checkpoint(args: argparse.Namespace) -> int:
    from .testing import save_toy_checkpoint

    path = save_toy_checkpoint(args.out, dim=args.dim, seed=args.seed)
    print(f"wrote {path} (dim={args.dim})")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
