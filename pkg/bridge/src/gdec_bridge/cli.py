"""Command line for the bridge: pick a backend, pick a listener, serve."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .server import BridgeConfig, serve


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gdec-bridge", description=__doc__)
    p.add_argument("--backend", choices=["sentinel", "scripted", "hf"], default="sentinel")
    p.add_argument("--model", default="", help="model identifier or path (hf backend)")
    p.add_argument("--device", default="cpu")
    p.add_argument(
        "--masking-mode",
        choices=["drop_image_tokens", "replace_with_null_embedding", "scripted"],
        default=None,
        help="how with_context=false evaluations mask the context",
    )
    p.add_argument("--listen", default="stdio", help="stdio or tcp:host:port")
    p.add_argument("--script", default="", help="replay script (scripted backend)")
    p.add_argument("--vocab-size", type=int, default=16, help="sentinel vocabulary size")
    p.add_argument("--seed", type=int, default=0, help="sentinel seed")
    p.add_argument("--record", default="", help="dump served frames to a replayable script")
    p.add_argument("--stats-out", default="", help="write backend stats JSON on session end")
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.DEBUG if os.environ.get("GDEC_BRIDGE_DEBUG") else logging.WARNING,
        stream=sys.stderr,
    )
    args = build_parser().parse_args(argv)
    masking = args.masking_mode
    if masking is None:
        masking = "scripted" if args.backend in ("sentinel", "scripted") else "drop_image_tokens"
    config = BridgeConfig(
        backend=args.backend,
        model=args.model,
        device=args.device,
        masking_mode=masking,
        listen=args.listen,
        script=args.script,
        vocab_size=args.vocab_size,
        seed=args.seed,
        record=args.record,
        stats_out=args.stats_out,
    )
    try:
        return serve(config)
    except (ValueError, OSError) as exc:
        print(f"gdec-bridge: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
