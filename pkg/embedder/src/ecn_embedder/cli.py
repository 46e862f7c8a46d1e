"""CLI: run a pretrained multilingual encoder over a dataset, emit sidecars."""

from __future__ import annotations

import argparse
import logging
import sys

from .encoder import HFEncoder
from .export import ExportJob, export_embeddings, export_token_counts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecn-embed",
        description="Export entity text embeddings (mean-pooled last layer) "
                    "and token counts as sidecar files.",
    )
    parser.add_argument("--dataset", required=True,
                        help="XFUND json file/directory or FUNSD split directory")
    parser.add_argument("--format", choices=("auto", "xfund", "funsd"), default="auto")
    parser.add_argument("--model", default="xlm-roberta-base",
                        help="encoder name (e.g. xlm-roberta-base, "
                             "bert-base-multilingual-cased)")
    parser.add_argument("--out-embeddings", default=None, help="embedding sidecar path")
    parser.add_argument("--out-token-counts", default=None, help="token-count sidecar path")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--max-length", type=int, default=512)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.out_embeddings and not args.out_token_counts:
        print("nothing to do: pass --out-embeddings and/or --out-token-counts",
              file=sys.stderr)
        return 1
    job = ExportJob(args.dataset, args.format, args.out_embeddings, args.out_token_counts)
    try:
        encoder = HFEncoder(args.model, device=args.device,
                            batch_size=args.batch_size, max_length=args.max_length)
    except Exception as exc:
        print(f"cannot load encoder '{args.model}': {exc}", file=sys.stderr)
        return 2
    try:
        if args.out_embeddings:
            export_embeddings(job, encoder)
        if args.out_token_counts:
            export_token_counts(job, encoder)
    except (OSError, ValueError) as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 2
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
