"""Command-line entry point: ingest, train, eval, split-report, rerun.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every subcommand accepts ``--manifest PATH`` to record the resolved
invocation; ``ecnre rerun PATH`` replays it, which reproduces outputs
byte-for-byte under the package's determinism contracts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import documents as docs
from . import evaluation as ev
from . import geometry, model, sidecars, training
from .errors import DataError, NumericError

logger = logging.getLogger(__name__)

ENV_DATA_ROOT = "ECNRE_DATA_ROOT"
MANIFEST_TAG = "ecnre-manifest v1"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise UsageError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--data-root",
        default=os.environ.get(ENV_DATA_ROOT, "."),
        help=f"dataset directory (default: ${ENV_DATA_ROOT} or '.')",
    )
    parser.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    parser.add_argument("--manifest", default=None, help="write the resolved run manifest here")
    parser.add_argument("--strict", action="store_true", help="reject repairable data defects")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def _hyper_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group(
        "hyperparameters",
        "defaults: monolingual node-dim 128 / stacked-convolutions 6, multilingual "
        "256 / 8; edge-dim 128, layers 6, learning-rate 5e-4, epochs 400, batch-size 1",
    )
    group.add_argument("--node-dim", type=int, default=None, help="node dimension (128 / 256)")
    group.add_argument("--edge-dim", type=int, default=None, help="edge dimension (128)")
    group.add_argument("--layers", type=int, default=None, help="convolution layers (6)")
    group.add_argument(
        "--stacked-convolutions", type=int, default=None, help="parallel convolutions (6 / 8)"
    )
    group.add_argument(
        "--decoder-hidden", type=int, default=None, help="decoder hidden width (node dim)"
    )
    group.add_argument("--nonlinearity", choices=("relu", "tanh"), default="relu")
    group.add_argument("--learning-rate", type=float, default=5e-4, help="Adam step size (5e-4)")
    group.add_argument("--epochs", type=int, default=400, help="training epochs (400)")
    group.add_argument("--batch-size", type=int, default=1, help="documents per step (fixed 1)")
    group.add_argument("--pos-weight", type=float, default=1.0, help="positive-pair loss weight")
    group.add_argument("--threshold", type=float, default=0.5, help="prediction threshold (0.5)")
    group.add_argument("--label-dim", type=int, default=16, help="label embedding width (16)")
    group.add_argument("--grad-clip", type=float, default=None, help="global-norm cap (off)")
    group.add_argument("--weight-decay", type=float, default=0.0, help="decoupled decay (0)")
    group.add_argument("--lr-decay", type=float, default=1.0, help="per-epoch lr multiplier (1)")


def _setting_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--setting", choices=("hqa", "ohqa"), default="hqa",
                        help="entity scope (default hqa)")
    parser.add_argument("--labels", choices=("on", "off"), default="on",
                        help="entity class visibility (default on)")
    parser.add_argument("--text", default="none",
                        help="'none' or 'sidecar=<path>' for text embeddings")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecnre", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse a dataset and print corpus counts")
    _add_common(p_ingest)
    p_ingest.add_argument("--languages", default="all", help="comma list or 'all'")
    p_ingest.add_argument("--split", choices=("train", "test", "both"), default="both")
    p_ingest.add_argument("--dump-graphs", default=None,
                          help="directory for per-document sight-graph TSV dumps")

    p_train = sub.add_parser("train", help="train a model and write a checkpoint")
    _add_common(p_train)
    scope = p_train.add_mutually_exclusive_group(required=True)
    scope.add_argument("--lang", choices=docs.LANGUAGES, help="monolingual training language")
    scope.add_argument("--multilingual", action="store_true", help="train on all 8 languages")
    _setting_flags(p_train)
    _hyper_flags(p_train)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--no-shuffle", action="store_true", help="keep corpus order per epoch")
    p_train.add_argument("--holdout", type=float, default=0.0,
                         help="fraction of train docs held out for validation (default 0: "
                              "train on everything, the published protocol)")
    p_train.add_argument("--out", required=True, help="checkpoint output path")
    p_train.add_argument("--log", default=None, help="per-epoch TSV training log")
    p_train.add_argument("--checkpoint-every", type=int, default=None, metavar="M",
                         help="also write a checkpoint every M epochs")

    p_eval = sub.add_parser("eval", help="evaluate checkpoints and render reports")
    _add_common(p_eval)
    p_eval.add_argument("--checkpoint", required=True,
                        help="checkpoint path; use a {seed} placeholder with --seeds")
    p_eval.add_argument("--seeds", default=None,
                        help="comma list of seeds for multi-run aggregation")
    p_eval.add_argument("--languages", default="all", help="comma list or 'all'")
    p_eval.add_argument("--split", choices=("train", "test"), default="test")
    _setting_flags(p_eval)
    p_eval.add_argument("--threshold", type=float, default=None,
                        help="override the checkpoint's prediction threshold")
    p_eval.add_argument("--split-tokens", default=None,
                        help="token-count sidecar: evaluate on token-limit-split documents")
    p_eval.add_argument("--token-limit", type=int, default=docs.TOKEN_LIMIT)
    p_eval.add_argument("--corrected-recall", action="store_true",
                        help="append a row with recall re-based on the full gold counts")
    p_eval.add_argument("--full-gold", default=None,
                        help="JSON manifest {language: full gold count}; default: counts "
                             "of the unsplit corpus")
    p_eval.add_argument("--format", choices=("tsv", "markdown"), default="tsv")
    p_eval.add_argument("--style", choices=("mean", "mean_std"), default=None,
                        help="cell style (default: mean, or mean_std with --seeds)")
    p_eval.add_argument("--out", default=None, help="report file (default stdout)")
    p_eval.add_argument("--records-dir", default=None, help="write per-seed JSON records here")

    p_split = sub.add_parser("split-report", help="token-limit split accounting per language")
    _add_common(p_split)
    p_split.add_argument("--languages", default="all", help="comma list or 'all'")
    p_split.add_argument("--split", choices=("train", "test"), default="train")
    p_split.add_argument("--token-counts", required=True, help="token-count sidecar path")
    p_split.add_argument("--limit", type=int, default=docs.TOKEN_LIMIT)
    p_split.add_argument("--format", choices=("tsv", "markdown"), default="tsv")
    p_split.add_argument("--out", default=None, help="report file (default stdout)")
    p_split.add_argument("--emit-gold-manifest", default=None,
                         help="write {language: full gold count} JSON here")

    p_rerun = sub.add_parser("rerun", help="replay a recorded manifest")
    p_rerun.add_argument("manifest", help="manifest file written by --manifest")
    return parser


# ---------------------------------------------------------------------------
# Helpers


def _languages(spec: str) -> list[str]:
    if spec == "all":
        return list(docs.LANGUAGES)
    langs = [item.strip().lower() for item in spec.split(",") if item.strip()]
    if not langs:
        raise UsageError("no languages given")
    for lang in langs:
        if lang not in docs.LANGUAGES:
            raise UsageError(f"unknown language '{lang}'")
    return langs


def _parse_text_flag(value: str):
    if value == "none":
        return None
    if value.startswith("sidecar="):
        path = value[len("sidecar="):]
        if not path:
            raise UsageError("--text sidecar= needs a path")
        return sidecars.load_embedding_sidecar(path)
    raise UsageError(f"--text must be 'none' or 'sidecar=<path>', got {value!r}")


def _setting(args, language_scope: str) -> docs.TaskSetting:
    return docs.TaskSetting(
        use_labels=args.labels == "on",
        entity_scope=docs.EntityScope(args.setting),
        training_scope=language_scope,
    )


def _write_manifest(args, argv: list[str]) -> None:
    if getattr(args, "manifest", None):
        payload = {"format": MANIFEST_TAG, "command": args.command, "argv": argv}
        Path(args.manifest).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_corpora(args, languages, split) -> list[docs.Corpus]:
    def load(lang):
        return docs.gold_filter_corpus(
            docs.load_corpus(args.data_root, lang, split, strict=args.strict)
        )

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            return list(pool.map(load, languages))
    return [load(lang) for lang in languages]


def _table(rows: list[list[str]], fmt: str) -> str:
    if fmt == "markdown":
        header, body = rows[0], rows[1:]
        lines = ["| " + " | ".join(header) + " |",
                 "|" + "|".join(["---"] * len(header)) + "|"]
        lines += ["| " + " | ".join(row) + " |" for row in body]
        return "\n".join(lines) + "\n"
    return "\n".join("\t".join(row) for row in rows) + "\n"


# ---------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args, argv) -> int:
    rows = [["language", "split", "documents", "entities", "raw_links", "gold_relations"]]
    splits = ("train", "test") if args.split == "both" else (args.split,)
    for lang in _languages(args.languages):
        for split in splits:
            try:
                corpus = docs.load_corpus(args.data_root, lang, split, strict=args.strict)
            except DataError as exc:
                if isinstance(exc, docs.ParseError):
                    raise
                logger.warning("%s", exc)
                rows.append([lang, split, "0", "0", "0", "0"])
                continue
            summary = docs.corpus_summary(corpus)
            rows.append([lang, split, str(summary["documents"]), str(summary["entities"]),
                         str(summary["raw_links"]), str(summary["gold_relations"])])
            if args.dump_graphs:
                _dump_graphs(corpus, Path(args.dump_graphs))
    sys.stdout.write(_table(rows, "tsv"))
    _write_manifest(args, argv)
    return EXIT_OK


def _dump_graphs(corpus: docs.Corpus, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for doc in corpus.documents:
        boxes = [
            geometry.normalize_bbox(e.bbox, doc.page_width, doc.page_height)
            for e in doc.entities
        ]
        adjacency = geometry.line_of_sight_graph(boxes)
        stem = doc.doc_id.replace(os.sep, "_")
        geometry.write_graph_dump(
            directory / f"{stem}.edges.tsv", directory / f"{stem}.features.tsv",
            doc.doc_id, boxes, adjacency,
        )


def _resolve_model_config(args) -> model.EcnConfig:
    base = model.EcnConfig.multilingual() if getattr(args, "multilingual", False) \
        else model.EcnConfig.monolingual()
    return model.EcnConfig(
        node_dim=args.node_dim if args.node_dim is not None else base.node_dim,
        edge_dim=args.edge_dim if args.edge_dim is not None else base.edge_dim,
        layers=args.layers if args.layers is not None else base.layers,
        stacked_convolutions=(
            args.stacked_convolutions
            if args.stacked_convolutions is not None
            else base.stacked_convolutions
        ),
        decoder_hidden=args.decoder_hidden,
        nonlinearity=args.nonlinearity,
        threshold=args.threshold,
    )


def cmd_train(args, argv) -> int:
    if args.batch_size != 1:
        raise UsageError("--batch-size is fixed at 1 document")
    table = _parse_text_flag(args.text)
    languages = list(docs.LANGUAGES) if args.multilingual else [args.lang]
    scope = "multilingual" if args.multilingual else args.lang
    setting = _setting(args, scope)
    corpora = _load_corpora(args, languages, "train")
    instances = [inst for corpus in corpora for inst in docs.apply_setting(corpus, setting)]
    if args.holdout:
        if not (0.0 <= args.holdout < 1.0):
            raise UsageError("--holdout must lie in [0, 1)")
        rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0xDE1)))
        order = rng.permutation(len(instances))
        n_dev = int(round(args.holdout * len(instances)))
        dev_idx = set(order[:n_dev].tolist())
        dev = [instances[i] for i in sorted(dev_idx)]
        instances = [inst for i, inst in enumerate(instances) if i not in dev_idx]
    else:
        dev = []

    config = _resolve_model_config(args)
    layout = sidecars.derive_layout(setting, table.dim if table else 0, args.label_dim)
    graphs = [model.prepare_graph_instance(inst, layout, table) for inst in instances]
    train_config = training.TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        pos_weight=args.pos_weight,
        seed=args.seed,
        shuffle=not args.no_shuffle,
        grad_clip=args.grad_clip,
        weight_decay=args.weight_decay,
        lr_decay=args.lr_decay,
    )

    out = Path(args.out)
    callback = None
    if args.checkpoint_every:
        def callback(epoch, params, record, _every=args.checkpoint_every):
            if (epoch + 1) % _every == 0:
                model.save_checkpoint(out.with_suffix(f".epoch{epoch + 1}{out.suffix}"), params)

    params, record = training.train(graphs, layout, config, train_config,
                                    epoch_callback=callback)
    model.save_checkpoint(out, params)
    if args.log:
        training.write_train_log(args.log, record)
    if record.epoch_loss:
        print(f"final mean loss {record.epoch_loss[-1]:.6f} over {args.epochs} epochs")
    print(f"checkpoint written to {out}")
    if dev:
        dev_graphs = [model.prepare_graph_instance(inst, layout, table) for inst in dev]
        metrics = ev.evaluate(params, dev_graphs)
        print(f"holdout ({len(dev)} docs): P {metrics.precision:.4f} "
              f"R {metrics.recall:.4f} F1 {metrics.f1:.4f}")
    _write_manifest(args, argv)
    return EXIT_OK


def _full_gold_counts(args, corpora) -> dict[str, int]:
    if args.full_gold:
        try:
            payload = json.loads(Path(args.full_gold).read_text(encoding="utf-8"))
            return {str(k): int(v) for k, v in payload.items()}
        except (OSError, ValueError) as exc:
            raise DataError(f"{args.full_gold}: invalid gold manifest ({exc})") from exc
    return {
        corpus.language: sum(len(d.relations) for d in corpus.documents)
        for corpus in corpora
    }


def cmd_eval(args, argv) -> int:
    table = _parse_text_flag(args.text)
    languages = _languages(args.languages)
    setting = _setting(args, "multilingual" if len(languages) > 1 else languages[0])
    corpora = _load_corpora(args, languages, args.split)
    full_gold = _full_gold_counts(args, corpora) if args.corrected_recall else {}

    if args.split_tokens:
        counts = sidecars.load_token_count_sidecar(args.split_tokens)
        corpora = [
            docs.Corpus(
                c.language,
                c.split,
                [
                    sub
                    for doc in c.documents
                    for sub in docs.split_by_token_limit(
                        doc, sidecars.token_counts_for_document(counts, doc.doc_id),
                        args.token_limit,
                    ).sub_documents
                ],
            )
            for c in corpora
        ]

    instances = [inst for corpus in corpora for inst in docs.apply_setting(corpus, setting)]

    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        if "{seed}" not in args.checkpoint and len(seeds) > 1:
            raise UsageError("--seeds with multiple values needs a {seed} placeholder "
                             "in --checkpoint")
        checkpoint_paths = {s: args.checkpoint.replace("{seed}", str(s)) for s in seeds}
    else:
        first = model.load_checkpoint(args.checkpoint)
        seeds = [first.seed]
        checkpoint_paths = {first.seed: args.checkpoint}

    reference = model.load_checkpoint(checkpoint_paths[seeds[0]])
    flag_layout = sidecars.derive_layout(
        setting, table.dim if table else 0, reference.layout.label_dim or 16
    )
    if flag_layout != reference.layout:
        raise DataError(
            f"checkpoint layout {reference.layout} does not match the evaluation flags "
            f"(expected {flag_layout})"
        )
    graphs = [model.prepare_graph_instance(inst, reference.layout, table) for inst in instances]

    def run_one(seed: int, jobs: int = 1) -> ev.RunResult:
        params = model.load_checkpoint(checkpoint_paths[seed])
        if params.layout != reference.layout:
            raise DataError(f"checkpoint for seed {seed} has a different feature layout")
        per_language = ev.evaluate_by_language(params, graphs, args.threshold, jobs)
        return ev.RunResult(seed, per_language)

    if args.jobs > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            runs = list(pool.map(run_one, seeds))
    else:
        runs = [run_one(seed, jobs=args.jobs) for seed in seeds]
    report = ev.EvalReport(runs)

    if args.records_dir:
        records = Path(args.records_dir)
        records.mkdir(parents=True, exist_ok=True)
        for run in report.runs:
            ev.write_run_record(records / f"run-seed{run.seed}.json", run)

    style = args.style or ("mean_std" if len(seeds) > 1 else "mean")
    text = ev.render_report(report, args.format, row_label="ecn", style=style)
    if args.corrected_recall:
        corrected_runs = []
        for run in report.runs:
            corrected = {
                lang: ev.corrected_recall(m, full_gold.get(lang, m.tp + m.fn))
                for lang, m in run.per_language.items()
            }
            corrected_runs.append(ev.RunResult(run.seed, corrected))
        corrected_report = ev.EvalReport(corrected_runs)
        corrected_text = ev.render_report(
            corrected_report, args.format, row_label="ecn (corrected recall)", style=style
        )
        if args.format == "tsv":
            text += corrected_text.split("\n", 1)[1]
        else:
            text += corrected_text.split("\n", 2)[2]
    _emit(text, args.out)
    _write_manifest(args, argv)
    return EXIT_OK


def cmd_split_report(args, argv) -> int:
    counts = sidecars.load_token_count_sidecar(args.token_counts)
    corpora = _load_corpora(args, _languages(args.languages), args.split)
    rows = [["language", "documents", "added_documents", "relations_full",
             "relations_split", "lost", "lost_fraction", "oversized_entities"]]
    totals = {"documents": 0, "added": 0, "full": 0, "split": 0, "lost": 0, "oversized": 0}
    gold_manifest = {}
    for corpus in corpora:
        added = lost = relations_full = relations_split = oversized = 0
        for doc in corpus.documents:
            per_doc = sidecars.token_counts_for_document(counts, doc.doc_id)
            result = docs.split_by_token_limit(doc, per_doc, args.limit)
            added += len(result.sub_documents) - 1
            lost += result.lost_relations
            relations_full += len(doc.relations)
            relations_split += len(doc.relations) - result.lost_relations
            oversized += len(result.oversized_entities)
        fraction = lost / relations_full if relations_full else 0.0
        rows.append([corpus.language, str(len(corpus.documents)), str(added),
                     str(relations_full), str(relations_split), str(lost),
                     f"{fraction:.4f}", str(oversized)])
        gold_manifest[corpus.language] = relations_full
        totals["documents"] += len(corpus.documents)
        totals["added"] += added
        totals["full"] += relations_full
        totals["split"] += relations_split
        totals["lost"] += lost
        totals["oversized"] += oversized
    overall = totals["lost"] / totals["full"] if totals["full"] else 0.0
    rows.append(["total", str(totals["documents"]), str(totals["added"]),
                 str(totals["full"]), str(totals["split"]), str(totals["lost"]),
                 f"{overall:.4f}", str(totals["oversized"])])
    _emit(_table(rows, args.format), args.out)
    if args.emit_gold_manifest:
        Path(args.emit_gold_manifest).write_text(
            json.dumps(gold_manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    _write_manifest(args, argv)
    return EXIT_OK


def cmd_rerun(args) -> int:
    try:
        payload = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"{args.manifest}: cannot read manifest ({exc})") from exc
    if payload.get("format") != MANIFEST_TAG:
        raise DataError(f"{args.manifest}: not an ecnre manifest")
    argv = payload.get("argv")
    if not isinstance(argv, list) or not all(isinstance(a, str) for a in argv):
        raise DataError(f"{args.manifest}: manifest argv is malformed")
    return main(argv)


# ---------------------------------------------------------------------------
# Entry


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "ingest":
            return cmd_ingest(args, argv)
        if args.command == "train":
            return cmd_train(args, argv)
        if args.command == "eval":
            return cmd_eval(args, argv)
        if args.command == "split-report":
            return cmd_split_report(args, argv)
        if args.command == "rerun":
            return cmd_rerun(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
