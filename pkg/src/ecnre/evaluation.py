"""Relation-level metrics, recall correction, multi-seed aggregation, reports.

Pooling is micro throughout: counts are summed over documents (and languages,
when a single number is wanted) and precision/recall/F1 derive from the
pooled counts, never from averaging per-document scores.
"""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import DataError
from .model import EcnParams, GraphInstance, forward, predict

logger = logging.getLogger(__name__)

# Report column order; AVG1 averages the non-English block, AVG2 everything.
COLUMN_LANGUAGES = ("zh", "ja", "es", "fr", "it", "de", "pt")
ALL_LANGUAGES = COLUMN_LANGUAGES + ("en",)

MISSING_CELL = "–"


@dataclass(frozen=True)
class Metrics:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2.0 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "Metrics") -> "Metrics":
        return Metrics(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def relation_prf(pred: set, gold: set) -> Metrics:
    """Exact ordered-pair matching between predicted and gold relation sets."""
    pred = set(pred)
    gold = set(gold)
    tp = len(pred & gold)
    return Metrics(tp, len(pred) - tp, len(gold) - tp)


def corrected_recall(metrics: Metrics, full_gold_count: int) -> Metrics:
    """Re-base recall on the unsplit ground truth; precision is untouched.

    Quantifies what a token-limit split cost: the evaluated gold set may be a
    subset of the full one, so tp / full_gold_count is the honest recall.
    """
    if full_gold_count < metrics.tp + metrics.fn:
        raise DataError(
            f"full gold count {full_gold_count} is below the evaluated gold "
            f"count {metrics.tp + metrics.fn}"
        )
    return Metrics(metrics.tp, metrics.fp, full_gold_count - metrics.tp)


def evaluate(
    params: EcnParams,
    instances: Sequence[GraphInstance],
    threshold: float | None = None,
    jobs: int = 1,
) -> Metrics:
    """Forward + predict + count, micro-pooled over the given documents.

    Evaluation is read-only over the model, so documents may be scored on
    ``jobs`` threads; pooling sums integer counts and is order-independent.
    """
    if threshold is None:
        threshold = params.config.threshold

    def score_one(gi: GraphInstance) -> Metrics:
        _, scores = forward(gi, params)
        return relation_prf(predict(scores, threshold), set(gi.gold))

    if jobs > 1 and len(instances) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_doc = list(pool.map(score_one, instances))
    else:
        per_doc = [score_one(gi) for gi in instances]
    pooled = Metrics()
    for m in per_doc:
        pooled = pooled + m
    return pooled


def evaluate_by_language(
    params: EcnParams,
    instances: Sequence[GraphInstance],
    threshold: float | None = None,
    jobs: int = 1,
) -> dict[str, Metrics]:
    by_language: dict[str, list[GraphInstance]] = {}
    for gi in instances:
        by_language.setdefault(gi.language, []).append(gi)
    return {
        language: evaluate(params, group, threshold, jobs)
        for language, group in sorted(by_language.items())
    }


# ---------------------------------------------------------------------------
# Multi-run aggregation


@dataclass
class RunResult:
    seed: int
    per_language: dict[str, Metrics]


@dataclass
class EvalReport:
    runs: list[RunResult] = field(default_factory=list)

    def languages(self) -> list[str]:
        present = {lang for run in self.runs for lang in run.per_language}
        return [lang for lang in ALL_LANGUAGES if lang in present]

    def seed_f1(self, language: str) -> list[float]:
        return [
            run.per_language[language].f1
            for run in self.runs
            if language in run.per_language
        ]

    def mean_f1(self, language: str) -> float | None:
        values = self.seed_f1(language)
        return statistics.fmean(values) if values else None

    def std_f1(self, language: str) -> float | None:
        values = self.seed_f1(language)
        return statistics.pstdev(values) if values else None

    def _block_mean(self, languages: Sequence[str]) -> float | None:
        cells = [self.mean_f1(lang) for lang in languages]
        if any(cell is None for cell in cells):
            return None
        return statistics.fmean(cells)

    def avg1(self) -> float | None:
        return self._block_mean(COLUMN_LANGUAGES)

    def avg2(self) -> float | None:
        return self._block_mean(ALL_LANGUAGES)


def default_seeds(base: int, count: int = 5) -> list[int]:
    return list(range(base, base + count))


def multi_run(
    run: Callable[[int], Mapping[str, Metrics]], seeds: Sequence[int]
) -> EvalReport:
    """Run a train-and-evaluate closure per seed and collect the results."""
    if not seeds:
        raise ValueError("multi_run needs at least one seed")
    report = EvalReport()
    for seed in seeds:
        report.runs.append(RunResult(seed, dict(run(seed))))
    return report


# ---------------------------------------------------------------------------
# Rendering


def format_mean_std(mean: float, std: float, decimals: int = 1) -> str:
    """Render a percent-scale cell like ``72.7(1.4)``."""
    return f"{mean:.{decimals}f}({std:.{decimals}f})"


def _cell(report: EvalReport, language: str, style: str, decimals: int) -> str:
    mean = report.mean_f1(language)
    if mean is None:
        logger.warning("no result for language '%s'; rendering a dash", language)
        return MISSING_CELL
    if style == "mean_std":
        return format_mean_std(100.0 * mean, 100.0 * (report.std_f1(language) or 0.0))
    return f"{100.0 * mean:.{decimals}f}"


def render_report(
    report: EvalReport,
    fmt: str = "tsv",
    row_label: str = "ecn",
    style: str = "mean",
    decimals: int = 2,
) -> str:
    """One row per report with columns ZH JA ES FR IT DE PT AVG1 EN AVG2."""
    if fmt not in ("tsv", "markdown"):
        raise ValueError(f"unknown report format {fmt!r}")
    if style not in ("mean", "mean_std"):
        raise ValueError(f"unknown report style {style!r}")
    header = ["model"] + [lang.upper() for lang in COLUMN_LANGUAGES] + ["AVG1", "EN", "AVG2"]
    cells = [row_label]
    cells += [_cell(report, lang, style, decimals) for lang in COLUMN_LANGUAGES]
    avg1 = report.avg1()
    cells.append(MISSING_CELL if avg1 is None else f"{100.0 * avg1:.{decimals}f}")
    cells.append(_cell(report, "en", style, decimals))
    avg2 = report.avg2()
    cells.append(MISSING_CELL if avg2 is None else f"{100.0 * avg2:.{decimals}f}")
    if fmt == "tsv":
        return "\t".join(header) + "\n" + "\t".join(cells) + "\n"
    width = len(header)
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] * width) + "|",
        "| " + " | ".join(cells) + " |",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Per-run records


def write_run_record(path: str | Path, run: RunResult) -> None:
    payload = {
        "seed": run.seed,
        "per_language": {
            lang: {
                "tp": m.tp,
                "fp": m.fp,
                "fn": m.fn,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
            }
            for lang, m in sorted(run.per_language.items())
        },
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_run_record(path: str | Path) -> RunResult:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        per_language = {
            lang: Metrics(int(cell["tp"]), int(cell["fp"]), int(cell["fn"]))
            for lang, cell in payload["per_language"].items()
        }
        return RunResult(int(payload["seed"]), per_language)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{path}: invalid run record ({exc})") from exc
