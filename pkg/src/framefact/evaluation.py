"""Metrics and highlight evaluation.

Per-class precision/recall/F1 and balanced accuracy with explicit zero-support
conventions, macro averages over the four error types, per-system-category
breakdowns, recall@k over gold evidence frames, and the CLS-attention
highlight extractor used as the comparison baseline.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from torch import Tensor

from .attention import HighlightResult, top_k_highlights
from .core import ErrorType, FrameSource, LabelVector, Sample, SemanticFrame, SystemCategory
from .model import FactErrorModel, PreparedSample
from .srl import AlignedFrame, SrlBackend, extract_frames, tokenize

logger = logging.getLogger(__name__)


# --- classification metrics -------------------------------------------------

def _confusion(
    predictions: Sequence[LabelVector], golds: Sequence[LabelVector], error_type: ErrorType
) -> tuple[int, int, int, int]:
    """(tp, fp, tn, fn) for one class."""
    tp = fp = tn = fn = 0
    for predicted, gold in zip(predictions, golds):
        p, g = predicted[error_type], gold[error_type]
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def _check_aligned(predictions: Sequence[LabelVector], golds: Sequence[LabelVector]) -> None:
    if len(predictions) == 0:
        raise ValueError("cannot compute metrics on empty input")
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} golds")


def balanced_accuracy(
    predictions: Sequence[LabelVector], golds: Sequence[LabelVector], error_type: ErrorType
) -> float:
    """(TPR + TNR) / 2; a rate with zero support counts as 0 and is logged."""
    _check_aligned(predictions, golds)
    tp, fp, tn, fn = _confusion(predictions, golds, error_type)
    if tp + fn == 0:
        logger.warning("class %s has no positive golds; TPR treated as 0", error_type.name)
        tpr = 0.0
    else:
        tpr = tp / (tp + fn)
    if tn + fp == 0:
        logger.warning("class %s has no negative golds; TNR treated as 0", error_type.name)
        tnr = 0.0
    else:
        tnr = tn / (tn + fp)
    return (tpr + tnr) / 2.0


def class_precision_recall_f1(
    predictions: Sequence[LabelVector], golds: Sequence[LabelVector], error_type: ErrorType
) -> tuple[float, float, float]:
    _check_aligned(predictions, golds)
    tp, fp, _, fn = _confusion(predictions, golds, error_type)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def macro_f1(predictions: Sequence[LabelVector], golds: Sequence[LabelVector]) -> float:
    """Unweighted mean of the four per-class F1 scores."""
    _check_aligned(predictions, golds)
    return sum(
        class_precision_recall_f1(predictions, golds, t)[2] for t in ErrorType
    ) / len(ErrorType)


def macro_bacc(predictions: Sequence[LabelVector], golds: Sequence[LabelVector]) -> float:
    """Unweighted mean of the four per-class balanced accuracies."""
    _check_aligned(predictions, golds)
    return sum(balanced_accuracy(predictions, golds, t) for t in ErrorType) / len(ErrorType)


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    bacc: float

    def __post_init__(self) -> None:
        for name in ("precision", "recall", "f1", "bacc"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")


@dataclass(frozen=True)
class MetricGroup:
    """Metrics over one sample population (a system category, or all samples)."""

    per_class: dict[str, ClassMetrics]
    macro_f1: float
    macro_bacc: float
    support: int


ALL_CATEGORY = "All"

_CATEGORY_ORDER = [c.value for c in SystemCategory] + [ALL_CATEGORY]


@dataclass
class MetricReport:
    """Per-category metric groups (always including "All") plus run metadata."""

    categories: dict[str, MetricGroup]
    metadata: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def overall(self) -> MetricGroup:
        return self.categories[ALL_CATEGORY]

    def to_dict(self) -> dict:
        return {
            "categories": {
                name: {
                    "per_class": {
                        cls: vars(metrics) for cls, metrics in group.per_class.items()
                    },
                    "macro_f1": group.macro_f1,
                    "macro_bacc": group.macro_bacc,
                    "support": group.support,
                }
                for name, group in self.categories.items()
            },
            "metadata": self.metadata,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Aligned text table: one row per category, F1/BACC in percent."""
        names = sorted(self.categories, key=_category_sort_key)
        rows = [f"{'category':<10} {'F1':>7} {'BACC':>7} {'n':>6}"]
        for name in names:
            group = self.categories[name]
            rows.append(
                f"{name:<10} {group.macro_f1 * 100:>7.2f} {group.macro_bacc * 100:>7.2f} "
                f"{group.support:>6d}"
            )
        return "\n".join(rows)


def _category_sort_key(name: str) -> int:
    return _CATEGORY_ORDER.index(name) if name in _CATEGORY_ORDER else len(_CATEGORY_ORDER)


def _metric_group(predictions: Sequence[LabelVector], golds: Sequence[LabelVector]) -> MetricGroup:
    per_class = {}
    for error_type in ErrorType:
        precision, recall, f1 = class_precision_recall_f1(predictions, golds, error_type)
        bacc = balanced_accuracy(predictions, golds, error_type)
        per_class[error_type.json_key] = ClassMetrics(precision, recall, f1, bacc)
    return MetricGroup(
        per_class=per_class,
        macro_f1=macro_f1(predictions, golds),
        macro_bacc=macro_bacc(predictions, golds),
        support=len(predictions),
    )


def report_from_predictions(
    predictions: Sequence[LabelVector],
    samples: Sequence[Sample],
    metadata: dict | None = None,
) -> MetricReport:
    """Build the full per-category report for one prediction run."""
    if len(predictions) != len(samples):
        raise ValueError(f"{len(predictions)} predictions for {len(samples)} samples")
    golds = [sample.labels for sample in samples]
    categories = {ALL_CATEGORY: _metric_group(predictions, golds)}
    notes = []
    for category in SystemCategory:
        mask = [i for i, s in enumerate(samples) if s.system_category is category]
        if not mask:
            notes.append(f"category {category.value} has no samples; omitted")
            continue
        categories[category.value] = _metric_group(
            [predictions[i] for i in mask], [golds[i] for i in mask]
        )
    return MetricReport(categories=categories, metadata=metadata or {}, notes=notes)


def average_reports(reports: Sequence[MetricReport]) -> MetricReport:
    """Elementwise mean of several runs' reports (e.g. one per seed)."""
    if not reports:
        raise ValueError("nothing to average")
    keys = set(reports[0].categories)
    for report in reports[1:]:
        if set(report.categories) != keys:
            raise ValueError("reports cover different categories; cannot average")
    averaged = {}
    for name in keys:
        groups = [report.categories[name] for report in reports]
        per_class = {
            cls: ClassMetrics(
                precision=_mean([g.per_class[cls].precision for g in groups]),
                recall=_mean([g.per_class[cls].recall for g in groups]),
                f1=_mean([g.per_class[cls].f1 for g in groups]),
                bacc=_mean([g.per_class[cls].bacc for g in groups]),
            )
            for cls in groups[0].per_class
        }
        averaged[name] = MetricGroup(
            per_class=per_class,
            macro_f1=_mean([g.macro_f1 for g in groups]),
            macro_bacc=_mean([g.macro_bacc for g in groups]),
            support=groups[0].support,
        )
    metadata = {"runs": [report.metadata for report in reports]}
    notes = sorted({note for report in reports for note in report.notes})
    return MetricReport(categories=averaged, metadata=metadata, notes=notes)


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def evaluate_by_category(
    models: FactErrorModel | Sequence[FactErrorModel],
    items: Sequence[PreparedSample],
    threshold: float = 0.5,
    metadata: dict | None = None,
) -> MetricReport:
    """Evaluate one model (or several, e.g. different seeds) and average."""
    model_list = [models] if isinstance(models, FactErrorModel) else list(models)
    if not model_list:
        raise ValueError("no models to evaluate")
    reports = []
    for run_index, model in enumerate(model_list):
        predictions = [
            model.predict_labels(item.prepared, threshold)[1] for item in items
        ]
        run_meta = dict(metadata or {})
        run_meta["run"] = run_index
        reports.append(
            report_from_predictions(predictions, [item.sample for item in items], run_meta)
        )
    return reports[0] if len(reports) == 1 else average_reports(reports)


# --- highlight evaluation ----------------------------------------------------

def frame_token_set(frame: SemanticFrame) -> frozenset[tuple[int, int]]:
    """(sentence, word) identity of every token the frame covers."""
    return frozenset((frame.sentence_index, w) for w in frame.word_indices)


def exact_match(predicted: SemanticFrame, gold: SemanticFrame) -> bool:
    """Identical sentence, predicate span, and role-tagged argument spans."""
    return (
        predicted.sentence_index == gold.sentence_index
        and predicted.predicate == gold.predicate
        and {(a.role, a.span) for a in predicted.arguments}
        == {(a.role, a.span) for a in gold.arguments}
    )


def overlap_match(predicted: SemanticFrame, gold: SemanticFrame, min_f1: float = 0.5) -> bool:
    """Token-level F1 between the two frames' token sets at least min_f1."""
    a, b = frame_token_set(predicted), frame_token_set(gold)
    if not a or not b:
        return False
    intersection = len(a & b)
    if intersection == 0:
        return False
    return 2 * intersection / (len(a) + len(b)) >= min_f1


MATCHERS: dict[str, Callable[[SemanticFrame, SemanticFrame], bool]] = {
    "exact": exact_match,
    "overlap": overlap_match,
}


def recall_at_k(
    predicted: HighlightResult,
    gold_frames: Sequence[SemanticFrame],
    k: int,
    matcher: str | Callable[[SemanticFrame, SemanticFrame], bool] = "overlap",
) -> float:
    """Fraction of gold frames matched by at least one of the first k highlights."""
    if not gold_frames:
        raise ValueError("recall@k is undefined for an empty gold frame set")
    if k < 1:
        raise ValueError("k must be >= 1")
    match = MATCHERS[matcher] if isinstance(matcher, str) else matcher
    top = [h.frame for h in predicted.top(k)]
    recalled = sum(1 for gold in gold_frames if any(match(p, gold) for p in top))
    return recalled / len(gold_frames)


def baseline_cls_highlights(
    final_attention: Tensor,
    doc_frames: Sequence[AlignedFrame],
    k: int,
    cls_index: int = 0,
    mode: str = "mean",
) -> HighlightResult:
    """Highlights from the encoder's own CLS attention, for baseline comparison.

    A frame's importance is the head-summed final-layer attention from the
    CLS position to the frame's tokens, averaged over those tokens ("sum"
    switches to the unnormalized total). Ranking and tie-breaking are shared
    with the fact-attention highlights so comparisons are apples-to-apples.
    """
    if mode not in ("mean", "sum"):
        raise ValueError(f"mode must be 'mean' or 'sum', got {mode!r}")
    # float64 accumulation in fixed head order: scores reproduce bit-for-bit
    per_head_rows = final_attention.detach()[:, cls_index, :].tolist()  # heads x seq
    cls_to_token = [0.0] * len(per_head_rows[0])
    for row in per_head_rows:
        for index, p in enumerate(row):
            cls_to_token[index] += p
    scores = []
    for frame in doc_frames:
        received = [cls_to_token[i] for i in frame.token_indices]
        total = sum(received)
        scores.append(total / len(received) if mode == "mean" else total)
    return top_k_highlights(scores, doc_frames, k)


# --- gold evidence corpus -----------------------------------------------------

@dataclass(frozen=True)
class EvidenceRecord:
    """A claim with the document section containing its evidence sentences."""

    id: str
    claim: str
    section: str
    evidence_sentences: tuple[int, ...]


def read_evidence_records(path: str | Path) -> list[EvidenceRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            records.append(
                EvidenceRecord(
                    id=str(raw["id"]),
                    claim=raw["claim"],
                    section=raw["section"],
                    evidence_sentences=tuple(raw["evidence_sentences"]),
                )
            )
    return records


@dataclass(frozen=True)
class HighlightEvalItem:
    id: str
    claim: str
    document: str
    document_frames: tuple[SemanticFrame, ...]
    gold_frames: tuple[SemanticFrame, ...]


@dataclass(frozen=True)
class HighlightEvalSet:
    items: tuple[HighlightEvalItem, ...]
    dropped: int  # records whose evidence sentences yielded no frames


def build_highlight_eval_set(
    records: Sequence[EvidenceRecord], backend: SrlBackend
) -> HighlightEvalSet:
    """Claims become summaries, sections become documents, and the frames of
    the evidence sentences become the gold highlights. Records whose evidence
    yields no frames are dropped (counted)."""
    items = []
    dropped = 0
    for record in records:
        doc_frames = tuple(extract_frames(tokenize(record.section), backend, FrameSource.DOCUMENT))
        evidence = set(record.evidence_sentences)
        gold = tuple(f for f in doc_frames if f.sentence_index in evidence and not f.is_fullsent)
        if not gold:
            dropped += 1
            logger.warning("record %s: evidence sentences yield no frames; dropped", record.id)
            continue
        items.append(
            HighlightEvalItem(
                id=record.id,
                claim=record.claim,
                document=record.section,
                document_frames=doc_frames,
                gold_frames=gold,
            )
        )
    return HighlightEvalSet(tuple(items), dropped)
