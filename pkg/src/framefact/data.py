"""Corpus ingestion, deduplication, split construction, and label statistics.

Raw annotated corpora arrive as JSONL or CSV with dataset-specific field
names; a field map config adapts them to the canonical sample schema. The
dedup key is the exact (document, summary) pair after whitespace
normalization, first occurrence wins.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .core import (
    ErrorType,
    LabelVector,
    Origin,
    Sample,
    SystemCategory,
    map_raw_error_labels,
)

logger = logging.getLogger(__name__)


def normalize_text(text: str) -> str:
    return " ".join(text.split())


def dedup(samples: Sequence[Sample]) -> list[Sample]:
    """Drop exact duplicate (document, summary) pairs, keeping first occurrences.

    A dropped duplicate whose labels disagree with the keeper's is logged as a
    conflict; the keeper's labels stand.
    """
    seen: dict[tuple[str, str], Sample] = {}
    kept = []
    for sample in samples:
        key = (normalize_text(sample.document), normalize_text(sample.summary))
        keeper = seen.get(key)
        if keeper is None:
            seen[key] = sample
            kept.append(sample)
        elif keeper.labels != sample.labels:
            logger.warning(
                "duplicate pair %s dropped; labels conflict with keeper %s",
                sample.id, keeper.id,
            )
    return kept


@dataclass(frozen=True)
class SplitSpec:
    """Random split sizes; they must sum to the (post-dedup) corpus size."""

    train: int
    validation: int
    test: int
    seed: int = 13

    def __post_init__(self) -> None:
        if min(self.train, self.validation, self.test) < 0:
            raise ValueError("split sizes must be nonnegative")

    @property
    def total(self) -> int:
        return self.train + self.validation + self.test


@dataclass
class SplitManifest:
    train: list[str]
    validation: list[str]
    test: list[str]
    removed_overlap: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "train": self.train,
            "validation": self.validation,
            "test": self.test,
            "removed_overlap": self.removed_overlap,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitManifest":
        return cls(
            train=list(data["train"]),
            validation=list(data["validation"]),
            test=list(data["test"]),
            removed_overlap=list(data.get("removed_overlap", [])),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2)
            handle.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        with open(path, "r", encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))

    def subset(self, name: str) -> list[str]:
        if name not in ("train", "validation", "test"):
            raise ValueError(f"unknown split subset {name!r}")
        return getattr(self, name)


def make_random_split(samples: Sequence[Sample], spec: SplitSpec) -> SplitManifest:
    """Seeded shuffle then partition into train/validation/test id lists."""
    if spec.total != len(samples):
        raise ValueError(
            f"split sizes sum to {spec.total} but corpus has {len(samples)} samples"
        )
    ids = [sample.id for sample in samples]
    if len(set(ids)) != len(ids):
        raise ValueError("sample ids are not unique; split manifests would be ambiguous")
    random.Random(spec.seed).shuffle(ids)
    return SplitManifest(
        train=ids[: spec.train],
        validation=ids[spec.train : spec.train + spec.validation],
        test=ids[spec.train + spec.validation :],
    )


def make_challenging_split(
    samples: Sequence[Sample],
    holdout_system: str,
    validation_size: int,
    seed: int = 13,
) -> SplitManifest:
    """Holdout split: the test set is every sample generated by one system,
    the rest splits randomly into train/validation, and any training sample
    whose document also appears in the test set is removed (recorded in the
    manifest) so train and test share no systems and no documents."""
    holdout = holdout_system.strip().lower()
    test = [s for s in samples if s.system.strip().lower() == holdout]
    if not test:
        raise ValueError(f"no samples generated by system {holdout_system!r}")
    rest = [s for s in samples if s.system.strip().lower() != holdout]
    if validation_size > len(rest):
        raise ValueError(
            f"validation size {validation_size} exceeds the {len(rest)} non-holdout samples"
        )
    order = list(range(len(rest)))
    random.Random(seed).shuffle(order)
    validation = [rest[i] for i in order[:validation_size]]
    train = [rest[i] for i in order[validation_size:]]

    test_documents = {normalize_text(s.document) for s in test}
    removed = [s.id for s in train if normalize_text(s.document) in test_documents]
    removed_set = set(removed)
    train_ids = [s.id for s in train if s.id not in removed_set]
    return SplitManifest(
        train=train_ids,
        validation=[s.id for s in validation],
        test=[s.id for s in test],
        removed_overlap=removed,
    )


@dataclass
class CorpusStats:
    """Error-type counts and system-category counts, broken down by origin."""

    error_counts: dict[str, dict[str, int]]  # origin -> error json_key -> count
    category_counts: dict[str, dict[str, int]]  # origin -> category -> count
    total: int

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "error_counts": self.error_counts,
            "category_counts": self.category_counts,
        }

    def to_tables(self) -> str:
        error_header = f"{'origin':<8}" + "".join(f"{t.json_key:>16}" for t in ErrorType)
        lines = [error_header]
        for origin, counts in self.error_counts.items():
            lines.append(
                f"{origin:<8}" + "".join(f"{counts[t.json_key]:>16d}" for t in ErrorType)
            )
        categories = [c.value for c in SystemCategory]
        lines.append("")
        lines.append(f"{'origin':<8}" + "".join(f"{c:>10}" for c in categories))
        for origin, counts in self.category_counts.items():
            lines.append(f"{origin:<8}" + "".join(f"{counts[c]:>10d}" for c in categories))
        return "\n".join(lines)


def corpus_stats(samples: Sequence[Sample]) -> CorpusStats:
    origins = [o.value for o in Origin]
    error_counts = {o: {t.json_key: 0 for t in ErrorType} for o in origins}
    category_counts = {o: {c.value: 0 for c in SystemCategory} for o in origins}
    for sample in samples:
        origin = sample.origin.value
        for error_type in ErrorType:
            if sample.labels[error_type]:
                error_counts[origin][error_type.json_key] += 1
        category_counts[origin][sample.system_category.value] += 1
    return CorpusStats(error_counts, category_counts, total=len(samples))


# --- raw corpus adapters ------------------------------------------------------

@dataclass
class FieldMap:
    """Maps dataset-specific field names onto the canonical sample schema.

    `labels_field` must hold raw error tags, either as a list or as a
    delimiter-separated string; tags go through the raw-tag mapping (so
    entire-sentence tags expand to their error types). `category_values`
    optionally maps raw system names to the canonical category buckets.
    """

    id_field: str = "id"
    document_field: str = "document"
    summary_field: str = "summary"
    labels_field: str = "errors"
    labels_separator: str = ";"
    system_field: str | None = None
    origin_field: str | None = None
    category_field: str | None = None
    category_values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_json(cls, path: str | Path) -> "FieldMap":
        with open(path, "r", encoding="utf-8") as handle:
            return cls(**json.load(handle))


def _raw_tags(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [t for t in (part.strip() for part in value.split(";")) if t]
    return [str(t) for t in value]


def adapt_record(record: dict, fmap: FieldMap, line_no: int) -> Sample:
    try:
        raw_labels = record.get(fmap.labels_field)
        if isinstance(raw_labels, str) and fmap.labels_separator != ";":
            tags = [t.strip() for t in raw_labels.split(fmap.labels_separator) if t.strip()]
        else:
            tags = _raw_tags(raw_labels)
        category = SystemCategory.UNKNOWN
        if fmap.category_field and record.get(fmap.category_field) is not None:
            raw_category = str(record[fmap.category_field])
            raw_category = fmap.category_values.get(raw_category, raw_category)
            category = SystemCategory.parse(raw_category)
        origin = Origin.OTHER
        if fmap.origin_field and record.get(fmap.origin_field) is not None:
            origin = Origin.parse(str(record[fmap.origin_field]))
        return Sample(
            id=str(record[fmap.id_field]),
            document=record[fmap.document_field],
            summary=record[fmap.summary_field],
            labels=map_raw_error_labels(tags),
            system_category=category,
            origin=origin,
            system=str(record.get(fmap.system_field, "") or "") if fmap.system_field else "",
        )
    except KeyError as exc:
        raise ValueError(f"record {line_no}: missing field {exc}") from exc


def load_raw_corpus(path: str | Path, fmap: FieldMap | None = None) -> list[Sample]:
    """Read a raw JSONL or CSV corpus through a field map (extension decides)."""
    fmap = fmap or FieldMap()
    path = Path(path)
    samples = []
    if path.suffix.lower() == ".csv":
        with open(path, "r", encoding="utf-8", newline="") as handle:
            for line_no, record in enumerate(csv.DictReader(handle), start=1):
                samples.append(adapt_record(record, fmap, line_no))
    else:
        with open(path, "r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                samples.append(adapt_record(json.loads(line), fmap, line_no))
    return samples


def select_samples(samples: Sequence[Sample], ids: Iterable[str]) -> list[Sample]:
    """Samples for a manifest id list, in manifest order; missing ids error."""
    by_id = {sample.id: sample for sample in samples}
    selected = []
    for sample_id in ids:
        if sample_id not in by_id:
            raise KeyError(f"manifest id {sample_id!r} not present in the corpus")
        selected.append(by_id[sample_id])
    return selected
