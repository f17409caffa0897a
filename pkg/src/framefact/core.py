"""Core domain types: the error typology, label vectors, semantic frames, and samples.

Everything here is an immutable value type shared by the rest of the package.
The four error types follow the noun-phrase/predicate x extrinsic/intrinsic
typology; the canonical index order is fixed once here and must never change,
since label vectors, metrics, and class weights all index by it.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class ErrorType(enum.IntEnum):
    """The four fine-grained factual error types, in canonical index order."""

    EXTRINSIC_NP = 0
    INTRINSIC_NP = 1
    EXTRINSIC_PRED = 2
    INTRINSIC_PRED = 3

    @property
    def json_key(self) -> str:
        return _JSON_KEYS[self]


_JSON_KEYS = {
    ErrorType.EXTRINSIC_NP: "extrinsic_np",
    ErrorType.INTRINSIC_NP: "intrinsic_np",
    ErrorType.EXTRINSIC_PRED: "extrinsic_pred",
    ErrorType.INTRINSIC_PRED: "intrinsic_pred",
}

NUM_ERROR_TYPES = len(ErrorType)


class UnknownErrorTag(ValueError):
    """Raised when a raw annotation tag is not part of the known tag set."""


@dataclass(frozen=True)
class LabelVector:
    """Binary presence vector over the four error types.

    The all-zero vector is a legal value and means the summary carries no
    factual error ("No Error").
    """

    bits: tuple[bool, bool, bool, bool]

    def __post_init__(self) -> None:
        if len(self.bits) != NUM_ERROR_TYPES:
            raise ValueError(f"expected {NUM_ERROR_TYPES} bits, got {len(self.bits)}")
        object.__setattr__(self, "bits", tuple(bool(b) for b in self.bits))

    @classmethod
    def zeros(cls) -> "LabelVector":
        return cls((False, False, False, False))

    @classmethod
    def from_types(cls, types: Iterable[ErrorType]) -> "LabelVector":
        present = set(types)
        return cls(tuple(t in present for t in ErrorType))  # type: ignore[arg-type]

    @classmethod
    def from_dict(cls, obj: dict) -> "LabelVector":
        return cls(tuple(bool(obj[t.json_key]) for t in ErrorType))  # type: ignore[arg-type]

    def to_dict(self) -> dict[str, int]:
        return {t.json_key: int(self.bits[t]) for t in ErrorType}

    def union(self, other: "LabelVector") -> "LabelVector":
        return LabelVector(tuple(a or b for a, b in zip(self.bits, other.bits)))  # type: ignore[arg-type]

    def __getitem__(self, error_type: ErrorType) -> bool:
        return self.bits[error_type]

    def __iter__(self) -> Iterator[bool]:
        return iter(self.bits)

    @property
    def is_no_error(self) -> bool:
        return not any(self.bits)


# Raw annotation tags accepted by map_raw_error_labels, after normalization.
_FINE_GRAINED_TAGS = {
    "extrinsic-np": (ErrorType.EXTRINSIC_NP,),
    "intrinsic-np": (ErrorType.INTRINSIC_NP,),
    "extrinsic-predicate": (ErrorType.EXTRINSIC_PRED,),
    "intrinsic-predicate": (ErrorType.INTRINSIC_PRED,),
    # common spelling variants seen in raw corpora
    "extrinsic-noun-phrase": (ErrorType.EXTRINSIC_NP,),
    "intrinsic-noun-phrase": (ErrorType.INTRINSIC_NP,),
    "extrinsic-pred": (ErrorType.EXTRINSIC_PRED,),
    "intrinsic-pred": (ErrorType.INTRINSIC_PRED,),
}

_SENTENCE_TAGS = {
    "intrinsic-entire-sentence": (ErrorType.INTRINSIC_NP, ErrorType.INTRINSIC_PRED),
    "extrinsic-entire-sentence": (ErrorType.EXTRINSIC_NP, ErrorType.EXTRINSIC_PRED),
    "entire-sentence": tuple(ErrorType),
}

_TAG_TABLE = {**_FINE_GRAINED_TAGS, **_SENTENCE_TAGS}


def _normalize_tag(tag: str) -> str:
    return tag.strip().lower().replace("_", "-").replace(" ", "-")


def map_raw_error_labels(raw_tags: Iterable[str]) -> LabelVector:
    """Map raw annotation tags onto the four-type label vector.

    Fine-grained tags pass through. Intrinsic (extrinsic) entire-sentence
    errors set both intrinsic (extrinsic) types; a bare entire-sentence error
    sets all four. Multiple tags combine by union, so adding a tag can only
    set bits, never clear them. The empty tag set maps to "no error".

    Raises UnknownErrorTag naming the first tag outside the known set.
    """
    types: list[ErrorType] = []
    for tag in raw_tags:
        normalized = _normalize_tag(tag)
        if normalized not in _TAG_TABLE:
            raise UnknownErrorTag(f"unknown error tag: {tag!r}")
        types.extend(_TAG_TABLE[normalized])
    return LabelVector.from_types(types)


class FrameSource(enum.Enum):
    DOCUMENT = "document"
    SUMMARY = "summary"


# Role tag given to the predicate span; fallback pseudo-frames use FULLSENT_ROLE.
PREDICATE_ROLE = "V"
FULLSENT_ROLE = "FULLSENT"

Span = tuple[int, int]


def _check_span(span: Span, what: str) -> None:
    start, end = span
    if start < 0 or end <= start:
        raise ValueError(f"{what} span must be non-empty with start >= 0, got {span}")


@dataclass(frozen=True)
class FrameArgument:
    """One role-tagged argument span of a semantic frame (word indices, end exclusive)."""

    role: str
    span: Span

    def __post_init__(self) -> None:
        if not self.role:
            raise ValueError("argument role must be non-empty")
        _check_span(self.span, f"argument {self.role!r}")


@dataclass(frozen=True)
class SemanticFrame:
    """A predicate plus its role-tagged argument spans; the unit "fact".

    Spans are word indices local to the frame's sentence, end-exclusive.
    Bounds against the sentence length are enforced where the sentence is
    known (frame extraction); the frame itself guarantees non-empty spans and
    that no argument overlaps the predicate.
    """

    predicate: Span
    arguments: tuple[FrameArgument, ...] = ()
    sentence_index: int = 0
    source: FrameSource = FrameSource.DOCUMENT
    predicate_role: str = PREDICATE_ROLE

    def __post_init__(self) -> None:
        _check_span(self.predicate, "predicate")
        if self.sentence_index < 0:
            raise ValueError("sentence_index must be >= 0")
        object.__setattr__(self, "arguments", tuple(self.arguments))
        p_start, p_end = self.predicate
        for arg in self.arguments:
            a_start, a_end = arg.span
            if a_start < p_end and p_start < a_end:
                raise ValueError(
                    f"argument {arg.role!r} span {arg.span} overlaps predicate {self.predicate}"
                )

    @property
    def word_indices(self) -> tuple[int, ...]:
        """All sentence-local word indices covered by the frame, sorted."""
        words = set(range(*self.predicate))
        for arg in self.arguments:
            words.update(range(*arg.span))
        return tuple(sorted(words))

    @property
    def token_count(self) -> int:
        return len(self.word_indices)

    @property
    def is_fullsent(self) -> bool:
        return self.predicate_role == FULLSENT_ROLE


class SystemCategory(enum.Enum):
    SOTA = "SOTA"
    XFORMER = "XFORMER"
    OLD = "OLD"
    REF = "REF"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, value: str) -> "SystemCategory":
        for member in cls:
            if member.value.lower() == value.strip().lower():
                return member
        return cls.UNKNOWN


class Origin(enum.Enum):
    CNNDM = "CNNDM"
    XSUM = "XSum"
    OTHER = "Other"

    @classmethod
    def parse(cls, value: str) -> "Origin":
        for member in cls:
            if member.value.lower() == value.strip().lower():
                return member
        return cls.OTHER


@dataclass(frozen=True)
class Sample:
    """One document-summary pair with its gold error labels and provenance.

    `system` optionally names the generating model (e.g. the summarizer a
    holdout split is built around); `system_category` is its era bucket.
    """

    id: str
    document: str
    summary: str
    labels: LabelVector = field(default_factory=LabelVector.zeros)
    system_category: SystemCategory = SystemCategory.UNKNOWN
    origin: Origin = Origin.OTHER
    system: str = ""

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("sample id must be non-empty")
        if not self.document.strip():
            raise ValueError(f"sample {self.id!r}: document must be non-empty")
        if not self.summary.strip():
            raise ValueError(f"sample {self.id!r}: summary must be non-empty")

    def to_json_dict(self) -> dict:
        record = {
            "id": self.id,
            "document": self.document,
            "summary": self.summary,
            "labels": self.labels.to_dict(),
            "system_category": self.system_category.value,
            "origin": self.origin.value,
        }
        if self.system:
            record["system"] = self.system
        return record

    @classmethod
    def from_json_dict(cls, record: dict) -> "Sample":
        return cls(
            id=record["id"],
            document=record["document"],
            summary=record["summary"],
            labels=LabelVector.from_dict(record["labels"]),
            system_category=SystemCategory.parse(record.get("system_category", "Unknown")),
            origin=Origin.parse(record.get("origin", "Other")),
            system=record.get("system", ""),
        )


def write_samples(path: str | Path, samples: Sequence[Sample]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sample in samples:
            handle.write(json.dumps(sample.to_json_dict(), ensure_ascii=False) + "\n")


def read_samples(path: str | Path) -> list[Sample]:
    samples = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                samples.append(Sample.from_json_dict(json.loads(line)))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad sample record: {exc}") from exc
    return samples
