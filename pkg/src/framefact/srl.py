"""Semantic-role-labeling frontend: text -> semantic frames -> subword-aligned frames.

The actual SRL model lives behind the SrlBackend protocol so any tool can be
plugged in (a subprocess adapter speaks the frame sidecar JSON over a pipe).
A deterministic lexicon backend ships for tests and synthetic corpora.
Frames are extracted on the full text and only clipped to the encoder's
truncation window afterwards, when they are aligned to subword positions.
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .core import (
    FULLSENT_ROLE,
    FrameArgument,
    FrameSource,
    SemanticFrame,
    Span,
)

logger = logging.getLogger(__name__)

_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+|\n+")
_WORD = re.compile(r"\w+(?:['-]\w+)*|[^\w\s]")
_PUNCT = re.compile(r"^[^\w]+$")


class SrlBackendError(RuntimeError):
    """Raised when an SRL backend fails outright."""


@dataclass(frozen=True)
class TokenizedText:
    """Sentence-split, word-tokenized text; word indices are sentence-local."""

    sentences: tuple[tuple[str, ...], ...]

    @property
    def sentence_offsets(self) -> tuple[int, ...]:
        """Global word index at which each sentence starts."""
        offsets = []
        total = 0
        for sentence in self.sentences:
            offsets.append(total)
            total += len(sentence)
        return tuple(offsets)

    @property
    def num_words(self) -> int:
        return sum(len(s) for s in self.sentences)

    def words(self, sentence_index: int, span: Span) -> tuple[str, ...]:
        return self.sentences[sentence_index][span[0] : span[1]]


def tokenize(text: str) -> TokenizedText:
    """Deterministic sentence split + word tokenization."""
    sentences = []
    for raw in _SENTENCE_BOUNDARY.split(text):
        tokens = tuple(_WORD.findall(raw))
        if tokens:
            sentences.append(tokens)
    return TokenizedText(tuple(sentences))


class SrlBackend(Protocol):
    """Labels one tokenized sentence with zero or more semantic frames.

    Implementations must be deterministic for a fixed input and version.
    Returned frames use sentence-local word spans; sentence_index and source
    are filled in by extract_frames.
    """

    name: str
    version: str

    def label(self, tokens: Sequence[str]) -> list[SemanticFrame]: ...


class LexiconBackend:
    """Rule backend for tests: configured verbs are predicates, the chunk
    before a verb is ARG0 and the chunk after it is ARG1 (punctuation trimmed,
    empty chunks omitted). Chunks end at the neighbouring verb or sentence edge."""

    def __init__(self, verbs: Iterable[str], name: str = "lexicon", version: str = "1"):
        self.verbs = frozenset(v.lower() for v in verbs)
        if not self.verbs:
            raise ValueError("lexicon backend needs at least one verb")
        self.name = name
        self.version = version

    def label(self, tokens: Sequence[str]) -> list[SemanticFrame]:
        predicate_positions = [i for i, tok in enumerate(tokens) if tok.lower() in self.verbs]
        frames = []
        for idx, position in enumerate(predicate_positions):
            left = predicate_positions[idx - 1] + 1 if idx > 0 else 0
            right = predicate_positions[idx + 1] if idx + 1 < len(predicate_positions) else len(tokens)
            arguments = []
            arg0 = _trim_chunk(tokens, left, position)
            if arg0 is not None:
                arguments.append(FrameArgument("ARG0", arg0))
            arg1 = _trim_chunk(tokens, position + 1, right)
            if arg1 is not None:
                arguments.append(FrameArgument("ARG1", arg1))
            frames.append(SemanticFrame(predicate=(position, position + 1), arguments=tuple(arguments)))
        return frames


def _trim_chunk(tokens: Sequence[str], start: int, end: int) -> Span | None:
    while start < end and _PUNCT.match(tokens[start]):
        start += 1
    while end > start and _PUNCT.match(tokens[end - 1]):
        end -= 1
    return (start, end) if start < end else None


class SubprocessBackend:
    """Adapter that drives an external SRL tool over a line-based JSON pipe.

    For each sentence one request line ``{"tokens": [...]}`` is written to the
    child's stdin and one response line ``{"frames": [{"predicate": [s, e],
    "args": [{"role": ..., "span": [s, e]}]}]}`` is read back, matching the
    frame sidecar schema. The child is spawned lazily and kept alive across
    sentences; close() (or use as a context manager) terminates it.
    """

    def __init__(self, command: Sequence[str], name: str = "subprocess", version: str = "0"):
        if not command:
            raise ValueError("subprocess backend needs a command")
        self.command = list(command)
        self.name = name
        self.version = version
        self._proc: subprocess.Popen | None = None

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    bufsize=1,
                )
            except OSError as exc:
                raise SrlBackendError(f"cannot start SRL backend {self.command}: {exc}") from exc
        return self._proc

    def label(self, tokens: Sequence[str]) -> list[SemanticFrame]:
        proc = self._ensure_proc()
        assert proc.stdin is not None and proc.stdout is not None
        try:
            proc.stdin.write(json.dumps({"tokens": list(tokens)}) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise SrlBackendError(f"SRL backend pipe failed: {exc}") from exc
        if not line:
            raise SrlBackendError("SRL backend closed its output stream")
        try:
            payload = json.loads(line)
            return [_frame_from_dict(f) for f in payload["frames"]]
        except (KeyError, ValueError, TypeError) as exc:
            raise SrlBackendError(f"malformed SRL backend response: {line!r}") from exc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()  # type: ignore[union-attr]
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self) -> "SubprocessBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def extract_frames(
    text: str | TokenizedText,
    backend: SrlBackend,
    source: FrameSource = FrameSource.DOCUMENT,
) -> list[SemanticFrame]:
    """Extract one frame list for a whole text, ordered by (sentence, predicate start).

    A sentence on which the backend fails contributes no frames (warning
    logged); if every sentence fails the extraction errors out. A text that
    yields no frames at all falls back to one full-sentence pseudo-frame per
    sentence so downstream encoding always has at least one fact to pool.
    """
    tokenized = text if isinstance(text, TokenizedText) else tokenize(text)
    if not tokenized.sentences:
        raise ValueError("cannot extract frames from empty text")

    frames: list[SemanticFrame] = []
    failures = 0
    for sentence_index, tokens in enumerate(tokenized.sentences):
        try:
            labeled = backend.label(tokens)
            for frame in labeled:
                _check_bounds(frame, len(tokens), sentence_index)
        except SrlBackendError:
            raise
        except Exception as exc:  # backend bug: skip the sentence, keep going
            failures += 1
            logger.warning("SRL backend %s failed on sentence %d: %s", backend.name, sentence_index, exc)
            continue
        frames.extend(
            replace(frame, sentence_index=sentence_index, source=source) for frame in labeled
        )

    if failures == len(tokenized.sentences):
        raise SrlBackendError(f"SRL backend {backend.name} failed on every sentence")

    frames.sort(key=lambda f: (f.sentence_index, f.predicate[0]))
    if not frames:
        frames = [
            SemanticFrame(
                predicate=(0, len(tokens)),
                sentence_index=sentence_index,
                source=source,
                predicate_role=FULLSENT_ROLE,
            )
            for sentence_index, tokens in enumerate(tokenized.sentences)
        ]
    return frames


def _check_bounds(frame: SemanticFrame, sentence_len: int, sentence_index: int) -> None:
    spans = [frame.predicate] + [a.span for a in frame.arguments]
    for span in spans:
        if span[1] > sentence_len:
            raise ValueError(
                f"frame span {span} exceeds sentence {sentence_index} length {sentence_len}"
            )


@dataclass(frozen=True)
class SpanAlignment:
    """Bridge from word positions to encoder subword positions.

    word_to_subword maps global word indices (sentence offsets applied) of the
    words that survived truncation to contiguous, ordered, non-overlapping
    subword ranges in the concatenated encoder input. No mapped position ever
    reaches truncation_limit.
    """

    word_to_subword: dict[int, Span]
    sentence_offsets: tuple[int, ...]
    truncation_limit: int

    def __post_init__(self) -> None:
        previous_end = -1
        for word in sorted(self.word_to_subword):
            start, end = self.word_to_subword[word]
            if start < previous_end or end <= start:
                raise ValueError("word_to_subword ranges must be ordered and non-overlapping")
            if end > self.truncation_limit:
                raise ValueError(f"subword range {(start, end)} exceeds limit {self.truncation_limit}")
            previous_end = end

    def subwords_for(self, sentence_index: int, word_index: int) -> range | None:
        """Subword positions of one sentence-local word, or None if truncated away."""
        global_index = self.sentence_offsets[sentence_index] + word_index
        span = self.word_to_subword.get(global_index)
        return range(*span) if span is not None else None


@dataclass(frozen=True)
class AlignedFrame:
    """A frame translated to encoder subword positions (truncation applied)."""

    frame: SemanticFrame
    predicate_subwords: tuple[int, ...]
    argument_subwords: tuple[tuple[str, tuple[int, ...]], ...]

    @property
    def token_indices(self) -> tuple[int, ...]:
        """All subword positions of the frame, sorted; always non-empty."""
        indices = set(self.predicate_subwords)
        for _, subwords in self.argument_subwords:
            indices.update(subwords)
        return tuple(sorted(indices))


def align_frames(
    frames: Sequence[SemanticFrame], alignment: SpanAlignment
) -> tuple[list[AlignedFrame], int]:
    """Replace word spans by subword positions; returns (aligned, dropped count).

    A frame whose predicate lies entirely beyond the truncation window is
    dropped and counted; argument words beyond the window are clipped, and an
    argument left with no subwords disappears from the aligned frame.
    """
    aligned: list[AlignedFrame] = []
    dropped = 0
    for frame in frames:
        predicate = _aligned_span(frame, frame.predicate, alignment)
        if not predicate:
            dropped += 1
            continue
        arguments = []
        for argument in frame.arguments:
            subwords = _aligned_span(frame, argument.span, alignment)
            if subwords:
                arguments.append((argument.role, subwords))
        aligned.append(AlignedFrame(frame, predicate, tuple(arguments)))
    return aligned, dropped


def _aligned_span(frame: SemanticFrame, span: Span, alignment: SpanAlignment) -> tuple[int, ...]:
    positions: list[int] = []
    for word in range(*span):
        subwords = alignment.subwords_for(frame.sentence_index, word)
        if subwords is not None:
            positions.extend(subwords)
    return tuple(positions)


# --- frame sidecar serialization -------------------------------------------

def frame_to_dict(frame: SemanticFrame) -> dict:
    record: dict = {
        "sentence": frame.sentence_index,
        "predicate": list(frame.predicate),
        "args": [{"role": a.role, "span": list(a.span)} for a in frame.arguments],
    }
    if frame.predicate_role != "V":
        record["predicate_role"] = frame.predicate_role
    return record


def _frame_from_dict(record: dict, source: FrameSource = FrameSource.DOCUMENT) -> SemanticFrame:
    return SemanticFrame(
        predicate=tuple(record["predicate"]),  # type: ignore[arg-type]
        arguments=tuple(
            FrameArgument(arg["role"], tuple(arg["span"])) for arg in record.get("args", [])
        ),
        sentence_index=record.get("sentence", 0),
        source=source,
        predicate_role=record.get("predicate_role", "V"),
    )


def write_frame_sidecar(
    path: str | Path, frames_by_sample: dict[tuple[str, FrameSource], Sequence[SemanticFrame]]
) -> None:
    """One JSONL record per (sample, source), in sorted key order so reruns
    over unchanged inputs are byte-identical."""
    with open(path, "w", encoding="utf-8") as handle:
        for sample_id, source in sorted(frames_by_sample, key=lambda k: (k[0], k[1].value)):
            record = {
                "sample_id": sample_id,
                "source": source.value,
                "frames": [frame_to_dict(f) for f in frames_by_sample[(sample_id, source)]],
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_frame_sidecar(path: str | Path) -> dict[tuple[str, FrameSource], list[SemanticFrame]]:
    frames_by_sample: dict[tuple[str, FrameSource], list[SemanticFrame]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                source = FrameSource(record["source"])
                frames = [_frame_from_dict(f, source) for f in record["frames"]]
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad frame record: {exc}") from exc
            frames_by_sample[(record["sample_id"], source)] = frames
    return frames_by_sample
