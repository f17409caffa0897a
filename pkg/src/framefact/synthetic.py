"""Synthetic document/summary corpora with construction-time error labels.

Each document states a handful of subject-verb-object facts, one per
sentence; the summary restates one of them verbatim. A corrupted sample
rewrites that document fact (its object or its verb), so whether the summary
is faithful depends on the document alone, never on the summary text: the
label flips when the matching document fact is corrupted. Whether the
summary's displaced token still occurs elsewhere in the document decides
intrinsic versus extrinsic.

Token names are filtered so they hash to distinct ids under the toy
encoder's default subword vocabulary, keeping the task free of accidental
homonyms.
"""

from __future__ import annotations

import random
from typing import Sequence

from .core import ErrorType, LabelVector, Origin, Sample, SystemCategory
from .encoder import HashSubwordTokenizer

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

_CATEGORY_CYCLE = (
    SystemCategory.SOTA,
    SystemCategory.XFORMER,
    SystemCategory.OLD,
    SystemCategory.REF,
)

CORRUPTIONS = ("obj_intrinsic", "obj_extrinsic", "verb_intrinsic", "verb_extrinsic")

_CORRUPTION_LABELS = {
    "obj_intrinsic": ErrorType.INTRINSIC_NP,
    "obj_extrinsic": ErrorType.EXTRINSIC_NP,
    "verb_intrinsic": ErrorType.INTRINSIC_PRED,
    "verb_extrinsic": ErrorType.EXTRINSIC_PRED,
}


def _coin_word(index: int, pattern: str, suffix: str) -> str:
    letters = []
    n = index
    for slot in pattern:
        pool = _CONSONANTS if slot == "c" else _VOWELS
        letters.append(pool[n % len(pool)])
        n //= len(pool)
    return "".join(letters) + suffix


def _distinct_words(count: int, pattern: str, suffix: str,
                    taken_ids: set[int], vocab: HashSubwordTokenizer) -> list[str]:
    words = []
    index = 0
    while len(words) < count:
        word = _coin_word(index, pattern, suffix)
        index += 1
        pieces = vocab.pieces(word)
        if len(pieces) == 1 and pieces[0] not in taken_ids:
            taken_ids.add(pieces[0])
            words.append(word)
        if index > 100_000:
            raise RuntimeError("could not coin enough collision-free words")
    return words


def make_vocabulary(n_entities: int, n_verbs: int,
                    vocab_size: int = 4096) -> tuple[list[str], list[str]]:
    """Entity and verb token lists with pairwise-distinct subword ids."""
    vocab = HashSubwordTokenizer(vocab_size)
    taken: set[int] = set()
    entities = _distinct_words(n_entities, "cvcv", "n", taken, vocab)
    verbs = _distinct_words(n_verbs, "cvcv", "s", taken, vocab)
    return entities, verbs


def make_alignment_corpus(
    n_samples: int,
    seed: int = 0,
    facts_per_doc: int = 6,
    n_entities: int | None = None,
    n_verbs: int | None = None,
    no_error_rate: float = 1 / 3,
) -> tuple[list[Sample], list[str]]:
    """Corpus whose labels depend on document-summary fact alignment.

    Returns the samples and the verb lexicon for the rule-based frame backend.
    """
    if facts_per_doc < 2:
        raise ValueError("need at least two facts per document to plant tokens")
    n_entities = n_entities if n_entities is not None else 2 * facts_per_doc + 8
    n_verbs = n_verbs if n_verbs is not None else facts_per_doc + 6
    if n_entities < 2 * facts_per_doc + 1:
        raise ValueError("entity pool too small for distinct per-document entities")
    if n_verbs < facts_per_doc + 1:
        raise ValueError("verb pool too small for distinct per-document verbs")
    entities, verbs = make_vocabulary(n_entities, n_verbs)
    rng = random.Random(seed)

    samples = []
    for i in range(n_samples):
        doc_entities = rng.sample(entities, 2 * facts_per_doc)
        doc_verbs = rng.sample(verbs, facts_per_doc)
        facts = [
            [doc_entities[2 * j], doc_verbs[j], doc_entities[2 * j + 1]]
            for j in range(facts_per_doc)
        ]
        target_index = rng.randrange(facts_per_doc)
        subject, verb, obj = facts[target_index]
        summary = f"{subject} {verb} {obj} ."

        if rng.random() < no_error_rate:
            labels = LabelVector.zeros()
        else:
            corruption = rng.choice(CORRUPTIONS)
            labels = LabelVector.from_types([_CORRUPTION_LABELS[corruption]])
            other_index = rng.choice([j for j in range(facts_per_doc) if j != target_index])
            if corruption.startswith("obj"):
                fresh = rng.choice([e for e in entities if e not in doc_entities])
                facts[target_index][2] = fresh
                if corruption == "obj_intrinsic":
                    facts[other_index][2] = obj  # keep the summary's object in the document
            else:
                fresh = rng.choice([v for v in verbs if v not in doc_verbs])
                facts[target_index][1] = fresh
                if corruption == "verb_intrinsic":
                    facts[other_index][1] = verb  # keep the summary's verb in the document

        document = " ".join(f"{s} {v} {o} ." for s, v, o in facts)
        samples.append(
            Sample(
                id=f"syn-{seed}-{i:04d}",
                document=document,
                summary=summary,
                labels=labels,
                system_category=_CATEGORY_CYCLE[i % len(_CATEGORY_CYCLE)],
                origin=Origin.OTHER,
                system="synthetic",
            )
        )
    return samples, verbs


def make_marker_corpus(
    n_samples: int,
    seed: int = 0,
    facts_per_doc: int = 8,
    marker_repeats: int = 3,
) -> tuple[list[Sample], list[str]]:
    """Alignment task with a linearly readable corruption signal.

    Every document states the same fixed inventory of facts, shuffled per
    sample; four of them are corrupted by appending a marker token, one
    marker per error type, each appearing exactly once per document. The
    summary restates one document fact without its marker; the label is the
    marker of that aligned fact, or no error when it is untagged.

    Because the inventory is fixed and every marker occurs exactly once, the
    mean over document facts is the same for every sample: a model that mean
    pools the document carries zero label information. Reading the label
    requires retrieving the aligned fact, which is exactly what the document
    fact attention module does.
    """
    n_markers = len(CORRUPTIONS)
    if facts_per_doc < n_markers + 1:
        raise ValueError(f"need at least {n_markers + 1} facts per document")
    entities, verbs = make_vocabulary(2 * facts_per_doc, facts_per_doc)
    vocab = HashSubwordTokenizer()
    taken = {vocab.pieces(w)[0] for w in entities + verbs}
    markers = _distinct_words(n_markers, "cvcv", "ly", taken, vocab)
    marker_labels = dict(zip(markers, CORRUPTIONS))
    inventory = [
        (entities[2 * j], verbs[j], entities[2 * j + 1]) for j in range(facts_per_doc)
    ]
    rng = random.Random(seed)

    samples = []
    for i in range(n_samples):
        order = rng.sample(range(facts_per_doc), facts_per_doc)
        tagged_positions = rng.sample(range(facts_per_doc), n_markers)
        marker_at = dict(zip(tagged_positions, rng.sample(markers, n_markers)))
        sentences = []
        for position, fact_index in enumerate(order):
            subject, verb, obj = inventory[fact_index]
            fact = f"{subject} {verb} {obj}"
            if position in marker_at:
                suffix = " ".join([marker_at[position]] * marker_repeats)
                sentences.append(f"{fact} {suffix} .")
            else:
                sentences.append(f"{fact} .")

        if rng.random() < 0.5:
            target = rng.choice(tagged_positions)
            labels = LabelVector.from_types([_CORRUPTION_LABELS[marker_labels[marker_at[target]]]])
        else:
            untagged = [p for p in range(facts_per_doc) if p not in marker_at]
            target = rng.choice(untagged)
            labels = LabelVector.zeros()
        subject, verb, obj = inventory[order[target]]
        samples.append(
            Sample(
                id=f"mrk-{seed}-{i:04d}",
                document=" ".join(sentences),
                summary=f"{subject} {verb} {obj} .",
                labels=labels,
                system_category=_CATEGORY_CYCLE[i % len(_CATEGORY_CYCLE)],
                origin=Origin.OTHER,
                system="synthetic",
            )
        )
    return samples, verbs


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Simple seeded train/validation index split for harness corpora."""
    order = list(range(n))
    random.Random(seed).shuffle(order)
    n_val = max(1, int(n * val_fraction))
    return order[n_val:], order[:n_val]
