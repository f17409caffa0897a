import json
import logging
import random

import pytest

from framefact.core import ErrorType, LabelVector, Origin, Sample, SystemCategory
from framefact.data import (
    FieldMap,
    SplitManifest,
    SplitSpec,
    corpus_stats,
    dedup,
    load_raw_corpus,
    make_challenging_split,
    make_random_split,
    select_samples,
)


def sample(i, document="doc", summary="sum", labels=None, system="", category=SystemCategory.UNKNOWN):
    return Sample(
        id=f"s{i}",
        document=document,
        summary=summary,
        labels=labels or LabelVector.zeros(),
        system_category=category,
        system=system,
    )


class TestDedup:
    def test_duplicate_pair_dropped(self):
        samples = [
            sample(0, "a doc", "a sum"),
            sample(1, "other doc", "other sum"),
            sample(2, "a doc", "a sum"),
            sample(3, "third doc", "third sum"),
        ]
        kept = dedup(samples)
        assert [s.id for s in kept] == ["s0", "s1", "s3"]

    def test_idempotent(self):
        samples = [sample(0, "x", "y"), sample(1, "x", "y"), sample(2, "z", "w")]
        once = dedup(samples)
        assert dedup(once) == once

    def test_whitespace_normalized_key(self):
        samples = [sample(0, "a  doc\nhere", "s"), sample(1, "a doc here", "s")]
        assert len(dedup(samples)) == 1

    def test_label_conflict_warns_and_keeps_first(self, caplog):
        samples = [
            sample(0, "d", "s", labels=LabelVector((True, False, False, False))),
            sample(1, "d", "s", labels=LabelVector((False, True, False, False))),
        ]
        with caplog.at_level(logging.WARNING):
            kept = dedup(samples)
        assert [s.id for s in kept] == ["s0"]
        assert any("labels conflict" in r.message for r in caplog.records)

    def test_same_document_different_summaries_both_kept(self):
        samples = [sample(0, "d", "s one"), sample(1, "d", "s two")]
        assert len(dedup(samples)) == 2


class TestRandomSplit:
    def test_partition_is_disjoint_and_exhaustive(self):
        samples = [sample(i, f"d{i}", f"s{i}") for i in range(10)]
        manifest = make_random_split(samples, SplitSpec(8, 1, 1, seed=3))
        all_ids = manifest.train + manifest.validation + manifest.test
        assert sorted(all_ids) == sorted(s.id for s in samples)
        assert len(set(all_ids)) == 10
        assert (len(manifest.train), len(manifest.validation), len(manifest.test)) == (8, 1, 1)

    def test_same_seed_same_manifest(self):
        samples = [sample(i, f"d{i}", f"s{i}") for i in range(12)]
        first = make_random_split(samples, SplitSpec(9, 2, 1, seed=42))
        second = make_random_split(samples, SplitSpec(9, 2, 1, seed=42))
        assert first.to_dict() == second.to_dict()

    def test_size_mismatch_names_expected_and_actual(self):
        samples = [sample(i, f"d{i}", f"s{i}") for i in range(5)]
        with pytest.raises(ValueError, match="sum to 7 but corpus has 5"):
            make_random_split(samples, SplitSpec(5, 1, 1))

    def test_manifest_round_trip(self, tmp_path):
        samples = [sample(i, f"d{i}", f"s{i}") for i in range(6)]
        manifest = make_random_split(samples, SplitSpec(4, 1, 1, seed=1))
        path = tmp_path / "manifest.json"
        manifest.save(path)
        assert SplitManifest.load(path) == manifest


class TestChallengingSplit:
    def test_toy_trace(self):
        samples = [
            sample(0, "shared doc", "s0", system="bart"),
            sample(1, "unique doc", "s1", system="bart"),
            sample(2, "shared doc", "s2", system="pegasus"),
            sample(3, "another doc", "s3", system="pegasus"),
            sample(4, "more doc", "s4", system="old-rnn"),
        ]
        manifest = make_challenging_split(samples, "bart", validation_size=0, seed=0)
        assert sorted(manifest.test) == ["s0", "s1"]
        assert manifest.removed_overlap == ["s2"]
        assert "s2" not in manifest.train
        assert manifest.validation == []
        covered = set(manifest.train) | set(manifest.test)
        assert covered | set(manifest.removed_overlap) == {f"s{i}" for i in range(5)}

    def test_no_document_overlap_between_train_and_test(self):
        rng = random.Random(5)
        docs = [f"document {i}" for i in range(8)]
        samples = [
            sample(i, rng.choice(docs), f"s{i}", system=rng.choice(["bart", "lead3"]))
            for i in range(40)
        ]
        manifest = make_challenging_split(samples, "bart", validation_size=5, seed=2)
        by_id = {s.id: s for s in samples}
        train_docs = {by_id[i].document for i in manifest.train}
        test_docs = {by_id[i].document for i in manifest.test}
        assert not train_docs & test_docs

    def test_absent_holdout_system_rejected(self):
        samples = [sample(0, "d", "s", system="pegasus")]
        with pytest.raises(ValueError, match="bart"):
            make_challenging_split(samples, "bart", validation_size=0)


class TestCorpusStats:
    def test_empty_corpus_all_zero(self):
        stats = corpus_stats([])
        assert stats.total == 0
        for origin_counts in stats.error_counts.values():
            assert all(v == 0 for v in origin_counts.values())

    def test_constructed_counts(self):
        samples = [
            Sample(id="a", document="d", summary="s",
                   labels=LabelVector((True, True, False, False)),
                   system_category=SystemCategory.SOTA, origin=Origin.XSUM),
            Sample(id="b", document="d2", summary="s2",
                   labels=LabelVector((True, False, False, False)),
                   system_category=SystemCategory.OLD, origin=Origin.XSUM),
            Sample(id="c", document="d3", summary="s3",
                   labels=LabelVector((False, False, False, True)),
                   system_category=SystemCategory.REF, origin=Origin.CNNDM),
        ]
        stats = corpus_stats(samples)
        assert stats.error_counts["XSum"]["extrinsic_np"] == 2
        assert stats.error_counts["XSum"]["intrinsic_np"] == 1
        assert stats.error_counts["CNNDM"]["intrinsic_pred"] == 1
        assert stats.category_counts["XSum"]["SOTA"] == 1
        assert stats.category_counts["CNNDM"]["REF"] == 1
        table = stats.to_tables()
        assert "XSum" in table and "extrinsic_np" in table


class TestRawAdapters:
    def test_jsonl_with_field_map(self, tmp_path):
        path = tmp_path / "raw.jsonl"
        records = [
            {
                "pair_id": "p1",
                "article": "some document text",
                "model_summary": "some summary",
                "error_tags": ["intrinsic-entire-sentence"],
                "model_name": "bart",
                "dataset": "xsum",
                "bucket": "SOTA",
            },
            {
                "pair_id": "p2",
                "article": "another document",
                "model_summary": "another summary",
                "error_tags": [],
                "model_name": "lead3",
                "dataset": "cnndm",
                "bucket": "OLD",
            },
        ]
        path.write_text("\n".join(json.dumps(r) for r in records))
        fmap = FieldMap(
            id_field="pair_id",
            document_field="article",
            summary_field="model_summary",
            labels_field="error_tags",
            system_field="model_name",
            origin_field="dataset",
            category_field="bucket",
        )
        samples = load_raw_corpus(path, fmap)
        assert samples[0].labels == LabelVector((False, True, False, True))
        assert samples[0].system == "bart"
        assert samples[0].origin is Origin.XSUM
        assert samples[1].system_category is SystemCategory.OLD

    def test_csv_with_delimited_tags(self, tmp_path):
        path = tmp_path / "raw.csv"
        path.write_text(
            "id,document,summary,errors,system\n"
            'r1,"doc text","sum text","extrinsic-np;intrinsic-np",bart\n'
            'r2,"doc 2","sum 2","",pegasus\n'
        )
        samples = load_raw_corpus(path, FieldMap(system_field="system"))
        assert samples[0].labels == LabelVector((True, True, False, False))
        assert samples[1].labels.is_no_error

    def test_category_value_mapping(self, tmp_path):
        path = tmp_path / "raw.jsonl"
        path.write_text(json.dumps({
            "id": "x", "document": "d", "summary": "s", "errors": [],
            "sys": "bart-large",
        }))
        fmap = FieldMap(category_field="sys", category_values={"bart-large": "SOTA"})
        samples = load_raw_corpus(path, fmap)
        assert samples[0].system_category is SystemCategory.SOTA

    def test_missing_field_names_record(self, tmp_path):
        path = tmp_path / "raw.jsonl"
        path.write_text(json.dumps({"id": "x", "document": "d"}))
        with pytest.raises(ValueError, match="missing field"):
            load_raw_corpus(path, FieldMap())


class TestSelectSamples:
    def test_manifest_order_preserved(self):
        samples = [sample(i, f"d{i}", f"s{i}") for i in range(4)]
        selected = select_samples(samples, ["s2", "s0"])
        assert [s.id for s in selected] == ["s2", "s0"]

    def test_missing_id_rejected(self):
        with pytest.raises(KeyError, match="zzz"):
            select_samples([sample(0, "d", "s")], ["zzz"])
