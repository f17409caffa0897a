import zipfile

import pytest
import torch

from framefact.core import FrameSource
from framefact.model import (
    Checkpoint,
    ModelConfig,
    build_model,
    load_checkpoint,
    prepare_samples,
    save_checkpoint,
)
from framefact.srl import LexiconBackend, extract_frames
from framefact.synthetic import make_alignment_corpus


def small_setup(n=4, seed=9, fact_attention=True, heads=4):
    samples, verbs = make_alignment_corpus(n, seed=seed, facts_per_doc=3)
    backend = LexiconBackend(verbs)
    frames = {}
    for s in samples:
        frames[(s.id, FrameSource.DOCUMENT)] = extract_frames(s.document, backend, FrameSource.DOCUMENT)
        frames[(s.id, FrameSource.SUMMARY)] = extract_frames(s.summary, backend, FrameSource.SUMMARY)
    config = ModelConfig(hidden_size=16, encoder_heads=2, attention_heads=heads,
                         fact_attention=fact_attention)
    model = build_model(config, seed=seed)
    items = prepare_samples(model.encoder, samples, frames)
    return model, items, config


class TestForward:
    def test_output_shapes_and_importance(self):
        model, items, _ = small_setup()
        output = model(items[0].prepared)
        assert output.probabilities.shape == (4,)
        n_d = output.facts.document.shape[0]
        n_s = output.facts.summary.shape[0]
        assert output.attention_probs.shape == (4, n_s, n_d)
        assert len(output.importance.scores) == n_d

    def test_ablated_model_has_no_attention(self):
        model, items, _ = small_setup(fact_attention=False)
        output = model(items[0].prepared)
        assert output.attention_probs is None
        assert output.importance is None
        assert output.probabilities.shape == (4,)
        with pytest.raises(RuntimeError, match="without the document fact attention"):
            model.highlight(items[0].prepared, 1)

    def test_ablated_context_is_document_mean(self):
        model, items, _ = small_setup(fact_attention=False)
        output = model(items[0].prepared)
        expected = output.facts.document.mean(dim=0)
        for row in output.contexts:
            assert torch.allclose(row, expected, atol=1e-6)


class TestCheckpoint:
    def test_round_trip_reproduces_outputs(self, tmp_path):
        model, items, config = small_setup()
        model.eval()
        before = [model.predict_labels(i.prepared)[0] for i in items]
        path = tmp_path / "model.ckpt"
        save_checkpoint(
            path,
            Checkpoint(config=config, state_dict=model.state_dict(), seed=9, epoch=3, val_bacc=0.75),
        )
        restored = load_checkpoint(path)
        assert restored.seed == 9 and restored.epoch == 3 and restored.val_bacc == 0.75
        assert restored.config == config
        rebuilt = restored.build_model()
        after = [rebuilt.predict_labels(i.prepared)[0] for i in items]
        for a, b in zip(before, after):
            assert torch.equal(a, b)

    def test_archive_carries_magic_and_plaintext_config(self, tmp_path):
        model, _, config = small_setup()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, Checkpoint(config=config, state_dict=model.state_dict()))
        with zipfile.ZipFile(path) as archive:
            names = set(archive.namelist())
            assert {"magic", "config.json", "weights.pt"} <= names
            assert archive.read("magic").decode().startswith("framefact-checkpoint")
            assert b'"hidden_size": 16' in archive.read("config.json")

    def test_foreign_archive_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        with zipfile.ZipFile(path, "w") as archive:
            archive.writestr("magic", "something-else v1\n")
        with pytest.raises(ValueError, match="not a model checkpoint"):
            load_checkpoint(path)

    def test_newer_version_rejected(self, tmp_path):
        path = tmp_path / "future.ckpt"
        with zipfile.ZipFile(path, "w") as archive:
            archive.writestr("magic", "framefact-checkpoint v99\n")
        with pytest.raises(ValueError, match="newer"):
            load_checkpoint(path)


class TestModelConfig:
    def test_round_trip(self):
        config = ModelConfig(hidden_size=64, attention_heads=8, fact_attention=False)
        assert ModelConfig.from_dict(config.to_dict()) == config

    def test_unknown_encoder_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(encoder_type="quantum")

    def test_missing_frames_named_in_error(self):
        model, items, _ = small_setup()
        with pytest.raises(KeyError, match="syn-9-0000"):
            prepare_samples(model.encoder, [items[0].sample], {})
