"""The assembled detector model and its checkpoint format.

One forward pass: encode the document+summary pair, pool each semantic frame
into a fact vector, cross-attend summary facts over document facts (unless the
ablation flag disables that module, in which case the document context is the
plain mean of document fact vectors), mean-fuse, and classify.

Checkpoints are single zip archives: a magic/version entry, a plain-text JSON
config snapshot, and the parameter blob. Writes are atomic
(temp-file-then-rename) so a crash never leaves a torn checkpoint.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import Tensor, nn

from .attention import (
    HighlightResult,
    ImportanceScores,
    MultiHeadCrossAttention,
    importance,
    top_k_highlights,
)
from .classifier import ClassifierHead, decide, fuse, predict
from .core import FrameSource, LabelVector, Sample, SemanticFrame
from .encoder import (
    AttentivePooler,
    FactMatrices,
    PreparedPair,
    TokenEncoder,
    ToyTransformerEncoder,
    encode_facts,
    prepare_pair,
)
from .srl import TokenizedText, tokenize

CHECKPOINT_MAGIC = "framefact-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Everything needed to rebuild the model architecture."""

    encoder_type: str = "toy"  # "toy" or "adapter-bert"
    hidden_size: int = 32
    encoder_layers: int = 2
    encoder_heads: int = 2
    encoder_segment_isolated: bool = False  # toy only: no doc/summary flow inside the encoder
    vocab_size: int = 4096
    truncation_limit: int = 128
    activation: str = "gelu"
    pooler_hidden: int | None = None
    attention_heads: int = 16
    adapter_dim: int = 32
    base_model: str | None = None
    fact_attention: bool = True
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.encoder_type not in ("toy", "adapter-bert"):
            raise ValueError(f"unknown encoder_type {self.encoder_type!r}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class ModelOutput:
    probabilities: Tensor  # (4,)
    facts: FactMatrices
    contexts: Tensor  # (n_s, d)
    attention_probs: Tensor | None  # (H, n_s, n_d); None under the ablation
    importance: ImportanceScores | None


class FactErrorModel(nn.Module):
    """Encoder + attentive pooler + document fact attention + classifier head."""

    def __init__(self, encoder: TokenEncoder, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = encoder
        self.pooler = AttentivePooler(
            encoder.hidden_size, config.pooler_hidden, config.activation
        )
        self.cross_attention = (
            MultiHeadCrossAttention(encoder.hidden_size, config.attention_heads)
            if config.fact_attention
            else None
        )
        self.head = ClassifierHead(encoder.hidden_size)

    def forward(self, prepared: PreparedPair) -> ModelOutput:
        facts = encode_facts(self.encoder, self.pooler, prepared)
        if self.cross_attention is not None:
            contexts, probs = self.cross_attention(facts.summary, facts.document)
            scores = importance(probs)
        else:
            # ablation: every summary fact sees the same mean-pooled document
            contexts = facts.document.mean(dim=0, keepdim=True).expand_as(facts.summary)
            probs, scores = None, None
        summary_mean, context_mean = fuse(facts.summary, contexts)
        probabilities = predict(summary_mean, context_mean, self.head)
        return ModelOutput(probabilities, facts, contexts, probs, scores)

    def prepare(
        self,
        document: str | TokenizedText,
        summary: str | TokenizedText,
        doc_frames: Sequence[SemanticFrame],
        summary_frames: Sequence[SemanticFrame],
    ) -> PreparedPair:
        doc_tok = document if isinstance(document, TokenizedText) else tokenize(document)
        sum_tok = summary if isinstance(summary, TokenizedText) else tokenize(summary)
        return prepare_pair(self.encoder, doc_tok, sum_tok, doc_frames, summary_frames)

    @torch.no_grad()
    def predict_labels(self, prepared: PreparedPair,
                       threshold: float | None = None) -> tuple[Tensor, LabelVector]:
        self.eval()
        output = self(prepared)
        probs = output.probabilities.detach()
        return probs, decide(probs, threshold if threshold is not None else self.config.threshold)

    @torch.no_grad()
    def highlight(self, prepared: PreparedPair, k: int) -> HighlightResult:
        if self.cross_attention is None:
            raise RuntimeError("this model was trained without the document fact attention module")
        self.eval()
        output = self(prepared)
        assert output.importance is not None
        return top_k_highlights(output.importance, prepared.doc_frames, k)


def build_model(config: ModelConfig, seed: int | None = None) -> FactErrorModel:
    """Construct a model; seeding here makes fresh initializations reproducible."""
    if seed is not None:
        torch.manual_seed(seed)
    if config.encoder_type == "toy":
        encoder: TokenEncoder = ToyTransformerEncoder(
            hidden_size=config.hidden_size,
            num_layers=config.encoder_layers,
            num_heads=config.encoder_heads,
            vocab_size=config.vocab_size,
            truncation_limit=config.truncation_limit,
            activation=config.activation,
            segment_isolated=config.encoder_segment_isolated,
        )
    else:
        from .encoder import AdapterBertEncoder

        if not config.base_model:
            raise ValueError("encoder_type 'adapter-bert' needs config.base_model")
        if config.encoder_segment_isolated:
            raise ValueError("encoder_segment_isolated is a toy-encoder-only option")
        encoder = AdapterBertEncoder.from_pretrained(
            config.base_model, config.adapter_dim, config.truncation_limit
        )
    return FactErrorModel(encoder, config)


@dataclass
class PreparedSample:
    """A corpus sample bound to its encoder-ready frame alignment."""

    sample: Sample
    prepared: PreparedPair


def prepare_samples(
    encoder: TokenEncoder,
    samples: Sequence[Sample],
    frames: dict[tuple[str, FrameSource], list[SemanticFrame]],
) -> list[PreparedSample]:
    """Bind each sample to its precomputed frames, aligned to this encoder."""
    items = []
    for sample in samples:
        try:
            doc_frames = frames[(sample.id, FrameSource.DOCUMENT)]
            summary_frames = frames[(sample.id, FrameSource.SUMMARY)]
        except KeyError:
            raise KeyError(f"no precomputed frames for sample {sample.id!r}") from None
        prepared = prepare_pair(
            encoder,
            tokenize(sample.document),
            tokenize(sample.summary),
            doc_frames,
            summary_frames,
        )
        items.append(PreparedSample(sample, prepared))
    return items


@dataclass
class Checkpoint:
    """A trained model's parameters plus the config and run metadata."""

    config: ModelConfig
    state_dict: dict
    seed: int = 0
    epoch: int = 0
    val_bacc: float = 0.0
    extra: dict = field(default_factory=dict)

    def build_model(self) -> FactErrorModel:
        model = build_model(self.config, seed=self.seed)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> None:
    path = Path(path)
    meta = {
        "config": checkpoint.config.to_dict(),
        "seed": checkpoint.seed,
        "epoch": checkpoint.epoch,
        "val_bacc": checkpoint.val_bacc,
        "extra": checkpoint.extra,
    }
    blob = io.BytesIO()
    torch.save(checkpoint.state_dict, blob)
    fd, temp_name = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            with zipfile.ZipFile(handle, "w") as archive:
                archive.writestr("magic", f"{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n")
                archive.writestr("config.json", json.dumps(meta, indent=2, sort_keys=True))
                archive.writestr("weights.pt", blob.getvalue())
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise


def load_checkpoint(path: str | Path) -> Checkpoint:
    with zipfile.ZipFile(path, "r") as archive:
        magic = archive.read("magic").decode("utf-8").strip()
        if not magic.startswith(CHECKPOINT_MAGIC):
            raise ValueError(f"{path}: not a model checkpoint (magic {magic!r})")
        version = int(magic.rsplit("v", 1)[1])
        if version > CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {version} is newer than supported")
        meta = json.loads(archive.read("config.json"))
        state_dict = torch.load(io.BytesIO(archive.read("weights.pt")), weights_only=True)
    return Checkpoint(
        config=ModelConfig.from_dict(meta["config"]),
        state_dict=state_dict,
        seed=meta["seed"],
        epoch=meta["epoch"],
        val_bacc=meta["val_bacc"],
        extra=meta.get("extra", {}),
    )
