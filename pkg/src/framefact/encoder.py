"""Token encoders and fact pooling.

The encoder contract: given the concatenated document+summary subword
sequence, expose hidden states from every layer plus the final layer's
per-head self-attention. Token representations are the elementwise max over
all layers; each frame's tokens are then pooled into one fact vector by a
learned attentive pooler (softmax-scored, value-transformed).

Two encoders share the contract: a small randomly initialized transformer for
desk-scale runs, and an adapter-augmented pretrained BERT (only the adapters
train; the base stays frozen).
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from typing import Protocol, Sequence

import torch
from torch import Tensor, nn

from .core import SemanticFrame
from .srl import AlignedFrame, SpanAlignment, TokenizedText, align_frames, tokenize

logger = logging.getLogger(__name__)

ACTIVATIONS = {"gelu": nn.GELU, "relu": nn.ReLU, "tanh": nn.Tanh}


def make_activation(name: str) -> nn.Module:
    try:
        return ACTIVATIONS[name]()
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


class WordPieces(Protocol):
    """Maps a single word to its subword ids; provides the special ids."""

    cls_id: int
    sep_id: int

    def pieces(self, word: str) -> list[int]: ...


class HashSubwordTokenizer:
    """Deterministic vocabulary-free subword tokenizer.

    Words are cut into fixed-width character chunks and each chunk is hashed
    (crc32, stable across processes) into the id space. Good enough to give
    the toy encoder realistic word/subword alignment behaviour.
    """

    PAD_ID = 0

    def __init__(self, vocab_size: int = 4096, max_piece_chars: int = 6):
        if vocab_size < 16:
            raise ValueError("vocab_size too small")
        self.vocab_size = vocab_size
        self.max_piece_chars = max_piece_chars
        self.cls_id = 1
        self.sep_id = 2

    def pieces(self, word: str) -> list[int]:
        chunks = [
            word[i : i + self.max_piece_chars] for i in range(0, len(word), self.max_piece_chars)
        ] or [word]
        base = self.vocab_size - 3
        return [3 + zlib.crc32(chunk.lower().encode("utf-8")) % base for chunk in chunks]


class HfWordPieces:
    """WordPieces bridge over a Hugging Face tokenizer (word-by-word encoding)."""

    def __init__(self, tokenizer):
        self._tokenizer = tokenizer
        self.cls_id = tokenizer.cls_token_id
        self.sep_id = tokenizer.sep_token_id

    def pieces(self, word: str) -> list[int]:
        ids = self._tokenizer(word, add_special_tokens=False)["input_ids"]
        if not ids:
            ids = [self._tokenizer.unk_token_id]
        return ids


@dataclass
class PairEncoding:
    """Subword encoding of one [CLS] document [SEP] summary [SEP] sequence.

    sentence_positions holds each subword's offset within its own sentence
    (special tokens sit at 0); encoders that use sentence-relative positional
    embeddings read these instead of the absolute offsets.
    """

    input_ids: Tensor
    token_type_ids: Tensor
    sentence_positions: Tensor
    doc_alignment: SpanAlignment
    summary_alignment: SpanAlignment
    cls_index: int = 0

    @property
    def length(self) -> int:
        return int(self.input_ids.shape[0])


@dataclass
class EncoderOutput:
    hidden_states: Tensor  # (num_layers, seq, hidden)
    final_attention: Tensor  # (num_heads, seq, seq), softmax probabilities


def build_pair_encoding(
    document: TokenizedText,
    summary: TokenizedText,
    word_pieces: WordPieces,
    truncation_limit: int,
) -> PairEncoding:
    """Tokenize a document/summary pair into one sequence with word alignments.

    Truncation is word-granular: a word either survives with all its pieces or
    is cut entirely, so alignment ranges stay contiguous. When the pair
    exceeds the window the summary keeps up to half the budget and the
    document fills the rest (leftover space flows back to whichever is longer).
    """
    if truncation_limit < 8:
        raise ValueError("truncation_limit must be at least 8")
    doc_pieces = [word_pieces.pieces(w) for s in document.sentences for w in s]
    sum_pieces = [word_pieces.pieces(w) for s in summary.sentences for w in s]
    doc_sentence_of = [i for i, s in enumerate(document.sentences) for _ in s]
    sum_sentence_of = [i for i, s in enumerate(summary.sentences) for _ in s]
    doc_total = sum(len(p) for p in doc_pieces)
    sum_total = sum(len(p) for p in sum_pieces)

    available = truncation_limit - 3  # CLS and two SEPs
    if doc_total + sum_total <= available:
        doc_budget, sum_budget = doc_total, sum_total
    else:
        sum_budget = min(sum_total, max(1, available // 2))
        doc_budget = available - sum_budget
        if doc_budget > doc_total:
            doc_budget, sum_budget = doc_total, available - doc_total

    ids: list[int] = [word_pieces.cls_id]
    positions: list[int] = [0]
    doc_map = _consume_words(doc_pieces, doc_sentence_of, doc_budget, ids, positions)
    ids.append(word_pieces.sep_id)
    positions.append(0)
    type_boundary = len(ids)
    sum_map = _consume_words(sum_pieces, sum_sentence_of, sum_budget, ids, positions)
    ids.append(word_pieces.sep_id)
    positions.append(0)

    token_type_ids = [0] * type_boundary + [1] * (len(ids) - type_boundary)
    return PairEncoding(
        input_ids=torch.tensor(ids, dtype=torch.long),
        token_type_ids=torch.tensor(token_type_ids, dtype=torch.long),
        sentence_positions=torch.tensor(positions, dtype=torch.long),
        doc_alignment=SpanAlignment(doc_map, document.sentence_offsets, truncation_limit),
        summary_alignment=SpanAlignment(sum_map, summary.sentence_offsets, truncation_limit),
    )


def _consume_words(
    pieces_per_word: list[list[int]],
    sentence_of: list[int],
    budget: int,
    ids: list[int],
    positions: list[int],
) -> dict[int, tuple[int, int]]:
    mapping: dict[int, tuple[int, int]] = {}
    used = 0
    current_sentence = -1
    sentence_position = 0
    for word_index, pieces in enumerate(pieces_per_word):
        if used + len(pieces) > budget:
            break
        if sentence_of[word_index] != current_sentence:
            current_sentence = sentence_of[word_index]
            sentence_position = 0
        start = len(ids)
        ids.extend(pieces)
        positions.extend(range(sentence_position, sentence_position + len(pieces)))
        sentence_position += len(pieces)
        mapping[word_index] = (start, len(ids))
        used += len(pieces)
    return mapping


class TokenEncoder(nn.Module):
    """Common surface of all token encoders."""

    hidden_size: int
    truncation_limit: int
    _word_pieces: WordPieces

    def encode_pair(self, document: TokenizedText, summary: TokenizedText) -> PairEncoding:
        return build_pair_encoding(document, summary, self._word_pieces, self.truncation_limit)

    def forward(self, encoding: PairEncoding) -> EncoderOutput:  # pragma: no cover - abstract
        raise NotImplementedError

    def trainable_parameters(self):
        return (p for p in self.parameters() if p.requires_grad)


class _SelfAttention(nn.Module):
    """Plain multi-head self-attention that exposes per-head probabilities."""

    def __init__(self, hidden_size: int, num_heads: int):
        super().__init__()
        if hidden_size % num_heads != 0:
            raise ValueError(f"hidden_size {hidden_size} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = hidden_size // num_heads
        self.qkv = nn.Linear(hidden_size, 3 * hidden_size)
        self.out = nn.Linear(hidden_size, hidden_size)
        # zero-init residual branch: a randomly initialized block otherwise
        # scrambles token identity before training has a chance to shape it
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, x: Tensor, mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
        seq, hidden = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(seq, self.num_heads, self.head_dim).transpose(0, 1)
        k = k.view(seq, self.num_heads, self.head_dim).transpose(0, 1)
        v = v.view(seq, self.num_heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / self.head_dim**0.5
        if mask is not None:
            scores = scores + mask
        probs = torch.softmax(scores, dim=-1)  # (heads, seq, seq)
        context = (probs @ v).transpose(0, 1).reshape(seq, hidden)
        return self.out(context), probs


class _EncoderBlock(nn.Module):
    def __init__(self, hidden_size: int, num_heads: int, ffn_size: int, activation: str):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden_size)
        self.attention = _SelfAttention(hidden_size, num_heads)
        self.norm2 = nn.LayerNorm(hidden_size)
        self.ffn = nn.Sequential(
            nn.Linear(hidden_size, ffn_size),
            make_activation(activation),
            nn.Linear(ffn_size, hidden_size),
        )
        nn.init.zeros_(self.ffn[2].weight)
        nn.init.zeros_(self.ffn[2].bias)

    def forward(self, x: Tensor, mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
        attended, probs = self.attention(self.norm1(x), mask)
        x = x + attended
        x = x + self.ffn(self.norm2(x))
        return x, probs


class ToyTransformerEncoder(TokenEncoder):
    """Small randomly initialized encoder with the full contract surface.

    Exists so training, highlighting, and the whole acceptance suite run on a
    CPU in seconds without any pretrained checkpoint. With segment_isolated
    the self-attention is masked to stay within the document and summary
    halves, so the cross-attention module downstream is the only path between
    them; ablation experiments use this to isolate that module's effect.
    """

    def __init__(
        self,
        hidden_size: int = 32,
        num_layers: int = 2,
        num_heads: int = 2,
        vocab_size: int = 4096,
        truncation_limit: int = 128,
        activation: str = "gelu",
        ffn_size: int | None = None,
        segment_isolated: bool = False,
        sentence_relative_positions: bool = True,
    ):
        super().__init__()
        self.hidden_size = hidden_size
        self.truncation_limit = truncation_limit
        self.segment_isolated = segment_isolated
        self.sentence_relative_positions = sentence_relative_positions
        self._word_pieces = HashSubwordTokenizer(vocab_size)
        self.token_embedding = nn.Embedding(vocab_size, hidden_size)
        self.segment_embedding = nn.Embedding(2, hidden_size)
        self.position_embedding = nn.Embedding(truncation_limit, hidden_size)
        # standard transformer embedding scale; the default N(0, 1) swamps
        # token identity and makes fact matching untrainable at this size
        for embedding in (self.token_embedding, self.position_embedding):
            nn.init.normal_(embedding.weight, std=0.02)
        # segment identity starts neutral (the separator token already marks
        # the boundary); a random offset here decorrelates repeated tokens
        nn.init.zeros_(self.segment_embedding.weight)
        self.blocks = nn.ModuleList(
            _EncoderBlock(hidden_size, num_heads, ffn_size or 4 * hidden_size, activation)
            for _ in range(num_layers)
        )

    def forward(self, encoding: PairEncoding) -> EncoderOutput:
        if self.sentence_relative_positions:
            positions = encoding.sentence_positions
        else:
            positions = torch.arange(encoding.length, device=encoding.input_ids.device)
        x = (
            self.token_embedding(encoding.input_ids)
            + self.segment_embedding(encoding.token_type_ids)
            + self.position_embedding(positions)
        )
        mask = None
        if self.segment_isolated:
            same_segment = encoding.token_type_ids.unsqueeze(0) == encoding.token_type_ids.unsqueeze(1)
            mask = torch.where(same_segment, 0.0, float("-inf"))
        states = [x]
        probs = None
        for block in self.blocks:
            x, probs = block(x, mask)
            states.append(x)
        return EncoderOutput(hidden_states=torch.stack(states), final_attention=probs)


class Adapter(nn.Module):
    """Bottleneck adapter; near-identity at init so training starts stable."""

    def __init__(self, hidden_size: int, adapter_dim: int = 32):
        super().__init__()
        self.down = nn.Linear(hidden_size, adapter_dim)
        self.activation = nn.GELU()
        self.up = nn.Linear(adapter_dim, hidden_size)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.up(self.activation(self.down(x)))


class _AdapterSublayer(nn.Module):
    """Wraps a BERT output sublayer (dense -> dropout -> residual LayerNorm)
    to slot an adapter in before the residual add."""

    def __init__(self, inner: nn.Module, adapter: Adapter):
        super().__init__()
        self.inner = inner
        self.adapter = adapter

    def forward(self, hidden_states: Tensor, input_tensor: Tensor) -> Tensor:
        hidden_states = self.inner.dense(hidden_states)
        hidden_states = self.inner.dropout(hidden_states)
        hidden_states = self.adapter(hidden_states)
        return self.inner.LayerNorm(hidden_states + input_tensor)


class AdapterBertEncoder(TokenEncoder):
    """BERT-family encoder with bottleneck adapters; only adapters train.

    The base model is frozen entirely; an adapter follows both the attention
    output and the feed-forward output of every layer. The model must run the
    eager attention implementation so per-head probabilities are available.
    """

    def __init__(self, model, word_pieces: WordPieces, adapter_dim: int = 32,
                 truncation_limit: int | None = None):
        super().__init__()
        impl = getattr(model.config, "_attn_implementation", "eager")
        if impl != "eager":
            raise ValueError(
                "adapter encoder needs attn_implementation='eager' to expose attention"
            )
        self.model = model
        self.hidden_size = model.config.hidden_size
        self.truncation_limit = truncation_limit or model.config.max_position_embeddings
        self._word_pieces = word_pieces
        for param in self.model.parameters():
            param.requires_grad = False
        self.adapters = nn.ModuleList()
        for layer in self.model.encoder.layer:
            attn_adapter = Adapter(self.hidden_size, adapter_dim)
            ffn_adapter = Adapter(self.hidden_size, adapter_dim)
            layer.attention.output = _AdapterSublayer(layer.attention.output, attn_adapter)
            layer.output = _AdapterSublayer(layer.output, ffn_adapter)
            self.adapters.extend([attn_adapter, ffn_adapter])

    @classmethod
    def from_pretrained(cls, name: str, adapter_dim: int = 32,
                        truncation_limit: int = 512) -> "AdapterBertEncoder":
        from transformers import AutoModel, AutoTokenizer  # heavy; import on demand

        model = AutoModel.from_pretrained(name, attn_implementation="eager")
        tokenizer = AutoTokenizer.from_pretrained(name)
        return cls(model, HfWordPieces(tokenizer), adapter_dim, truncation_limit)

    def forward(self, encoding: PairEncoding) -> EncoderOutput:
        outputs = self.model(
            input_ids=encoding.input_ids.unsqueeze(0),
            token_type_ids=encoding.token_type_ids.unsqueeze(0),
            output_hidden_states=True,
            output_attentions=True,
            return_dict=True,
        )
        hidden_states = torch.stack([layer[0] for layer in outputs.hidden_states])
        return EncoderOutput(hidden_states=hidden_states, final_attention=outputs.attentions[-1][0])


def fuse_layers(per_layer_states: Tensor | Sequence[Tensor]) -> Tensor:
    """Elementwise max over the layer axis: (layers, seq, hidden) -> (seq, hidden)."""
    if isinstance(per_layer_states, Tensor):
        stacked = per_layer_states
        if stacked.ndim != 3:
            raise ValueError(f"expected (layers, seq, hidden), got shape {tuple(stacked.shape)}")
    else:
        layers = list(per_layer_states)
        if not layers:
            raise ValueError("need at least one layer to fuse")
        if any(layer.shape != layers[0].shape for layer in layers):
            raise ValueError(f"layer shapes differ: {[tuple(l.shape) for l in layers]}")
        stacked = torch.stack(layers)
    if stacked.shape[0] < 1:
        raise ValueError("need at least one layer to fuse")
    return stacked.amax(dim=0)


@dataclass
class FactEmbedding:
    """Pooled vector for one fact, with its attention weights and provenance."""

    vector: Tensor
    weights: Tensor
    frame: AlignedFrame | None = None

    def __post_init__(self) -> None:
        if not bool(torch.isfinite(self.vector).all()):
            raise ValueError("fact embedding contains non-finite entries")


class AttentivePooler(nn.Module):
    """Pools a fact's token vectors: softmax over learned scalar scores of the
    value-transformed tokens, then the weighted sum of those same values.

    The value map is a two-layer fully connected network; the score head is a
    learned linear map of its output to one logit per token.
    """

    def __init__(self, hidden_size: int, pooler_hidden: int | None = None,
                 activation: str = "gelu"):
        super().__init__()
        inner = pooler_hidden or hidden_size
        self.value_net = nn.Sequential(
            nn.Linear(hidden_size, inner),
            make_activation(activation),
            nn.Linear(inner, hidden_size),
        )
        self.score_head = nn.Linear(hidden_size, 1)

    def forward(self, tokens: Tensor) -> tuple[Tensor, Tensor]:
        values = self.value_net(tokens)  # (m, hidden)
        scores = self.score_head(values).squeeze(-1)  # (m,)
        weights = torch.softmax(scores, dim=0)
        return weights @ values, weights


def pool_fact(tokens: Tensor, pooler: AttentivePooler,
              frame: AlignedFrame | None = None) -> FactEmbedding:
    """Pool the m x d token block of one fact into a single vector."""
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise ValueError(f"pool_fact needs a non-empty (m, hidden) block, got {tuple(tokens.shape)}")
    vector, weights = pooler(tokens)
    return FactEmbedding(vector=vector, weights=weights, frame=frame)


@dataclass
class PreparedPair:
    """Everything static about one sample: encoding plus aligned frames."""

    encoding: PairEncoding
    doc_frames: list[AlignedFrame]
    summary_frames: list[AlignedFrame]
    dropped_doc: int = 0
    dropped_summary: int = 0


def prepare_pair(
    encoder: TokenEncoder,
    document: TokenizedText,
    summary: TokenizedText,
    doc_frames: Sequence[SemanticFrame],
    summary_frames: Sequence[SemanticFrame],
) -> PreparedPair:
    """Tokenize the pair once and align both frame lists to subword positions."""
    encoding = encoder.encode_pair(document, summary)
    doc_aligned, dropped_doc = align_frames(doc_frames, encoding.doc_alignment)
    sum_aligned, dropped_summary = align_frames(summary_frames, encoding.summary_alignment)
    if not sum_aligned:
        raise ValueError("no summary facts survive truncation/alignment")
    if not doc_aligned:
        raise ValueError("no document facts survive truncation/alignment")
    if dropped_doc or dropped_summary:
        logger.debug("alignment dropped %d document / %d summary frames", dropped_doc, dropped_summary)
    return PreparedPair(encoding, doc_aligned, sum_aligned, dropped_doc, dropped_summary)


@dataclass
class FactMatrices:
    """Row-stacked fact vectors for one sample, document and summary kept apart."""

    document: Tensor  # (n_d, hidden)
    summary: Tensor  # (n_s, hidden)
    doc_embeddings: list[FactEmbedding]
    summary_embeddings: list[FactEmbedding]
    encoder_output: EncoderOutput


def encode_facts(encoder: TokenEncoder, pooler: AttentivePooler,
                 prepared: PreparedPair) -> FactMatrices:
    """Run the encoder, fuse layers, and pool every aligned frame in order."""
    output = encoder(prepared.encoding)
    fused = fuse_layers(output.hidden_states)
    doc_embeddings = [
        pool_fact(fused[list(frame.token_indices)], pooler, frame)
        for frame in prepared.doc_frames
    ]
    summary_embeddings = [
        pool_fact(fused[list(frame.token_indices)], pooler, frame)
        for frame in prepared.summary_frames
    ]
    return FactMatrices(
        document=torch.stack([e.vector for e in doc_embeddings]),
        summary=torch.stack([e.vector for e in summary_embeddings]),
        doc_embeddings=doc_embeddings,
        summary_embeddings=summary_embeddings,
        encoder_output=output,
    )


def encode_sample(
    encoder: TokenEncoder,
    pooler: AttentivePooler,
    document: str | TokenizedText,
    summary: str | TokenizedText,
    doc_frames: Sequence[SemanticFrame],
    summary_frames: Sequence[SemanticFrame],
) -> FactMatrices:
    """Convenience composition: tokenize, align, encode, pool."""
    doc_tok = document if isinstance(document, TokenizedText) else tokenize(document)
    sum_tok = summary if isinstance(summary, TokenizedText) else tokenize(summary)
    prepared = prepare_pair(encoder, doc_tok, sum_tok, doc_frames, summary_frames)
    return encode_facts(encoder, pooler, prepared)
