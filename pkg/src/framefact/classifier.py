"""Classification head: mean-pool fusion, sigmoid probabilities, thresholding."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .core import NUM_ERROR_TYPES, LabelVector


class ClassifierHead(nn.Module):
    """Linear layer over [mean summary facts ; mean document contexts].

    The input is the 2d concatenation of the two pooled vectors; one weight
    column and one bias entry per error type, sigmoid per type.
    """

    def __init__(self, hidden_size: int, num_classes: int = NUM_ERROR_TYPES):
        super().__init__()
        self.linear = nn.Linear(2 * hidden_size, num_classes)

    def forward(self, fused: Tensor) -> Tensor:
        return torch.sigmoid(self.linear(fused))


def fuse(summary_facts: Tensor, contexts: Tensor) -> tuple[Tensor, Tensor]:
    """Mean over summary facts and over their document context vectors."""
    if summary_facts.shape[0] < 1:
        raise ValueError("fuse needs at least one summary fact")
    if summary_facts.shape != contexts.shape:
        raise ValueError(
            f"summary facts {tuple(summary_facts.shape)} and contexts "
            f"{tuple(contexts.shape)} must have matching shapes"
        )
    return summary_facts.mean(dim=0), contexts.mean(dim=0)


def predict(summary_mean: Tensor, context_mean: Tensor, head: ClassifierHead) -> Tensor:
    """Per-error-type probabilities, each strictly inside (0, 1)."""
    return head(torch.cat([summary_mean, context_mean], dim=-1))


def decide(probabilities: Tensor, threshold: float = 0.5) -> LabelVector:
    """Threshold probabilities into a label vector; ties (p == threshold) count positive."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    probs = probabilities.detach()
    if probs.shape != (NUM_ERROR_TYPES,):
        raise ValueError(f"expected {NUM_ERROR_TYPES} probabilities, got shape {tuple(probs.shape)}")
    return LabelVector(tuple(bool(p >= threshold) for p in probs.tolist()))  # type: ignore[arg-type]
