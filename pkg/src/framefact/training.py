"""Training loop: class-ratio-weighted BCE, gradient accumulation, best-BACC selection.

The positive-class weight for each error type is the ratio of positive to
negative training samples of that type (a config switch flips it to the
conventional inverse ratio). The loss is the negated sum of the per-type
weighted log-likelihood terms so that gradient descent minimizes it.
"""

from __future__ import annotations

import copy
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import torch
from torch import Tensor

from .core import ErrorType, LabelVector
from .model import Checkpoint, FactErrorModel, PreparedSample
from . import evaluation

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7  # keeps log() finite at the sigmoid saturation boundary

WEIGHT_MODES = ("paper", "inverse")


class NonFiniteLossError(RuntimeError):
    """Raised when a training batch produces a NaN/inf loss."""

    def __init__(self, batch_index: int, epoch: int):
        super().__init__(f"non-finite loss in epoch {epoch}, batch {batch_index}")
        self.batch_index = batch_index
        self.epoch = epoch


@dataclass(frozen=True)
class ClassWeights:
    """Per-error-type positive-sample loss weights, frozen from the training split."""

    beta: tuple[float, float, float, float]
    mode: str = "paper"

    def __post_init__(self) -> None:
        if any(b < 0 for b in self.beta):
            raise ValueError("class weights must be nonnegative")

    def as_tensor(self) -> Tensor:
        return torch.tensor(self.beta, dtype=torch.get_default_dtype())


def compute_class_weights(
    train_labels: Sequence[LabelVector], mode: str = "paper"
) -> ClassWeights:
    """positives/negatives per class ("paper" mode) or its inverse.

    A class with no positives or no negatives in the split gets weight 1 and a
    logged warning rather than a degenerate ratio.
    """
    if mode not in WEIGHT_MODES:
        raise ValueError(f"weight mode must be one of {WEIGHT_MODES}, got {mode!r}")
    if not train_labels:
        raise ValueError("cannot compute class weights from an empty label list")
    beta = []
    for error_type in ErrorType:
        positives = sum(1 for labels in train_labels if labels[error_type])
        negatives = len(train_labels) - positives
        if positives == 0 or negatives == 0:
            logger.warning(
                "class %s has %d positives / %d negatives; using weight 1.0",
                error_type.name, positives, negatives,
            )
            beta.append(1.0)
        elif mode == "paper":
            beta.append(positives / negatives)
        else:
            beta.append(negatives / positives)
    return ClassWeights(tuple(beta), mode=mode)  # type: ignore[arg-type]


def weighted_bce(
    probabilities: Tensor, target: LabelVector | Tensor, weights: ClassWeights | Tensor
) -> Tensor:
    """-sum_i [beta_i y*_i log p_i + (1 - y*_i) log(1 - p_i)], probabilities clamped."""
    if isinstance(target, LabelVector):
        target = torch.tensor([float(b) for b in target], dtype=probabilities.dtype)
    beta = weights.as_tensor() if isinstance(weights, ClassWeights) else weights
    beta = beta.to(probabilities.dtype)
    p = probabilities.clamp(PROB_EPS, 1.0 - PROB_EPS)
    per_class = beta * target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p)
    return -per_class.sum()


@dataclass
class TrainConfig:
    """Hyperparameters; defaults are the reference training recipe."""

    epochs: int = 40
    learning_rate: float = 1e-5
    batch_size: int = 12
    grad_accum_steps: int = 2
    seed: int = 13
    threshold: float = 0.5
    top_k: int = 5
    weight_mode: str = "paper"

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate < 0:  # 0 is allowed: it turns training into pure evaluation
            raise ValueError("learning_rate must be nonnegative")
        for name in ("batch_size", "grad_accum_steps", "top_k"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_f1: float
    val_bacc: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "train_loss": self.train_loss,
                "val_f1": self.val_f1,
                "val_bacc": self.val_bacc,
            }
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochStats] = field(default_factory=list)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    torch.manual_seed(seed)


def evaluate_split(
    model: FactErrorModel, items: Sequence[PreparedSample], threshold: float
) -> tuple[float, float]:
    """(macro-F1, macro-BACC) of the model on a prepared split."""
    predictions = []
    golds = []
    for item in items:
        _, labels = model.predict_labels(item.prepared, threshold)
        predictions.append(labels)
        golds.append(item.sample.labels)
    return evaluation.macro_f1(predictions, golds), evaluation.macro_bacc(predictions, golds)


def train(
    model: FactErrorModel,
    train_items: Sequence[PreparedSample],
    val_items: Sequence[PreparedSample],
    config: TrainConfig,
    log_path: str | Path | None = None,
    class_weights: ClassWeights | None = None,
) -> TrainResult:
    """Train the model, returning the checkpoint with the best validation BACC.

    The optimizer steps once every grad_accum_steps micro-batches (Adam at the
    configured learning rate). Every epoch appends one JSON line of
    loss/F1/BACC to the log. With epochs == 0 the initialized model is
    evaluated once and returned as-is.
    """
    if not train_items:
        raise ValueError("training split is empty")
    if not val_items:
        raise ValueError("validation split is empty")
    seed_everything(config.seed)
    weights = class_weights or compute_class_weights(
        [item.sample.labels for item in train_items], config.weight_mode
    )
    beta = weights.as_tensor()
    optimizer = torch.optim.Adam(
        (p for p in model.parameters() if p.requires_grad), lr=config.learning_rate
    )
    shuffler = random.Random(config.seed)

    history: list[EpochStats] = []
    log_handle = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    best_state: dict | None = None
    best_bacc = -1.0
    best_epoch = 0
    try:
        if config.epochs == 0:
            val_f1, val_bacc = evaluate_split(model, val_items, config.threshold)
            stats = EpochStats(epoch=0, train_loss=float("nan"), val_f1=val_f1, val_bacc=val_bacc)
            history.append(stats)
            if log_handle:
                log_handle.write(stats.to_json() + "\n")
            best_state, best_bacc, best_epoch = copy.deepcopy(model.state_dict()), val_bacc, 0

        for epoch in range(1, config.epochs + 1):
            model.train()
            order = list(range(len(train_items)))
            shuffler.shuffle(order)
            epoch_loss = 0.0
            optimizer.zero_grad()
            batches = [
                order[i : i + config.batch_size]
                for i in range(0, len(order), config.batch_size)
            ]
            for batch_index, batch in enumerate(batches):
                batch_loss = torch.stack(
                    [
                        weighted_bce(model(train_items[i].prepared).probabilities,
                                     train_items[i].sample.labels, beta)
                        for i in batch
                    ]
                ).mean()
                if not torch.isfinite(batch_loss):
                    raise NonFiniteLossError(batch_index, epoch)
                (batch_loss / config.grad_accum_steps).backward()
                epoch_loss += float(batch_loss.detach()) * len(batch)
                if (batch_index + 1) % config.grad_accum_steps == 0 or batch_index == len(batches) - 1:
                    optimizer.step()
                    optimizer.zero_grad()

            val_f1, val_bacc = evaluate_split(model, val_items, config.threshold)
            stats = EpochStats(
                epoch=epoch,
                train_loss=epoch_loss / len(train_items),
                val_f1=val_f1,
                val_bacc=val_bacc,
            )
            history.append(stats)
            if log_handle:
                log_handle.write(stats.to_json() + "\n")
            if val_bacc > best_bacc:
                best_state, best_bacc, best_epoch = copy.deepcopy(model.state_dict()), val_bacc, epoch
    finally:
        if log_handle:
            log_handle.close()

    assert best_state is not None
    checkpoint = Checkpoint(
        config=model.config,
        state_dict=best_state,
        seed=config.seed,
        epoch=best_epoch,
        val_bacc=best_bacc,
    )
    return TrainResult(checkpoint=checkpoint, history=history)
