import logging
import math
import random

import pytest
import torch

from framefact.core import LabelVector
from framefact.training import (
    ClassWeights,
    NonFiniteLossError,
    TrainConfig,
    compute_class_weights,
    train,
    weighted_bce,
)
from test_model import small_setup


def labels_with(positives, total, error_index=0):
    out = []
    for i in range(total):
        bits = [False] * 4
        if i < positives:
            bits[error_index] = True
        bits[1] = i % 2 == 0  # keep another class mixed so it is non-degenerate
        out.append(LabelVector(tuple(bits)))
    return out


class TestComputeClassWeights:
    def test_ratio_of_positives_to_negatives(self):
        weights = compute_class_weights(labels_with(100, 500))
        assert weights.beta[0] == pytest.approx(100 / 400)

    def test_balanced_class_weighs_one(self):
        weights = compute_class_weights(labels_with(250, 500))
        assert weights.beta[0] == pytest.approx(1.0)

    def test_degenerate_class_guard(self, caplog):
        with caplog.at_level(logging.WARNING):
            weights = compute_class_weights(labels_with(0, 10))
        assert weights.beta[0] == 1.0
        assert any("0 positives" in r.message for r in caplog.records)

    def test_inverse_mode(self):
        weights = compute_class_weights(labels_with(100, 500), mode="inverse")
        assert weights.beta[0] == pytest.approx(4.0)

    def test_permutation_invariant(self):
        labels = labels_with(7, 30)
        shuffled = list(labels)
        random.Random(5).shuffle(shuffled)
        assert compute_class_weights(labels) == compute_class_weights(shuffled)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            compute_class_weights(labels_with(1, 2), mode="focal")


class TestWeightedBce:
    def test_positive_at_half_is_ln_two(self):
        loss = weighted_bce(torch.tensor([0.5]), torch.tensor([1.0]), torch.tensor([1.0]))
        assert float(loss) == pytest.approx(math.log(2), abs=1e-6)

    def test_negative_branch_is_unweighted(self):
        loss = weighted_bce(torch.tensor([0.5]), torch.tensor([0.0]), torch.tensor([7.0]))
        assert float(loss) == pytest.approx(math.log(2), abs=1e-6)

    def test_matches_per_term_loop_oracle(self):
        torch.manual_seed(0)
        probs = (torch.rand(4) * 0.98 + 0.01).double()
        target = torch.tensor([1.0, 0.0, 1.0, 0.0], dtype=torch.float64)
        beta = (torch.rand(4) * 2).double()
        loss = weighted_bce(probs, target, beta)
        expected = 0.0
        for i in range(4):
            p, y, b = float(probs[i]), float(target[i]), float(beta[i])
            expected -= b * y * math.log(p) + (1 - y) * math.log(1 - p)
        assert float(loss) == pytest.approx(expected, abs=1e-8)

    def test_accepts_label_vector_and_class_weights(self):
        loss = weighted_bce(
            torch.full((4,), 0.5),
            LabelVector((True, False, False, False)),
            ClassWeights((1.0, 1.0, 1.0, 1.0)),
        )
        assert float(loss) == pytest.approx(4 * math.log(2), abs=1e-6)

    def test_clamping_keeps_loss_finite_at_boundaries(self):
        loss = weighted_bce(
            torch.tensor([0.0, 1.0, 0.0, 1.0]),
            torch.tensor([1.0, 0.0, 0.0, 1.0]),
            torch.ones(4),
        )
        assert torch.isfinite(loss)

    def test_nonnegative(self):
        torch.manual_seed(1)
        for _ in range(20):
            loss = weighted_bce(torch.rand(4), torch.randint(0, 2, (4,)).float(), torch.rand(4))
            assert float(loss) >= 0.0

    @pytest.mark.parametrize("p", [0.2, 0.5, 0.8])
    def test_gradient_matches_finite_differences(self, p):
        beta = torch.tensor([1.7], dtype=torch.float64)
        target = torch.tensor([1.0], dtype=torch.float64)
        probs = torch.tensor([p], dtype=torch.float64, requires_grad=True)
        loss = weighted_bce(probs, target, beta)
        (grad,) = torch.autograd.grad(loss, probs)
        h = 1e-6
        up = float(weighted_bce(torch.tensor([p + h], dtype=torch.float64), target, beta))
        down = float(weighted_bce(torch.tensor([p - h], dtype=torch.float64), target, beta))
        numeric = (up - down) / (2 * h)
        assert abs(float(grad[0]) - numeric) / max(1.0, abs(numeric)) < 1e-5


class TestTrainConfig:
    def test_defaults_match_reference_recipe(self):
        config = TrainConfig()
        assert (config.epochs, config.batch_size, config.grad_accum_steps) == (40, 12, 2)
        assert config.learning_rate == pytest.approx(1e-5)
        assert config.threshold == 0.5
        assert config.weight_mode == "paper"

    def test_zero_learning_rate_allowed(self):
        TrainConfig(learning_rate=0.0)

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(threshold=1.5)


class TestTrainLoop:
    def test_zero_epochs_returns_initialized_model_with_one_log_entry(self, tmp_path):
        model, items, _ = small_setup(n=6)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        log = tmp_path / "log.jsonl"
        result = train(model, items[:4], items[4:], TrainConfig(epochs=0), log_path=log)
        assert len(result.history) == 1
        assert result.history[0].epoch == 0
        assert log.read_text().count("\n") == 1
        for key, value in result.checkpoint.state_dict.items():
            assert torch.equal(value, before[key])

    def test_identical_seed_gives_identical_training(self):
        results = []
        for _ in range(2):
            model, items, _ = small_setup(n=8, seed=21)
            config = TrainConfig(epochs=3, learning_rate=1e-3, batch_size=4,
                                 grad_accum_steps=2, seed=77)
            results.append(train(model, items[:6], items[6:], config))
        first, second = results
        assert [s.val_bacc for s in first.history] == [s.val_bacc for s in second.history]
        assert [s.train_loss for s in first.history] == [s.train_loss for s in second.history]
        for key in first.checkpoint.state_dict:
            assert torch.equal(first.checkpoint.state_dict[key], second.checkpoint.state_dict[key])

    def test_epoch_loss_is_sample_order_invariant_at_zero_learning_rate(self):
        model, items, _ = small_setup(n=8, seed=4)
        losses = []
        for seed in (1, 2):
            config = TrainConfig(epochs=1, learning_rate=0.0, batch_size=3,
                                 grad_accum_steps=1, seed=seed)
            result = train(model, items[:6], items[6:], config)
            losses.append(result.history[0].train_loss)
        assert losses[0] == pytest.approx(losses[1], abs=1e-6)

    def test_non_finite_loss_aborts_with_batch_id(self):
        model, items, _ = small_setup(n=4)
        with torch.no_grad():
            model.head.linear.bias.fill_(float("nan"))
        config = TrainConfig(epochs=1, batch_size=2, grad_accum_steps=1)
        with pytest.raises(NonFiniteLossError, match="epoch 1, batch 0"):
            train(model, items[:3], items[3:], config)

    def test_best_checkpoint_tracks_validation_bacc(self, tmp_path):
        model, items, _ = small_setup(n=10, seed=2)
        config = TrainConfig(epochs=4, learning_rate=2e-3, batch_size=4,
                             grad_accum_steps=1, seed=5)
        result = train(model, items[:7], items[7:], config, log_path=tmp_path / "log.jsonl")
        best = max(result.history, key=lambda s: s.val_bacc)
        assert result.checkpoint.val_bacc == pytest.approx(best.val_bacc)
        assert (tmp_path / "log.jsonl").read_text().count("\n") == 4

    def test_empty_split_rejected(self):
        model, items, _ = small_setup(n=4)
        with pytest.raises(ValueError):
            train(model, [], items, TrainConfig(epochs=1))
