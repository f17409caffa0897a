import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from framefact.classifier import ClassifierHead, decide, fuse, predict
from framefact.core import LabelVector


class TestFuse:
    def test_single_row_is_identity(self):
        facts = torch.randn(1, 8)
        contexts = torch.randn(1, 8)
        f_mean, c_mean = fuse(facts, contexts)
        assert torch.equal(f_mean, facts[0])
        assert torch.equal(c_mean, contexts[0])

    def test_opposite_rows_cancel(self):
        v = torch.randn(8)
        f_mean, _ = fuse(torch.stack([v, -v]), torch.zeros(2, 8))
        assert torch.allclose(f_mean, torch.zeros(8), atol=1e-7)

    def test_matches_loop_sum_oracle(self):
        torch.manual_seed(0)
        facts = torch.randn(5, 8)
        contexts = torch.randn(5, 8)
        f_mean, c_mean = fuse(facts, contexts)
        expected_f = sum(facts[i] for i in range(5)) / 5
        expected_c = sum(contexts[i] for i in range(5)) / 5
        assert torch.allclose(f_mean, expected_f, atol=1e-6)
        assert torch.allclose(c_mean, expected_c, atol=1e-6)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            fuse(torch.zeros(0, 8), torch.zeros(0, 8))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fuse(torch.zeros(2, 8), torch.zeros(3, 8))


class TestPredict:
    def test_zero_parameters_give_one_half(self):
        head = ClassifierHead(8)
        with torch.no_grad():
            head.linear.weight.zero_()
            head.linear.bias.zero_()
        probs = predict(torch.randn(8), torch.randn(8), head)
        assert torch.allclose(probs, torch.full((4,), 0.5))

    def test_large_bias_saturates_towards_one(self):
        head = ClassifierHead(8)
        with torch.no_grad():
            head.linear.weight.zero_()
            head.linear.bias.fill_(20.0)
        probs = predict(torch.randn(8), torch.randn(8), head)
        assert bool((probs > 0.999).all())

    def test_matches_affine_sigmoid_oracle(self):
        torch.manual_seed(1)
        head = ClassifierHead(8)
        summary_mean = torch.randn(8)
        context_mean = torch.randn(8)
        probs = predict(summary_mean, context_mean, head)
        stacked = torch.cat([summary_mean, context_mean])
        with torch.no_grad():
            for i in range(4):
                logit = float(head.linear.weight[i] @ stacked + head.linear.bias[i])
                assert abs(float(probs[i]) - 1.0 / (1.0 + math.exp(-logit))) < 1e-6

    def test_probabilities_strictly_inside_unit_interval(self):
        torch.manual_seed(2)
        head = ClassifierHead(8)
        probs = predict(torch.randn(8) * 5, torch.randn(8) * 5, head)
        assert bool((probs > 0).all()) and bool((probs < 1).all())

    def test_row_permutation_of_fused_inputs_is_invariant(self):
        torch.manual_seed(3)
        head = ClassifierHead(8)
        facts = torch.randn(4, 8)
        contexts = torch.randn(4, 8)
        perm = torch.tensor([2, 0, 3, 1])
        base = predict(*fuse(facts, contexts), head)
        permuted = predict(*fuse(facts[perm], contexts[perm]), head)
        assert torch.allclose(base, permuted, atol=1e-6)


class TestDecide:
    def test_threshold_comparison(self):
        probs = torch.tensor([0.6, 0.4, 0.5, 0.1])
        assert tuple(int(b) for b in decide(probs, 0.5)) == (1, 0, 1, 0)

    def test_all_below_threshold_is_no_error(self):
        assert decide(torch.full((4,), 0.49), 0.5).is_no_error

    def test_tie_counts_as_positive(self):
        assert decide(torch.tensor([0.5, 0.0, 0.0, 0.0]), 0.5)[0] is True  # noqa: E712

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            decide(torch.full((4,), 0.5), 1.0)

    @given(
        st.lists(st.floats(0.001, 0.999), min_size=4, max_size=4),
        st.integers(0, 3),
        st.floats(0.001, 0.2),
    )
    def test_monotone_in_each_probability(self, probs, index, bump):
        base = decide(torch.tensor(probs), 0.5)
        raised = list(probs)
        raised[index] = min(0.999, raised[index] + bump)
        after = decide(torch.tensor(raised), 0.5)
        for i in range(4):
            if i != index:
                assert base.bits[i] == after.bits[i]
            else:
                assert after.bits[i] or not base.bits[i]
