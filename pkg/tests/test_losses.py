import math

import pytest
import torch

from phantom_insight.models.fusion import VOCAB, box_to_tokens
from phantom_insight.utils.losses import (
    box_loss,
    downsample_mask,
    mask_loss,
    prompt_loss,
    seg_loss,
    seg_terms,
    text_loss,
)
from phantom_insight.utils.errors import InvalidArgumentError

GT = torch.tensor([[1.0, 1.0], [0.0, 0.0]])
BOX_A = torch.tensor([0.0, 0.0, 1.0, 1.0])
BOX_B = torch.tensor([0.0, 0.0, 0.5, 0.5])
HAND_SEG = math.log(2.0) + 0.4


class TestSegLoss:
    def test_hand_case(self):
        bce, dice = seg_terms(GT, torch.full((2, 2), 0.5))
        assert bce.item() == pytest.approx(math.log(2.0), abs=1e-4)
        assert dice.item() == pytest.approx(0.4, abs=1e-4)
        assert seg_loss(GT, torch.full((2, 2), 0.5)).item() == pytest.approx(1.0931, abs=1e-4)

    def test_perfect(self):
        assert seg_loss(GT, GT.clone()).item() < 1e-3

    def test_empty(self):
        bce, dice = seg_terms(torch.zeros(4, 4), torch.zeros(4, 4))
        assert bce.item() < 1e-5 and dice.item() < 1e-5

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            seg_loss(GT, torch.zeros(3, 3))


class TestBoxLoss:
    def test_identical(self):
        assert box_loss(BOX_A, BOX_A.clone()).item() == pytest.approx(0.0, abs=1e-6)

    def test_hand_case(self):
        assert box_loss(BOX_A, BOX_B).item() == pytest.approx(1.0, abs=1e-4)

    def test_disjoint(self):
        gt = torch.tensor([0.0, 0.0, 0.2, 0.2])
        pred = torch.tensor([0.5, 0.5, 0.9, 0.9])
        l1 = (gt - pred).abs().mean().item()
        assert box_loss(gt, pred).item() - l1 > 1.0


class TestTextLoss:
    def test_uniform(self):
        targets = torch.tensor([box_to_tokens([0.1, 0.2, 0.3, 0.4])])
        loss = text_loss(targets, torch.zeros(1, 4, len(VOCAB)))
        assert loss.item() == pytest.approx(math.log(1102), abs=1e-4)
        assert loss.item() == pytest.approx(7.0049, abs=1e-4)

    def test_peaked(self):
        targets = torch.tensor([box_to_tokens([0.1, 0.2, 0.3, 0.4])])
        logits = torch.zeros(1, 4, len(VOCAB))
        logits[0, torch.arange(4), targets[0]] = 50.0
        assert text_loss(targets, logits).item() < 1e-6

    def test_permutation(self):
        targets = torch.tensor([box_to_tokens([0.1, 0.2, 0.3, 0.4])])
        logits = torch.randn(1, 4, len(VOCAB))
        order = torch.tensor([2, 0, 3, 1])
        a = text_loss(targets, logits)
        b = text_loss(targets[:, order], logits[:, order])
        assert a.item() == pytest.approx(b.item(), abs=1e-6)

    def test_out_of_vocab(self):
        with pytest.raises(InvalidArgumentError):
            text_loss(torch.tensor([[len(VOCAB)] * 4]), torch.zeros(1, 4, len(VOCAB)))


class TestPromptLoss:
    def test_hand_case(self):
        zeros = torch.zeros(2, 2)
        loss = prompt_loss(BOX_A, BOX_B, GT, zeros, 1.0 - GT, zeros)
        assert loss.item() == pytest.approx(1.0 + 2 * HAND_SEG, abs=1e-4)

    def test_component_sum(self):
        fg_logits, bg_logits = torch.randn(2, 2), torch.randn(2, 2)
        loss = prompt_loss(BOX_A, BOX_B, GT, fg_logits, 1.0 - GT, bg_logits)
        expected = (
            box_loss(BOX_A, BOX_B)
            + seg_loss(GT, torch.sigmoid(fg_logits))
            + seg_loss(1.0 - GT, torch.sigmoid(bg_logits))
        )
        assert loss.item() == pytest.approx(expected.item(), abs=1e-6)

    def test_perfect(self):
        big = 30.0 * (2.0 * GT - 1.0)
        assert prompt_loss(BOX_A, BOX_A, GT, big, 1.0 - GT, -big).item() < 1e-3

    def test_downsample(self):
        mask = torch.zeros(8, 8)
        mask[:4, :6] = 1.0
        small = downsample_mask(mask, 4)
        assert small.shape == (4, 4)
        assert small[:2, :3].all() and not small[2:].any()


class TestMaskLoss:
    def test_perfect_complement(self):
        fg = GT.clone()
        assert mask_loss(GT, fg, 1.0 - GT, 1.0 - fg).item() < 1e-3

    def test_component_sum(self):
        fg, bg = torch.rand(2, 2), torch.rand(2, 2)
        expected = seg_loss(GT, fg) + seg_loss(1.0 - GT, bg)
        assert mask_loss(GT, fg, 1.0 - GT, bg).item() == pytest.approx(expected.item(), abs=1e-6)

    def test_foreground_only(self):
        fg = torch.rand(2, 2)
        assert torch.equal(mask_loss(GT, fg), seg_loss(GT, fg))
