import pytest
import torch

from phantom_insight.models.segmenter import PromptableSegmenter, check_box, inject_cue
from phantom_insight.utils.errors import InvalidArgumentError


def make_segmenter(**kwargs):
    return PromptableSegmenter(16, 4, 16, 2, 2, **kwargs).eval()


class TestInjection:
    def test_zero_cue(self):
        features = torch.randn(1, 16, 4, 4)
        assert torch.equal(inject_cue(features, torch.zeros(1, 4, 16)), features)

    def test_shape(self):
        features = torch.randn(2, 8, 16, 16)
        assert inject_cue(features, torch.randn(2, 256, 8)).shape == features.shape

    def test_non_square(self):
        with pytest.raises(InvalidArgumentError):
            inject_cue(torch.randn(1, 8, 4, 4), torch.randn(1, 5, 8))

    def test_width_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            inject_cue(torch.randn(1, 8, 4, 4), torch.randn(1, 4, 6))

    def test_disabled(self):
        segmenter = make_segmenter(use_cue_injection=False)
        features = torch.randn(1, 16, 4, 4)
        assert segmenter.inject(features, torch.randn(1, 4, 16)) is features


class TestSegment:
    def test_fg_output(self):
        segmenter = make_segmenter()
        features = torch.randn(1, 16, 4, 4)
        box = torch.tensor([[0.1, 0.2, 0.6, 0.7]])
        out = segmenter.segment_fg(features, torch.randn(1, 4, 4), box)
        assert out.probs.shape == (1, 16, 16)
        assert torch.all((out.probs >= 0) & (out.probs <= 1))

    def test_deterministic(self):
        segmenter = make_segmenter()
        features, mask = torch.randn(1, 16, 4, 4), torch.randn(1, 4, 4)
        box = torch.tensor([[0.1, 0.2, 0.6, 0.7]])
        a = segmenter.segment_fg(features, mask, box).logits
        b = segmenter.segment_fg(features, mask, box).logits
        assert torch.equal(a, b)

    def test_bg_shares_decoder(self):
        segmenter = make_segmenter()
        features, mask = torch.randn(1, 16, 4, 4), torch.randn(1, 4, 4)
        assert torch.equal(segmenter.segment_bg(features, mask).logits, segmenter.decode(features, mask).logits)
        bg = segmenter.segment_bg(features, mask)
        assert bg.probs.shape == (1, 16, 16)

    def test_box_is_live(self):
        segmenter = make_segmenter()
        features, mask = torch.randn(1, 16, 4, 4), torch.randn(1, 4, 4)
        left = segmenter.segment_fg(features, mask, torch.tensor([[0.0, 0.2, 0.4, 0.6]])).probs
        right = segmenter.segment_fg(features, mask, torch.tensor([[0.5, 0.2, 0.9, 0.6]])).probs
        assert (left - right).abs().sum() > 0

    def test_no_box_gradient_from_bg(self):
        segmenter = make_segmenter()
        segmenter.segment_bg(torch.randn(1, 16, 4, 4), torch.randn(1, 4, 4)).logits.sum().backward()
        for embedding in segmenter.prompt_encoder.point_embeddings:
            assert embedding.weight.grad is None

    def test_mask_prompt_disabled(self):
        segmenter = make_segmenter(use_mask_prompt=False)
        features = torch.randn(1, 16, 4, 4)
        a = segmenter.segment_bg(features, torch.randn(1, 4, 4)).logits
        b = segmenter.segment_bg(features, torch.randn(1, 4, 4)).logits
        assert torch.equal(a, b)

    @pytest.mark.parametrize("box", [[0.6, 0.2, 0.4, 0.7], [0.1, 0.2, 0.6, 1.5], [0.1, 0.5, 0.6, 0.5]])
    def test_malformed_box(self, box):
        with pytest.raises(InvalidArgumentError):
            check_box(torch.tensor([box]))
