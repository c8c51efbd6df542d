import pytest
import torch
from hypothesis import given, settings, strategies as st

from phantom_insight.data_utils.data_stats import TASK_PROMPT
from phantom_insight.models.fusion import (
    NUM_BINS,
    VOCAB,
    FusionBackbone,
    SequenceLayout,
    TextBox,
    box_to_tokens,
    decode_text_box,
    fuse,
    tokenize_prompt,
)
from phantom_insight.utils.errors import CapacityError, FormatError, InvalidArgumentError


def peaked_logits(bins):
    logits = torch.zeros(4, len(VOCAB))
    for slot, k in enumerate(bins):
        logits[slot, VOCAB.bin_offset + k] = 10.0
    return logits


def small_backbone(**kwargs):
    return FusionBackbone(16, 3, 2, 256, **kwargs).eval()


class TestVocabulary:
    def test_size(self):
        assert len(VOCAB) == 6 + 96 + NUM_BINS

    def test_task_prompt(self):
        ids = tokenize_prompt(TASK_PROMPT)
        assert ids == tokenize_prompt(TASK_PROMPT)
        assert len(ids) == len(TASK_PROMPT)
        assert VOCAB.detokenize(ids) == TASK_PROMPT

    @settings(max_examples=50)
    @given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126), min_size=1))
    def test_round_trip(self, text):
        assert VOCAB.detokenize(VOCAB.tokenize(text)) == text

    def test_unknown_character(self):
        assert VOCAB.tokenize("é") == [VOCAB["<unk>"]]

    def test_empty_prompt(self):
        with pytest.raises(InvalidArgumentError):
            VOCAB.tokenize("")

    def test_codes_check(self):
        VOCAB.check_codes(VOCAB.codes())
        with pytest.raises(FormatError):
            VOCAB.check_codes(VOCAB.codes()[:-1])


class TestBoxCodec:
    def test_formatting(self):
        box = decode_text_box(peaked_logits([334, 124, 453, 254]))
        assert box.format() == "[0.3345, 0.1245, 0.4535, 0.2545]"

    def test_extreme_bins(self):
        assert decode_text_box(peaked_logits([0, 0, 999, 999])).format() == "[0.0005, 0.0005, 0.9995, 0.9995]"

    def test_swapped(self):
        box = decode_text_box(peaked_logits([600, 100, 200, 300]))
        assert box.coords == pytest.approx((0.2005, 0.1005, 0.6005, 0.3005))

    def test_restricted_to_bins(self):
        logits = peaked_logits([1, 2, 3, 4])
        logits[:, VOCAB["<eos>"]] = 100.0
        assert decode_text_box(logits).coords == pytest.approx((0.0015, 0.0025, 0.0035, 0.0045))

    def test_collapsed_box(self):
        box = decode_text_box(peaked_logits([0, 7, 0, 7]))
        assert box.coords == pytest.approx((0.00025, 0.00725, 0.00075, 0.00775))
        bins = [i - VOCAB.bin_offset for i in box_to_tokens([0.0, 0.0, 0.0, 0.0])]
        decoded = decode_text_box(peaked_logits(bins))
        assert all(abs(c) < 1e-3 for c in decoded.coords)
        assert decoded.coords[0] < decoded.coords[2]

    def test_idempotent(self):
        logits = torch.randn(4, len(VOCAB))
        assert decode_text_box(logits) == decode_text_box(logits)

    def test_bins(self):
        assert box_to_tokens([0.5, 1.0, 0.0, 0.9999]) == [
            VOCAB.bin_offset + 500, VOCAB.bin_offset + 999, VOCAB.bin_offset, VOCAB.bin_offset + 999
        ]

    @settings(max_examples=100)
    @given(st.lists(st.floats(0.0, 1.0), min_size=4, max_size=4))
    def test_quantization_bound(self, coords):
        x1, x2 = sorted(coords[0::2])
        y1, y2 = sorted(coords[1::2])
        box = [x1, y1, x2, y2]
        bins = [i - VOCAB.bin_offset for i in box_to_tokens(box)]
        decoded = decode_text_box(peaked_logits(bins))
        assert all(abs(a - b) < 1e-3 for a, b in zip(decoded.coords, box))

    def test_text_box_tensor(self):
        assert TextBox((0.1, 0.2, 0.3, 0.4)).to_tensor().tolist() == pytest.approx([0.1, 0.2, 0.3, 0.4])


class TestBackbone:
    def test_extracted_layers(self):
        assert FusionBackbone(16, 5, 2, 64).extracted_layers == [3, 4, 5]

    def test_shapes(self):
        model = small_backbone()
        visual = torch.randn(1, 3 * 4, 16)
        spans = [("frame_t", 4), ("flow", 4), ("patch_0", 4)]
        out = model(visual, spans, tokenize_prompt("find it"), torch.zeros(1, 3, dtype=torch.long))
        assert len(out.hidden_states) == 3
        assert all(h.shape == (1, 12, 16) for h in out.hidden_states)
        assert out.location_logits.shape == (1, 4, len(VOCAB))
        assert out.layout.span("flow").slice == slice(4, 8)
        assert out.layout.span("answer").length == 4

    def test_causality(self):
        model = small_backbone()
        visual = torch.randn(1, 8, 16)
        spans = [("frame_t", 8)]
        coords = torch.tensor([[VOCAB.bin_offset + 3] * 3])
        a = model(visual, spans, tokenize_prompt("please locate them."), coords)
        b = model(visual, spans, tokenize_prompt("something else here!"), coords)
        for ha, hb in zip(a.hidden_states, b.hidden_states):
            assert torch.allclose(ha, hb, atol=1e-6)

    def test_capacity(self):
        model = FusionBackbone(16, 3, 2, 32)
        with pytest.raises(CapacityError):
            model(torch.randn(1, 30, 16), [("frame_t", 30)], tokenize_prompt("abc"), torch.zeros(1, 3, dtype=torch.long))

    def test_channel_fusion(self):
        model = small_backbone(channel_fusion_images=3)
        visual, spans = model.merge_visual(torch.randn(1, 3, 4, 16), ["a", "b", "c"])
        assert visual.shape == (1, 4, 16)
        assert spans == [("visual_fused", 4)]

    def test_sequence_merge(self):
        model = small_backbone()
        tokens = torch.randn(1, 2, 4, 16)
        visual, spans = model.merge_visual(tokens, ["frame_t", "flow"])
        assert torch.equal(visual[0, 4:], tokens[0, 1])
        assert spans == [("frame_t", 4), ("flow", 4)]

    def test_generate(self):
        model = small_backbone()
        outputs, box = model.generate(torch.randn(1, 8, 16), [("frame_t", 8)], tokenize_prompt("go"))
        assert len(box.coords) == 4
        assert box.coords[0] < box.coords[2] and box.coords[1] < box.coords[3]
        assert outputs.layout.span("answer").length == 4

    def test_fuse_helper(self):
        model = small_backbone()
        layout = SequenceLayout([("frame_t", 4)], 2, 3)
        out = fuse(model, layout, torch.randn(1, layout.length, 16))
        assert out.location_logits.shape == (1, 4, len(VOCAB))
