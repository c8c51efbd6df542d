from dataclasses import dataclass
from typing import List, Optional

import torch
from torch import nn

from phantom_insight.core.lora import apply_lora
from phantom_insight.data_utils.data_stats import CLUE_ROLES_DICT
from phantom_insight.models.cue_head import CueHead, CueSet, order_box, widen_box
from phantom_insight.models.encoders import SegmenterImageEncoder, TokenProjector, VisionEncoder
from phantom_insight.models.fusion import VOCAB, FusedOutputs, FusionBackbone, TextBox, tokenize_prompt
from phantom_insight.models.segmenter import MaskPrediction, PromptableSegmenter


@dataclass
class PipelineOutputs:
    fused: FusedOutputs
    cues: CueSet
    scores: List[torch.Tensor]
    fg: MaskPrediction
    bg: Optional[MaskPrediction]
    box_prompt: torch.Tensor  # the box actually fed to the segmenter
    text_box: Optional[TextBox] = None


def clue_names(roles, num_patches):
    names = []
    for role in roles:
        if role == "patches":
            names.extend(f"patch_{i}" for i in range(num_patches))
        else:
            names.append(role)
    return names


class PhantomInsight(nn.Module):
    """Clue encoder -> fusion backbone -> cue head -> promptable segmenter."""

    def __init__(self, config):
        super(PhantomInsight, self).__init__()
        self.config = config
        self.mode = config.mode
        self.roles = CLUE_ROLES_DICT[config.mode]
        self.names = clue_names(self.roles, config.num_patches)
        self.with_background = config.mode != "no-background"
        self.prompt_ids = tokenize_prompt(config.prompt)

        self.clue_encoder = VisionEncoder(
            config.image_size, config.encoder_patch, config.encoder_dim, config.encoder_depth, config.encoder_heads
        )
        self.projector = TokenProjector(config.encoder_dim, config.llm_dim)
        self.fusion = FusionBackbone(
            config.llm_dim,
            config.fusion_depth,
            config.fusion_heads,
            config.max_seq_len,
            hidden_state_norm=config.hidden_state_norm,
            channel_fusion_images=len(self.names) if config.mode == "fusion-channel" else None,
        )
        self.cue_head = CueHead(
            config.llm_dim,
            config.seg_dim,
            config.pool_tokens,
            config.cue_tokens,
            config.box_tokens,
            config.mask_prompt_size,
            config.scoring_hidden,
        )
        self.seg_encoder = SegmenterImageEncoder(
            config.image_size, config.seg_patch, config.seg_dim, config.seg_depth, config.seg_heads, frozen=True
        )
        self.segmenter = PromptableSegmenter(
            config.seg_dim,
            config.seg_grid,
            config.image_size,
            config.decoder_depth,
            config.decoder_heads,
            use_mask_prompt=config.use_mask_prompt,
            use_cue_injection=config.use_cue_injection,
        )
        self.register_buffer("vocab_codes", VOCAB.codes())

        self.num_adapted = 0
        for target in config.lora_targets:
            self.num_adapted += apply_lora(self.lora_target(target), config.lora_rank, alpha=config.lora_alpha)

    def lora_target(self, name):
        return {
            "fusion": self.fusion,
            "clue_encoder": self.clue_encoder,
            "mask_decoder": self.segmenter.mask_decoder,
        }[name]

    def clue_images(self, bundle):
        """(1, I, 3, S, S) clue stack for this model's mode, plus the current frame."""
        return bundle.select(self.roles)[None], bundle.frames[2][None]

    def encode_clues(self, images):
        b, n_images = images.shape[:2]
        tokens = self.clue_encoder(images.flatten(0, 1))
        tokens = self.projector(tokens)
        return self.fusion.merge_visual(tokens.reshape(b, n_images, *tokens.shape[1:]), self.names)

    def segment(self, fused, frame, box_prompt=None):
        cues, scores = self.cue_head(fused.hidden_states, with_background=self.with_background)
        if box_prompt is None:
            # Learned boxes may collapse; the segmenter needs x1 < x2 and y1 < y2
            box_prompt = widen_box(order_box(cues.fg_box))

        features = self.seg_encoder(frame)
        fg = self.segmenter.segment_fg(self.segmenter.inject(features, cues.fg_cue), cues.fg_mask, box_prompt)
        bg = None
        if self.with_background:
            bg = self.segmenter.segment_bg(self.segmenter.inject(features, cues.bg_cue), cues.bg_mask)
        return cues, scores, fg, bg, box_prompt

    def forward(self, images, frame, coord_ids):
        """Teacher-forced training pass; coord_ids (B, 3) hold the first three target bins."""
        visual, spans = self.encode_clues(images)
        fused = self.fusion(visual, spans, self.prompt_ids, coord_ids)
        cues, scores, fg, bg, box_prompt = self.segment(fused, frame)
        return PipelineOutputs(fused=fused, cues=cues, scores=scores, fg=fg, bg=bg, box_prompt=box_prompt)

    @torch.no_grad()
    def infer(self, images, frame):
        """Greedy-decode the textual box and use it in place of the learned box prompt."""
        visual, spans = self.encode_clues(images)
        fused, text_box = self.fusion.generate(visual, spans, self.prompt_ids)
        box_prompt = text_box.to_tensor(dtype=frame.dtype, device=frame.device)[None]
        cues, scores, fg, bg, box_prompt = self.segment(fused, frame, box_prompt=box_prompt)
        return PipelineOutputs(
            fused=fused, cues=cues, scores=scores, fg=fg, bg=bg, box_prompt=box_prompt, text_box=text_box
        )
