"""Foreground token scoring and multi-cue generation."""
import math
from dataclasses import dataclass
from typing import List, Optional

import torch
from torch import nn

from phantom_insight.core.pooling import adaptive_pool_seq
from phantom_insight.utils.errors import InvalidArgumentError

# One coordinate bin
MIN_BOX_EXTENT = 1e-3


class ScoringNet(nn.Module):
    def __init__(self, dim, hidden):
        super(ScoringNet, self).__init__()
        self.block = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, 1))

    def forward(self, tokens):
        return torch.sigmoid(self.block(tokens)).squeeze(-1)


def score_tokens(net, tokens):
    return net(tokens)


def aggregate_fg_bg(hidden_states, scores, target):
    """Score-weighted pooling of every extracted layer into fg and bg aggregates.

    f_fg = sum_l pool(s_l * f_l), f_bg = sum_l pool((1 - s_l) * f_l).
    """
    if len(hidden_states) != len(scores):
        raise InvalidArgumentError(f"got {len(hidden_states)} layers but {len(scores)} score vectors")
    f_fg, f_bg = 0.0, 0.0
    for tokens, s in zip(hidden_states, scores):
        if tokens.shape[:-1] != s.shape:
            raise InvalidArgumentError(f"scores of shape {tuple(s.shape)} do not match tokens {tuple(tokens.shape)}")
        if target > tokens.shape[-2]:
            raise InvalidArgumentError(f"pool target {target} exceeds the {tokens.shape[-2]} visual tokens")
        s = s.unsqueeze(-1)
        f_fg = f_fg + adaptive_pool_seq(s * tokens, target)
        f_bg = f_bg + adaptive_pool_seq((1.0 - s) * tokens, target)
    return f_fg, f_bg


class MaskPromptDecoder(nn.Module):
    """C tokens -> one channel per token -> linear map to G_m x G_m logits."""

    def __init__(self, dim, num_tokens, mask_size):
        super(MaskPromptDecoder, self).__init__()
        self.mask_size = mask_size
        self.token_proj = nn.Linear(dim, 1)
        self.grid_proj = nn.Linear(num_tokens, mask_size * mask_size)

    def forward(self, tokens):
        per_token = self.token_proj(tokens).squeeze(-1)
        logits = self.grid_proj(per_token)
        return logits.reshape(*logits.shape[:-1], self.mask_size, self.mask_size)


class BoxDecoder(nn.Module):
    def __init__(self, dim, num_tokens, hidden):
        super(BoxDecoder, self).__init__()
        self.block = nn.Sequential(nn.Linear(num_tokens * dim, hidden), nn.ReLU(), nn.Linear(hidden, 4))

    def forward(self, tokens):
        return torch.sigmoid(self.block(tokens.flatten(-2)))


def order_box(box):
    """Sort each coordinate pair so that x1 <= x2 and y1 <= y2."""
    x = torch.stack([box[..., 0], box[..., 2]], dim=-1)
    y = torch.stack([box[..., 1], box[..., 3]], dim=-1)
    return torch.stack([x.min(-1).values, y.min(-1).values, x.max(-1).values, y.max(-1).values], dim=-1)


def widen_box(box, min_extent=MIN_BOX_EXTENT):
    """Grow each side of an ordered box to at least min_extent, staying inside [0, 1]."""
    x1, y1, x2, y2 = box.unbind(-1)
    x2 = torch.clamp(torch.maximum(x2, x1 + min_extent), max=1.0)
    y2 = torch.clamp(torch.maximum(y2, y1 + min_extent), max=1.0)
    x1 = torch.minimum(x1, x2 - min_extent)
    y1 = torch.minimum(y1, y2 - min_extent)
    return torch.stack([x1, y1, x2, y2], dim=-1)


@dataclass
class CueSet:
    fg_cue: torch.Tensor  # (B, C, d_s)
    fg_mask: torch.Tensor  # (B, G_m, G_m) logits
    fg_box: torch.Tensor  # (B, 4) in [0, 1]
    bg_cue: Optional[torch.Tensor] = None
    bg_mask: Optional[torch.Tensor] = None


class CueGenerator(nn.Module):
    """MLP_cue, Decoder_M and Decoder_B; the first two are shared by fg and bg."""

    def __init__(self, dim, seg_dim, cue_tokens, box_tokens, mask_size, hidden):
        super(CueGenerator, self).__init__()
        if math.isqrt(cue_tokens) ** 2 != cue_tokens:
            raise InvalidArgumentError(f"cue token count must be a perfect square, got {cue_tokens}")
        self.cue_tokens = cue_tokens
        self.box_tokens = box_tokens
        self.mlp_cue = nn.Sequential(nn.Linear(dim, seg_dim), nn.GELU(), nn.Linear(seg_dim, seg_dim))
        self.decoder_m = MaskPromptDecoder(dim, cue_tokens, mask_size)
        self.decoder_b = BoxDecoder(dim, box_tokens, hidden)

    def gen_bg_cues(self, f_bg):
        long = adaptive_pool_seq(f_bg, self.cue_tokens)
        return self.mlp_cue(long), self.decoder_m(long)

    def gen_fg_cues(self, f_fg):
        cue, mask = self.gen_bg_cues(f_fg)
        box = self.decoder_b(adaptive_pool_seq(f_fg, self.box_tokens))
        return cue, mask, box


class CueHead(nn.Module):
    def __init__(self, dim, seg_dim, pool_tokens, cue_tokens, box_tokens, mask_size, hidden):
        super(CueHead, self).__init__()
        self.pool_tokens = pool_tokens
        self.scoring = ScoringNet(dim, hidden)
        self.generator = CueGenerator(dim, seg_dim, cue_tokens, box_tokens, mask_size, hidden)

    def forward(self, hidden_states: List[torch.Tensor], with_background=True):
        scores = [self.scoring(h) for h in hidden_states]
        f_fg, f_bg = aggregate_fg_bg(hidden_states, scores, self.pool_tokens)
        fg_cue, fg_mask, fg_box = self.generator.gen_fg_cues(f_fg)
        cues = CueSet(fg_cue=fg_cue, fg_mask=fg_mask, fg_box=fg_box)
        if with_background:
            cues.bg_cue, cues.bg_mask = self.generator.gen_bg_cues(f_bg)
        return cues, scores
