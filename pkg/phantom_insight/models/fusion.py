"""Causal fusion backbone: vocabulary, sequence layout, fusion and box decoding."""
import math
from dataclasses import dataclass
from decimal import Decimal
from typing import List, Tuple

import torch
from torch import nn

from phantom_insight.models.layers import TransformerBlock
from phantom_insight.utils.errors import CapacityError, FormatError, InvalidArgumentError

SPECIAL_TOKENS = ["<bos>", "<eos>", "<pad>", "<unk>", "<box>", "</box>"]
CHARACTERS = [chr(c) for c in range(32, 127)] + ["\n"]
NUM_BINS = 1000
NUM_EXTRACTED_LAYERS = 3
ANSWER_SLOTS = 4


class Vocabulary(object):
    """Specials, then printable characters, then coordinate bins <c000>..<c999>."""

    def __init__(self):
        self.tokens = SPECIAL_TOKENS + CHARACTERS + [f"<c{k:03d}>" for k in range(NUM_BINS)]
        self.ids = {token: i for i, token in enumerate(self.tokens)}
        self.char_offset = len(SPECIAL_TOKENS)
        self.bin_offset = len(SPECIAL_TOKENS) + len(CHARACTERS)

    def __len__(self):
        return len(self.tokens)

    def __getitem__(self, token):
        return self.ids[token]

    def is_bin(self, token_id):
        return self.bin_offset <= token_id < self.bin_offset + NUM_BINS

    def tokenize(self, text):
        if not text:
            raise InvalidArgumentError("cannot tokenize an empty prompt")
        unk = self.ids["<unk>"]
        return [self.char_offset + CHARACTERS.index(ch) if ch in CHARACTERS else unk for ch in text]

    def detokenize(self, ids):
        return "".join(self.tokens[int(i)] for i in ids)

    def codes(self):
        """Float32-exact code per id: -(index + 1) for specials, ord for characters, 2^20 + k for bins."""
        codes = [-(i + 1) for i in range(len(SPECIAL_TOKENS))]
        codes += [ord(ch) for ch in CHARACTERS]
        codes += [2 ** 20 + k for k in range(NUM_BINS)]
        return torch.tensor(codes, dtype=torch.float32)

    def check_codes(self, stored):
        if stored.shape != (len(self),) or not torch.equal(stored.to(torch.float32), self.codes()):
            raise FormatError("checkpoint vocabulary does not match this build")


VOCAB = Vocabulary()


def tokenize_prompt(text):
    return VOCAB.tokenize(text)


@dataclass
class Span:
    name: str
    start: int
    length: int

    @property
    def stop(self):
        return self.start + self.length

    @property
    def slice(self):
        return slice(self.start, self.stop)


class SequenceLayout(object):
    """Ordered spans: visual clues, <bos>, prompt, then the box-answer slots.

    The answer span starts at <box> and covers the positions whose logits
    predict the four coordinate bins.
    """

    def __init__(self, visual_spans, prompt_length, num_answer_tokens):
        self.spans = []
        cursor = 0
        for name, length in visual_spans:
            self.spans.append(Span(name, cursor, length))
            cursor += length
        self.num_visual = cursor
        for name, length in [("bos", 1), ("prompt", prompt_length), ("answer", 1 + num_answer_tokens)]:
            self.spans.append(Span(name, cursor, length))
            cursor += length
        self.length = cursor

    def span(self, name):
        for span in self.spans:
            if span.name == name:
                return span
        raise KeyError(name)

    @property
    def visual_names(self):
        return [s.name for s in self.spans[: len(self.spans) - 3]]


@dataclass
class FusedOutputs:
    hidden_states: List[torch.Tensor]  # per extracted layer, (B, N_visual, d)
    location_logits: torch.Tensor  # (B, 4, V)
    layout: SequenceLayout


@dataclass
class TextBox:
    coords: Tuple[float, float, float, float]

    def format(self):
        # Shortest repr first so bin centres such as 0.3345 print unrounded
        return "[" + ", ".join(f"{Decimal(repr(float(c))):.4f}" for c in self.coords) + "]"

    def to_tensor(self, dtype=torch.float32, device=None):
        return torch.tensor(self.coords, dtype=dtype, device=device)


def _widen(lo, hi):
    # Collapsed sides take the middle half of their bin
    if hi - lo >= 0.5 / NUM_BINS:
        return lo, hi
    k = min(int(math.floor(lo * NUM_BINS)), NUM_BINS - 1)
    return (k + 0.25) / NUM_BINS, (k + 0.75) / NUM_BINS


def normalize_box(x1, y1, x2, y2):
    x1, x2 = sorted((min(max(x1, 0.0), 1.0), min(max(x2, 0.0), 1.0)))
    y1, y2 = sorted((min(max(y1, 0.0), 1.0), min(max(y2, 0.0), 1.0)))
    x1, x2 = _widen(x1, x2)
    y1, y2 = _widen(y1, y2)
    return x1, y1, x2, y2


def decode_text_box(location_logits):
    """Greedy bin decode of (4, V) logits into a normalized TextBox."""
    bins = location_logits[..., VOCAB.bin_offset:VOCAB.bin_offset + NUM_BINS].argmax(dim=-1)
    values = [(int(k) + 0.5) / NUM_BINS for k in bins.reshape(-1)[:4]]
    return TextBox(coords=normalize_box(*values))


def box_to_tokens(box):
    coords = box.coords if isinstance(box, TextBox) else [float(c) for c in box]
    ids = []
    for c in coords:
        c = min(max(c, 0.0), 1.0)
        ids.append(min(int(math.floor(c * NUM_BINS)), NUM_BINS - 1) + VOCAB.bin_offset)
    return ids


class FusionBackbone(nn.Module):
    """Causal pre-norm transformer over [visual tokens, <bos>, prompt, <box>, coordinates]."""

    def __init__(self, dim, depth, num_heads, max_seq_len, hidden_state_norm=False,
                 channel_fusion_images=None):
        super(FusionBackbone, self).__init__()
        if depth < NUM_EXTRACTED_LAYERS:
            raise InvalidArgumentError(f"fusion depth must be at least {NUM_EXTRACTED_LAYERS}, got {depth}")
        self.dim = dim
        self.depth = depth
        self.max_seq_len = max_seq_len
        self.hidden_state_norm = hidden_state_norm
        self.extracted_layers = list(range(depth - NUM_EXTRACTED_LAYERS + 1, depth + 1))

        self.token_embed = nn.Embedding(len(VOCAB), dim)
        self.pos_embed = nn.Parameter(torch.randn(max_seq_len, dim) * 0.02)
        self.blocks = nn.ModuleList([TransformerBlock(dim, num_heads, causal=True) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim)
        self.lm_head = nn.Linear(dim, len(VOCAB))

        # Feature-dimension concatenation of the clue images (fusion-channel ablation)
        self.channel_fusion_images = channel_fusion_images
        if channel_fusion_images is not None:
            self.channel_proj = nn.Linear(channel_fusion_images * dim, dim)

    def merge_visual(self, per_image_tokens, names):
        """(B, I, N, d) clue tokens -> (B, N_visual, d) and their spans."""
        b, n_images, n, d = per_image_tokens.shape
        if self.channel_fusion_images is not None:
            merged = per_image_tokens.permute(0, 2, 1, 3).reshape(b, n, n_images * d)
            return self.channel_proj(merged), [("visual_fused", n)]
        return per_image_tokens.reshape(b, n_images * n, d), [(name, n) for name in names]

    def embed_sequence(self, visual, visual_spans, prompt_ids, coord_ids):
        """Assemble embeddings for visual tokens (B, N_v, d), prompt ids and <= 3 coordinate ids (B, k)."""
        b = visual.shape[0]
        device = visual.device
        prompt = torch.tensor([VOCAB["<bos>"]] + list(prompt_ids) + [VOCAB["<box>"]], device=device)
        text_ids = torch.cat([prompt.expand(b, -1), coord_ids.to(device).long()], dim=1)
        layout = SequenceLayout(visual_spans, len(prompt_ids), coord_ids.shape[1])
        if layout.length > self.max_seq_len:
            raise CapacityError(f"sequence of {layout.length} tokens exceeds the maximum of {self.max_seq_len}")
        return torch.cat([visual, self.token_embed(text_ids)], dim=1), layout

    def fuse(self, embeddings, layout):
        x = embeddings + self.pos_embed[: embeddings.shape[1]]
        hidden_states = []
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i + 1 in self.extracted_layers:
                h = x[:, : layout.num_visual]
                hidden_states.append(self.norm(h) if self.hidden_state_norm else h)
        answer = layout.span("answer")
        logits = self.lm_head(self.norm(x[:, answer.slice]))
        return FusedOutputs(hidden_states=hidden_states, location_logits=logits, layout=layout)

    def forward(self, visual, visual_spans, prompt_ids, coord_ids):
        """Teacher-forced pass; coord_ids (B, 3) are the first three target bins."""
        embeddings, layout = self.embed_sequence(visual, visual_spans, prompt_ids, coord_ids)
        return self.fuse(embeddings, layout)

    @torch.no_grad()
    def generate(self, visual, visual_spans, prompt_ids):
        """Greedy bin decoding; returns the outputs of the final pass and the decoded box."""
        b = visual.shape[0]
        coords = torch.zeros(b, 0, dtype=torch.long, device=visual.device)
        for _ in range(ANSWER_SLOTS - 1):
            outputs = self.forward(visual, visual_spans, prompt_ids, coords)
            step = outputs.location_logits[:, -1, VOCAB.bin_offset:VOCAB.bin_offset + NUM_BINS].argmax(dim=-1)
            coords = torch.cat([coords, (step + VOCAB.bin_offset)[:, None]], dim=1)
        outputs = self.forward(visual, visual_spans, prompt_ids, coords)
        return outputs, decode_text_box(outputs.location_logits[0])


def fuse(model, layout, embeddings):
    return model.fuse(embeddings, layout)
