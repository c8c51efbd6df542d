"""Promptable mask decoder with cue injection.

Box corners become sparse prompt tokens, the low-resolution mask prompt a
dense addend; a single mask token is decoded by a two-way transformer.
"""
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from phantom_insight.models.layers import Attention, LayerNorm2d, MLPBlock
from phantom_insight.utils.errors import InvalidArgumentError


@dataclass
class MaskPrediction:
    logits: torch.Tensor  # (B, S, S)
    probs: torch.Tensor  # (B, S, S), sigmoid of logits


class PositionEmbeddingRandom(nn.Module):
    """Random Fourier-feature positional encoding of normalized coordinates."""

    def __init__(self, num_pos_feats):
        super(PositionEmbeddingRandom, self).__init__()
        self.register_buffer("positional_encoding_gaussian_matrix", torch.randn((2, num_pos_feats)))

    def _pe_encoding(self, coords):
        coords = 2 * coords - 1
        coords = coords @ self.positional_encoding_gaussian_matrix.to(coords.dtype)
        coords = 2 * np.pi * coords
        return torch.cat([torch.sin(coords), torch.cos(coords)], dim=-1)

    def forward(self, size):
        h, w = size
        matrix = self.positional_encoding_gaussian_matrix
        grid = torch.ones((h, w), device=matrix.device, dtype=matrix.dtype)
        y_embed = (grid.cumsum(0) - 0.5) / h
        x_embed = (grid.cumsum(1) - 0.5) / w
        pe = self._pe_encoding(torch.stack([x_embed, y_embed], dim=-1))
        return pe.permute(2, 0, 1)

    def forward_with_coords(self, coords):
        return self._pe_encoding(coords)


class PromptEncoder(nn.Module):
    def __init__(self, embed_dim, grid_size, use_mask_prompt=True):
        super(PromptEncoder, self).__init__()
        self.embed_dim = embed_dim
        self.grid_size = grid_size
        self.use_mask_prompt = use_mask_prompt

        self.pe_layer = PositionEmbeddingRandom(embed_dim // 2)
        # Top-left and bottom-right corner types
        self.point_embeddings = nn.ModuleList([nn.Embedding(1, embed_dim) for _ in range(2)])

        self.mask_downscaling = nn.Sequential(
            nn.Conv2d(1, embed_dim // 4, kernel_size=3, padding=1),
            LayerNorm2d(embed_dim // 4),
            nn.GELU(),
            nn.Conv2d(embed_dim // 4, embed_dim, kernel_size=1),
        )
        self.no_mask_embed = nn.Embedding(1, embed_dim)

    def get_dense_pe(self):
        return self.pe_layer((self.grid_size, self.grid_size)).unsqueeze(0)

    def embed_boxes(self, boxes):
        coords = boxes.reshape(-1, 2, 2)
        emb = self.pe_layer.forward_with_coords(coords)
        corner_types = torch.cat([self.point_embeddings[0].weight, self.point_embeddings[1].weight], dim=0)
        return emb + corner_types.to(emb.dtype)

    def embed_masks(self, mask_logits):
        m = F.interpolate(mask_logits[:, None], size=(self.grid_size, self.grid_size), mode="bilinear",
                          align_corners=False)
        return self.mask_downscaling(m)

    def forward(self, boxes, mask_logits, batch_size):
        if boxes is not None:
            sparse = self.embed_boxes(boxes)
        else:
            weight = self.no_mask_embed.weight
            sparse = torch.empty((batch_size, 0, self.embed_dim), dtype=weight.dtype, device=weight.device)

        if mask_logits is not None and self.use_mask_prompt:
            dense = self.embed_masks(mask_logits)
        else:
            dense = self.no_mask_embed.weight.reshape(1, -1, 1, 1).expand(
                batch_size, -1, self.grid_size, self.grid_size
            )
        return sparse, dense


def inject_cue(features, cue):
    """Add a (B, C, d) cue, reshaped to a square grid and resized, onto (B, d, G, G) features."""
    b, c, d = cue.shape
    side = math.isqrt(c)
    if side * side != c:
        raise InvalidArgumentError(f"cue token count {c} is not a perfect square")
    if features.shape[1] != d:
        raise InvalidArgumentError(f"cue width {d} does not match feature width {features.shape[1]}")
    grid = cue.transpose(1, 2).reshape(b, d, side, side)
    grid = F.interpolate(grid, size=features.shape[-2:], mode="bilinear", align_corners=False)
    return features + grid


class TwoWayAttentionBlock(nn.Module):
    """Token self-attention, token->image, MLP, image->token."""

    def __init__(self, embedding_dim, num_heads, mlp_dim, downsample_rate=2, skip_first_layer_pe=False):
        super(TwoWayAttentionBlock, self).__init__()
        self.self_attn = Attention(embedding_dim, num_heads)
        self.norm1 = nn.LayerNorm(embedding_dim)
        self.cross_attn_token_to_image = Attention(embedding_dim, num_heads, downsample_rate=downsample_rate)
        self.norm2 = nn.LayerNorm(embedding_dim)
        self.mlp = MLPBlock(embedding_dim, mlp_dim, act=nn.ReLU)
        self.norm3 = nn.LayerNorm(embedding_dim)
        self.norm4 = nn.LayerNorm(embedding_dim)
        self.cross_attn_image_to_token = Attention(embedding_dim, num_heads, downsample_rate=downsample_rate)
        self.skip_first_layer_pe = skip_first_layer_pe

    def forward(self, queries, keys, query_pe, key_pe):
        if self.skip_first_layer_pe:
            queries = self.self_attn(queries, queries, queries)
        else:
            q = queries + query_pe
            queries = queries + self.self_attn(q, q, queries)
        queries = self.norm1(queries)

        q = queries + query_pe
        k = keys + key_pe
        queries = self.norm2(queries + self.cross_attn_token_to_image(q, k, keys))

        queries = self.norm3(queries + self.mlp(queries))

        q = queries + query_pe
        k = keys + key_pe
        keys = self.norm4(keys + self.cross_attn_image_to_token(k, q, queries))
        return queries, keys


class TwoWayTransformer(nn.Module):
    def __init__(self, depth, embedding_dim, num_heads, mlp_dim, downsample_rate=2):
        super(TwoWayTransformer, self).__init__()
        self.layers = nn.ModuleList(
            [
                TwoWayAttentionBlock(embedding_dim, num_heads, mlp_dim, downsample_rate, skip_first_layer_pe=(i == 0))
                for i in range(depth)
            ]
        )
        self.final_attn_token_to_image = Attention(embedding_dim, num_heads, downsample_rate=downsample_rate)
        self.norm_final_attn = nn.LayerNorm(embedding_dim)

    def forward(self, image_embedding, image_pe, point_embedding):
        image_embedding = image_embedding.flatten(2).permute(0, 2, 1)
        image_pe = image_pe.flatten(2).permute(0, 2, 1)

        queries, keys = point_embedding, image_embedding
        for layer in self.layers:
            queries, keys = layer(queries, keys, point_embedding, image_pe)

        q = queries + point_embedding
        k = keys + image_pe
        queries = self.norm_final_attn(queries + self.final_attn_token_to_image(q, k, keys))
        return queries, keys


class HyperMLP(nn.Module):
    def __init__(self, dim_in, hidden, dim_out, num_layers=3):
        super(HyperMLP, self).__init__()
        dims = [dim_in] + [hidden] * (num_layers - 1) + [dim_out]
        self.layers = nn.ModuleList([nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:])])

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class MaskDecoder(nn.Module):
    """Single-mask decoder: no multi-mask outputs and no IoU head."""

    def __init__(self, dim, depth, num_heads, image_size):
        super(MaskDecoder, self).__init__()
        self.image_size = image_size
        self.transformer = TwoWayTransformer(depth, dim, num_heads, mlp_dim=4 * dim)
        self.mask_token = nn.Embedding(1, dim)
        self.output_upscaling = nn.Sequential(
            nn.ConvTranspose2d(dim, dim // 4, kernel_size=2, stride=2),
            LayerNorm2d(dim // 4),
            nn.GELU(),
            nn.ConvTranspose2d(dim // 4, dim // 8, kernel_size=2, stride=2),
            nn.GELU(),
        )
        self.output_hypernetwork = HyperMLP(dim, dim, dim // 8)

    def forward(self, image_embeddings, image_pe, sparse, dense):
        b = image_embeddings.shape[0]
        tokens = torch.cat([self.mask_token.weight.unsqueeze(0).expand(b, -1, -1), sparse], dim=1)
        src = image_embeddings + dense
        pos_src = image_pe.expand(b, -1, -1, -1)
        _, c, h, w = src.shape

        hs, src = self.transformer(src, pos_src, tokens)
        src = src.transpose(1, 2).reshape(b, c, h, w)
        upscaled = self.output_upscaling(src)
        hyper_in = self.output_hypernetwork(hs[:, 0])

        b, c, h, w = upscaled.shape
        logits = (hyper_in.unsqueeze(1) @ upscaled.reshape(b, c, h * w)).reshape(b, 1, h, w)
        if (h, w) != (self.image_size, self.image_size):
            logits = F.interpolate(logits, size=(self.image_size, self.image_size), mode="bilinear",
                                   align_corners=False)
        return logits[:, 0]


def check_box(box):
    if box.shape[-1] != 4:
        raise InvalidArgumentError(f"box prompt needs 4 coordinates, got shape {tuple(box.shape)}")
    if not torch.isfinite(box).all() or (box < 0).any() or (box > 1).any():
        raise InvalidArgumentError("box prompt must lie in [0, 1]")
    if (box[..., 0] >= box[..., 2]).any() or (box[..., 1] >= box[..., 3]).any():
        raise InvalidArgumentError(f"malformed box prompt {box.tolist()}: need x1 < x2 and y1 < y2")


class PromptableSegmenter(nn.Module):
    """Prompt encoder plus one mask decoder shared by the fg and bg paths."""

    def __init__(self, dim, grid_size, image_size, decoder_depth, decoder_heads, use_mask_prompt=True,
                 use_cue_injection=True):
        super(PromptableSegmenter, self).__init__()
        self.use_cue_injection = use_cue_injection
        self.prompt_encoder = PromptEncoder(dim, grid_size, use_mask_prompt=use_mask_prompt)
        self.mask_decoder = MaskDecoder(dim, decoder_depth, decoder_heads, image_size)

    def inject(self, features, cue):
        return inject_cue(features, cue) if self.use_cue_injection else features

    def decode(self, features, mask_logits, box=None):
        sparse, dense = self.prompt_encoder(box, mask_logits, features.shape[0])
        logits = self.mask_decoder(features, self.prompt_encoder.get_dense_pe().to(features.dtype), sparse, dense)
        return MaskPrediction(logits=logits, probs=torch.sigmoid(logits))

    def segment_fg(self, features, mask_logits, box):
        check_box(box)
        return self.decode(features, mask_logits, box)

    def segment_bg(self, features, mask_logits):
        return self.decode(features, mask_logits, None)
