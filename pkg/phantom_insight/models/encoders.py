import torch
from torch import nn
import torch.nn.functional as F

from phantom_insight.models.layers import TransformerBlock
from phantom_insight.utils.errors import InvalidArgumentError


class VisionEncoder(nn.Module):
    """ViT: linear patch embedding, learned positions, pre-norm blocks.

    Takes (B, 3, S, S) images and returns (B, (S // p)^2, d) tokens. When p
    does not divide S the trailing border pixels are dropped.
    """

    def __init__(self, image_size, patch_size, dim, depth, num_heads):
        super(VisionEncoder, self).__init__()
        self.image_size = image_size
        self.patch_size = patch_size
        self.dim = dim
        self.grid_size = image_size // patch_size
        self.num_tokens = self.grid_size ** 2

        self.patch_embed = nn.Linear(3 * patch_size * patch_size, dim)
        self.pos_embed = nn.Parameter(torch.randn(1, self.num_tokens, dim) * 0.02)
        self.blocks = nn.ModuleList([TransformerBlock(dim, num_heads) for _ in range(depth)])
        self.norm = nn.LayerNorm(dim)

    def check_input(self, images):
        if images.ndim != 4 or tuple(images.shape[1:]) != (3, self.image_size, self.image_size):
            raise InvalidArgumentError(
                f"encoder expects (B, 3, {self.image_size}, {self.image_size}) images, got {tuple(images.shape)}"
            )

    def forward(self, images):
        self.check_input(images)
        p = self.patch_size
        images = images[..., : self.grid_size * p, : self.grid_size * p]

        # (B, 3*p*p, N) -> (B, N, 3*p*p), row-major over the patch grid
        patches = F.unfold(images, kernel_size=p, stride=p).transpose(1, 2)
        x = self.patch_embed(patches) + self.pos_embed
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


def encode_image(encoder, frame):
    """Encode one (3, S, S) frame into an (N, d) token matrix."""
    if frame.ndim != 3:
        raise InvalidArgumentError(f"expected a single (3, S, S) frame, got shape {tuple(frame.shape)}")
    return encoder(frame[None])[0]


class TokenProjector(nn.Module):
    """Per-token two-layer GELU MLP from encoder width to fusion width."""

    def __init__(self, dim_in, dim_out):
        super(TokenProjector, self).__init__()
        self.dim_in = dim_in
        self.block = nn.Sequential(nn.Linear(dim_in, dim_out), nn.GELU(), nn.Linear(dim_out, dim_out))

    def forward(self, tokens):
        if tokens.shape[-1] != self.dim_in:
            raise InvalidArgumentError(f"projector expects width {self.dim_in}, got {tokens.shape[-1]}")
        return self.block(tokens)


def project_tokens(mlp, tokens):
    return mlp(tokens)


class SegmenterImageEncoder(nn.Module):
    """Frozen ViT producing a (B, d_s, G, G) feature grid, G = S // p_s."""

    def __init__(self, image_size, patch_size, dim, depth, num_heads, frozen=True):
        super(SegmenterImageEncoder, self).__init__()
        self.vit = VisionEncoder(image_size, patch_size, dim, depth, num_heads)
        self.grid_size = self.vit.grid_size
        self.dim = dim
        if frozen:
            self.freeze()

    def freeze(self):
        for param in self.parameters():
            param.requires_grad = False

    def forward(self, images):
        tokens = self.vit(images)
        b = tokens.shape[0]
        return tokens.transpose(1, 2).reshape(b, self.dim, self.grid_size, self.grid_size)


def segmenter_encode(encoder, frame):
    return encoder(frame[None])[0]
