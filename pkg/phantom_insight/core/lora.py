"""Low-rank adapters for linear layers."""
import math

import torch
from torch import nn
import torch.nn.functional as F

from phantom_insight.utils.errors import InvalidArgumentError


class LoraLinear(nn.Module):
    """Linear layer with a rank-r adapter: y = Wx + b + (alpha / r) * B(Ax).

    A starts Gaussian (std 0.02) and B at zero, so a freshly wrapped layer
    reproduces its base layer exactly.
    """

    def __init__(self, in_features, out_features, rank, alpha=None, bias=True, freeze_base=True):
        super(LoraLinear, self).__init__()
        if rank <= 0:
            raise InvalidArgumentError(f"LoRA rank must be positive, got {rank}")
        self.in_features = in_features
        self.out_features = out_features
        self.rank = rank
        self.alpha = float(2 * rank if alpha is None else alpha)

        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features)) if bias else None
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))

        self.lora_A = nn.Parameter(torch.randn(rank, in_features) * 0.02)
        self.lora_B = nn.Parameter(torch.zeros(out_features, rank))

        if freeze_base:
            self.freeze_base()

    @property
    def scaling(self):
        return self.alpha / self.rank

    @classmethod
    def from_linear(cls, linear, rank, alpha=None, freeze_base=True):
        layer = cls(
            linear.in_features,
            linear.out_features,
            rank=rank,
            alpha=alpha,
            bias=linear.bias is not None,
            freeze_base=False,
        )
        with torch.no_grad():
            layer.weight.copy_(linear.weight)
            if linear.bias is not None:
                layer.bias.copy_(linear.bias)
        layer.to(dtype=linear.weight.dtype, device=linear.weight.device)
        if freeze_base:
            layer.freeze_base()
        return layer

    def freeze_base(self):
        self.weight.requires_grad = False
        if self.bias is not None:
            self.bias.requires_grad = False

    def forward(self, x):
        out = F.linear(x, self.weight, self.bias)
        delta = F.linear(F.linear(x, self.lora_A), self.lora_B)
        return out + self.scaling * delta

    def extra_repr(self):
        return f"in_features={self.in_features}, out_features={self.out_features}, rank={self.rank}, alpha={self.alpha}"


def lora_forward(layer, x):
    if x.shape[-1] != layer.in_features:
        raise InvalidArgumentError(f"expected {layer.in_features} input columns, got {x.shape[-1]}")
    return layer(x)


def apply_lora(module, rank, alpha=None, freeze_base=True):
    """Replace every nn.Linear below `module` by a LoraLinear wrapping it.

    Returns the number of layers that were adapted.
    """
    count = 0
    for name, child in list(module.named_children()):
        if isinstance(child, LoraLinear):
            continue
        if isinstance(child, nn.Linear):
            setattr(module, name, LoraLinear.from_linear(child, rank, alpha=alpha, freeze_base=freeze_base))
            count += 1
        else:
            count += apply_lora(child, rank, alpha=alpha, freeze_base=freeze_base)
    return count


def lora_parameters(module):
    for name, param in module.named_parameters():
        if "lora_" in name:
            yield name, param
