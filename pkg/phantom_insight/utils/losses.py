"""Decoupled foreground/background objective.

total = prompt + text + mask, where
    prompt = box(gt box, p_box) + seg(fg gt, p_mask_fg) + seg(bg gt, p_mask_bg)
    text   = mean CE of the four coordinate bins
    mask   = seg(fg gt, M_f) + seg(bg gt, M_b)
and the background ground truth is the complement of the foreground.
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torchvision.ops import generalized_box_iou_loss

from phantom_insight.models.cue_head import order_box
from phantom_insight.utils.errors import InvalidArgumentError

PRED_CLAMP = 1e-7
DICE_EPS = 1.0
LOSS_KEYS = ["bce", "dice", "l1", "giou_loss", "ce", "seg", "box", "prompt", "text", "mask", "total"]


def _as_batch(x):
    return x.reshape(1, -1) if x.ndim <= 2 else x.reshape(x.shape[0], -1)


def seg_terms(gt, pred):
    if gt.shape != pred.shape:
        raise InvalidArgumentError(f"mask shapes differ: gt {tuple(gt.shape)} vs pred {tuple(pred.shape)}")
    gt = _as_batch(gt).to(pred.dtype)
    p = _as_batch(pred).clamp(PRED_CLAMP, 1.0 - PRED_CLAMP)
    bce = F.binary_cross_entropy(p, gt)
    dice = 1.0 - (2.0 * (p * gt).sum(-1) + DICE_EPS) / (p.sum(-1) + gt.sum(-1) + DICE_EPS)
    return bce, dice.mean()


def seg_loss(gt, pred):
    bce, dice = seg_terms(gt, pred)
    return bce + dice


def box_terms(gt, pred):
    if gt.shape[-1] != 4 or pred.shape[-1] != 4:
        raise InvalidArgumentError("boxes need 4 coordinates")
    gt, pred = gt.reshape(-1, 4).to(pred.dtype), pred.reshape(-1, 4)
    l1 = (gt - pred).abs().mean()
    giou = generalized_box_iou_loss(pred, gt, reduction="mean")
    return l1, giou


def box_loss(gt, pred):
    l1, giou = box_terms(gt, pred)
    return l1 + giou


def downsample_mask(mask, size):
    """Area-average a (B, H, W) or (H, W) binary mask to size x size, threshold at 0.5."""
    squeeze = mask.ndim == 2
    m = mask.reshape(-1, 1, *mask.shape[-2:]).to(torch.float64)
    m = F.interpolate(m, size=(size, size), mode="area")
    m = (m >= 0.5).reshape(-1, size, size)
    return m[0] if squeeze else m


def text_loss(target_ids, location_logits):
    vocab_size = location_logits.shape[-1]
    target_ids = torch.as_tensor(target_ids, device=location_logits.device).long()
    if (target_ids < 0).any() or (target_ids >= vocab_size).any():
        raise InvalidArgumentError(f"target ids {target_ids.tolist()} fall outside the {vocab_size}-token vocabulary")
    return F.cross_entropy(location_logits.reshape(-1, vocab_size), target_ids.reshape(-1))


def prompt_loss(gt_box, p_box, fg_gt, p_mask_fg, bg_gt=None, p_mask_bg=None):
    """Box loss plus low-resolution fg (and bg) mask-prompt segmentation losses.

    Mask prompts are logits; ground truth is compared at their resolution.
    """
    size = p_mask_fg.shape[-1]
    total = box_loss(gt_box, p_box)
    total = total + seg_loss(downsample_mask(fg_gt, size).to(p_mask_fg.dtype), torch.sigmoid(p_mask_fg))
    if p_mask_bg is not None:
        total = total + seg_loss(downsample_mask(bg_gt, size).to(p_mask_bg.dtype), torch.sigmoid(p_mask_bg))
    return total


def mask_loss(fg_gt, fg_pred, bg_gt=None, bg_pred=None):
    total = seg_loss(fg_gt, fg_pred)
    if bg_pred is not None:
        total = total + seg_loss(bg_gt, bg_pred)
    return total


@dataclass
class LossReport:
    bce: torch.Tensor
    dice: torch.Tensor
    l1: torch.Tensor
    giou_loss: torch.Tensor
    ce: torch.Tensor
    seg: torch.Tensor
    box: torch.Tensor
    prompt: torch.Tensor
    text: torch.Tensor
    mask: torch.Tensor
    total: torch.Tensor

    def to_dict(self):
        return {key: float(getattr(self, key).detach()) for key in LOSS_KEYS}


def total_loss(outputs, gt_mask, gt_box, target_ids, weights=None):
    """Itemized objective for one pipeline pass.

    gt_mask is the (B, S, S) foreground mask; the background target is 1 - gt_mask.
    """
    weights = weights or {"prompt": 1.0, "text": 1.0, "mask": 1.0}
    cues = outputs.cues
    dtype = outputs.fg.probs.dtype
    fg_gt = gt_mask.to(dtype)
    bg_gt = 1.0 - fg_gt
    with_bg = outputs.bg is not None
    size = cues.fg_mask.shape[-1]

    # Each seg term: (gt, pred) at its own resolution
    seg_pairs = [(downsample_mask(fg_gt, size).to(dtype), torch.sigmoid(cues.fg_mask)), (fg_gt, outputs.fg.probs)]
    if with_bg:
        seg_pairs += [(downsample_mask(bg_gt, size).to(dtype), torch.sigmoid(cues.bg_mask)), (bg_gt, outputs.bg.probs)]
    terms = [seg_terms(gt, pred) for gt, pred in seg_pairs]
    bce = sum(t[0] for t in terms)
    dice = sum(t[1] for t in terms)

    l1, giou = box_terms(gt_box, order_box(cues.fg_box))
    box = l1 + giou
    ce = text_loss(target_ids, outputs.fused.location_logits)

    prompt_seg = terms[0][0] + terms[0][1] + (terms[2][0] + terms[2][1] if with_bg else 0.0)
    mask_seg = terms[1][0] + terms[1][1] + (terms[3][0] + terms[3][1] if with_bg else 0.0)
    prompt = box + prompt_seg
    mask = mask_seg
    total = weights["prompt"] * prompt + weights["text"] * ce + weights["mask"] * mask

    return LossReport(
        bce=bce, dice=dice, l1=l1, giou_loss=giou, ce=ce, seg=bce + dice,
        box=box, prompt=prompt, text=ce, mask=mask, total=total,
    )
