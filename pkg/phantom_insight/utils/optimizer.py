import math
from dataclasses import dataclass, field
from typing import List, Tuple

import torch

from phantom_insight.utils.errors import InvalidArgumentError


OPTIMIZERS_DICT = {
    "adamw": torch.optim.AdamW,
}

SCHEDULERS = ["warmup_cosine", "cosine", "none"]


def get_optimizer(opt_name):
    """Return optimizer class."""
    opt_name = opt_name.lower()

    if opt_name not in OPTIMIZERS_DICT:
        raise ValueError(f"Optimizer {opt_name} not supported.")

    return OPTIMIZERS_DICT[opt_name]


def warmup_cosine(step, total_steps, warmup_frac):
    """LR multiplier: linear warmup from 0 to 1, then cosine decay to 0."""
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup:
        return step / warmup
    progress = (step - warmup) / max(1, total_steps - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


def get_scheduler(opt, scheduler_name, **kwargs):
    """Return a per-optimizer-step scheduler."""
    scheduler_name = scheduler_name.lower()

    if scheduler_name not in SCHEDULERS:
        raise ValueError(f"Scheduler {scheduler_name} not supported.")

    total_steps = kwargs["total_steps"]
    if scheduler_name == "warmup_cosine":
        warmup_frac = kwargs.get("warmup_frac", 0.1)
        return torch.optim.lr_scheduler.LambdaLR(
            opt, lambda step: warmup_cosine(step, total_steps, warmup_frac)
        )
    elif scheduler_name == "cosine":
        return torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, total_steps))
    else:
        return torch.optim.lr_scheduler.StepLR(opt, step_size=max(1, total_steps), gamma=1.0)


@dataclass
class AdamWState:
    lr: float = 2e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    exp_avg: List[torch.Tensor] = field(default_factory=list)
    exp_avg_sq: List[torch.Tensor] = field(default_factory=list)


def adamw_step(params, grads, state):
    """One functional AdamW update; returns (new params, new state).

    Runs the very same torch.optim.AdamW update the training loop uses, on
    private copies, so inputs are left untouched.
    """
    if len(params) != len(grads):
        raise InvalidArgumentError(f"got {len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise InvalidArgumentError(f"parameter {i} has shape {tuple(p.shape)} but gradient {tuple(g.shape)}")
    if state.step > 0:
        for i, p in enumerate(params):
            if state.exp_avg[i].shape != p.shape or state.exp_avg_sq[i].shape != p.shape:
                raise InvalidArgumentError(f"optimizer state for parameter {i} does not match its shape")

    leaves = [torch.nn.Parameter(p.detach().clone()) for p in params]
    for leaf, g in zip(leaves, grads):
        leaf.grad = g.detach().clone().to(leaf.dtype)

    opt = torch.optim.AdamW(
        leaves, lr=state.lr, betas=state.betas, eps=state.eps, weight_decay=state.weight_decay
    )
    if state.step > 0:
        for i, leaf in enumerate(leaves):
            opt.state[leaf] = {
                "step": torch.tensor(float(state.step)),
                "exp_avg": state.exp_avg[i].detach().clone(),
                "exp_avg_sq": state.exp_avg_sq[i].detach().clone(),
            }
    opt.step()

    new_state = AdamWState(
        lr=state.lr,
        betas=state.betas,
        eps=state.eps,
        weight_decay=state.weight_decay,
        step=state.step + 1,
        exp_avg=[opt.state[leaf]["exp_avg"].detach().clone() for leaf in leaves],
        exp_avg_sq=[opt.state[leaf]["exp_avg_sq"].detach().clone() for leaf in leaves],
    )
    return [leaf.detach() for leaf in leaves], new_state
