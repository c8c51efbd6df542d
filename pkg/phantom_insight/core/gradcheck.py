import math

import torch

from phantom_insight.utils.errors import NumericalInstabilityError


def _evaluate(loss_fn):
    loss = loss_fn()
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericalInstabilityError(f"loss evaluated to {value} during gradient check")
    return loss, value


def gradcheck(loss_fn, parameters, fd_step=1e-3, num_samples=200, seed=0, skip=None, kink_tol=0.1):
    """Compare autograd gradients with central finite differences.

    Args:
      loss_fn: zero-argument callable returning a scalar tensor; must be
        deterministic. Run it on a float64 copy of the model.
      parameters: list of leaf tensors (requires_grad=True) to check.
      fd_step: finite-difference step.
      num_samples: number of coordinates sampled across all parameters.
      skip: optional predicate (param_index, flat_index) -> bool marking
        coordinates known to sit on a nondifferentiable kink.
      kink_tol: coordinates whose one-sided differences disagree by more than
        this fraction are treated as straddling a kink and excluded.

    Returns:
      Max relative error over the checked coordinates (0.0 if none survived).
    """
    parameters = [p for p in parameters if p.requires_grad]
    for p in parameters:
        p.grad = None

    loss, base = _evaluate(loss_fn)
    analytic = torch.autograd.grad(loss, parameters, allow_unused=True)
    analytic = [torch.zeros_like(p) if g is None else g.detach() for p, g in zip(parameters, analytic)]

    sizes = torch.tensor([p.numel() for p in parameters], dtype=torch.float64)
    generator = torch.Generator().manual_seed(seed)
    param_ids = torch.multinomial(sizes / sizes.sum(), num_samples, replacement=True, generator=generator)

    max_error = 0.0
    with torch.no_grad():
        for param_index in param_ids.tolist():
            param = parameters[param_index]
            flat_index = int(torch.randint(param.numel(), (1,), generator=generator))
            if skip is not None and skip(param_index, flat_index):
                continue

            flat = param.view(-1)
            original = flat[flat_index].item()
            flat[flat_index] = original + fd_step
            _, plus = _evaluate(loss_fn)
            flat[flat_index] = original - fd_step
            _, minus = _evaluate(loss_fn)
            flat[flat_index] = original

            forward = (plus - base) / fd_step
            backward = (base - minus) / fd_step
            if abs(forward - backward) > kink_tol * max(abs(forward), abs(backward)) + 1e-7:
                continue

            numeric = (plus - minus) / (2 * fd_step)
            exact = analytic[param_index].view(-1)[flat_index].item()
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            max_error = max(max_error, error)

    return max_error
