import os
import random

import numpy as np
import torch

from phantom_insight.utils.errors import NumericalInstabilityError


def seed_everything(seed):
    """Seed python, numpy and torch and switch torch to deterministic kernels."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def num_threads():
    """Worker-pool cap taken from PHANTOM_THREADS (defaults to the CPU count)."""
    value = os.environ.get("PHANTOM_THREADS")
    if value is None:
        return os.cpu_count() or 1
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def assert_finite(name, tensor):
    if not torch.isfinite(tensor).all():
        raise NumericalInstabilityError(f"{name} contains NaN or Inf values")
    return tensor
