import torch

from phantom_insight.utils.errors import InvalidArgumentError


def pooling_matrix(n, m, dtype=torch.float32, device=None):
    """M x N averaging matrix; row i averages input rows [floor(iN/M), floor((i+1)N/M))."""
    if m < 1 or m > n:
        raise InvalidArgumentError(f"pool target must satisfy 1 <= M <= N, got M={m}, N={n}")
    weights = torch.zeros(m, n, dtype=dtype, device=device)
    for i in range(m):
        start, stop = (i * n) // m, ((i + 1) * n) // m
        weights[i, start:stop] = 1.0 / (stop - start)
    return weights


def adaptive_pool_seq(tokens, target):
    """Average-pool a token sequence (..., N, d) down to (..., target, d).

    Bins are contiguous and non-overlapping, so the map is linear in its input
    and the identity when target == N.
    """
    n = tokens.shape[-2]
    if target == n:
        return tokens
    weights = pooling_matrix(n, target, dtype=tokens.dtype, device=tokens.device)
    return torch.matmul(weights, tokens)
