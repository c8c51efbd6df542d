"""Dense optical flow (pyramidal Lucas-Kanade), colour rendering and PHFL dumps."""
import math
import struct

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib.colors import hsv_to_rgb

from phantom_insight.utils.errors import FormatError, InvalidArgumentError

FLOW_MAGIC = b"PHFL"

LUMA = (0.299, 0.587, 0.114)


def to_gray(frame):
    frame = np.asarray(frame, dtype=np.float64)
    return frame[..., 0] * LUMA[0] + frame[..., 1] * LUMA[1] + frame[..., 2] * LUMA[2]


def _gradients(im):
    # Central differences with replicated borders; im is (1, 1, H, W)
    padded = F.pad(im, (1, 1, 1, 1), mode="replicate")
    gx = 0.5 * (padded[..., 1:-1, 2:] - padded[..., 1:-1, :-2])
    gy = 0.5 * (padded[..., 2:, 1:-1] - padded[..., :-2, 1:-1])
    return gx, gy


def _window_sum(x, window):
    pad = window // 2
    kernel = torch.ones(1, 1, window, window, dtype=x.dtype)
    return F.conv2d(F.pad(x, (pad, pad, pad, pad), mode="replicate"), kernel)


def _warp(im, flow):
    """Sample im at (x + u, y + v); flow is (1, 2, H, W) in pixels."""
    _, _, h, w = im.shape
    ys, xs = torch.meshgrid(
        torch.arange(h, dtype=im.dtype), torch.arange(w, dtype=im.dtype), indexing="ij"
    )
    gx = 2.0 * (xs + flow[0, 0]) / max(w - 1, 1) - 1.0
    gy = 2.0 * (ys + flow[0, 1]) / max(h - 1, 1) - 1.0
    grid = torch.stack([gx, gy], dim=-1)[None]
    return F.grid_sample(im, grid, mode="bilinear", padding_mode="border", align_corners=True)


def _pyramid(im, levels):
    pyramid = [im]
    for _ in range(levels - 1):
        pyramid.append(F.avg_pool2d(pyramid[-1], kernel_size=2, ceil_mode=True))
    return pyramid[::-1]


def compute_optical_flow(prev, next, levels=3, window=5, iterations=3, damping=1e-3):
    """Flow (H, W, 2) such that next(x + u, y + v) ~ prev(x, y).

    Each level refines the upsampled coarser estimate by solving the damped
    normal equations (sum grad grad^T + damping I) du = -sum grad I_t over a
    window around every pixel.
    """
    prev, next = np.asarray(prev), np.asarray(next)
    if prev.shape != next.shape:
        raise InvalidArgumentError(f"flow needs frames of equal size, got {prev.shape} and {next.shape}")
    h, w = prev.shape[:2]

    # Coarsest level must still hold a full window
    levels = max(1, min(levels, int(math.floor(math.log2(max(1.0, min(h, w) / window)))) + 1))

    prev_t = torch.from_numpy(to_gray(prev))[None, None]
    next_t = torch.from_numpy(to_gray(next))[None, None]
    prev_pyr, next_pyr = _pyramid(prev_t, levels), _pyramid(next_t, levels)

    flow = torch.zeros(1, 2, *prev_pyr[0].shape[-2:], dtype=torch.float64)
    for prev_l, next_l in zip(prev_pyr, next_pyr):
        lh, lw = prev_l.shape[-2:]
        if flow.shape[-2:] != (lh, lw):
            scale = torch.tensor([lw / flow.shape[-1], lh / flow.shape[-2]], dtype=flow.dtype)
            flow = F.interpolate(flow, size=(lh, lw), mode="bilinear", align_corners=False)
            flow = flow * scale.view(1, 2, 1, 1)

        prev_gx, prev_gy = _gradients(prev_l)
        for _ in range(iterations):
            warped = _warp(next_l, flow)
            warped_gx, warped_gy = _gradients(warped)
            ix = 0.5 * (prev_gx + warped_gx)
            iy = 0.5 * (prev_gy + warped_gy)
            it = warped - prev_l

            sxx = _window_sum(ix * ix, window) + damping
            syy = _window_sum(iy * iy, window) + damping
            sxy = _window_sum(ix * iy, window)
            sxt = _window_sum(ix * it, window)
            syt = _window_sum(iy * it, window)

            det = sxx * syy - sxy * sxy
            du = (-syy * sxt + sxy * syt) / det
            dv = (sxy * sxt - sxx * syt) / det
            flow = flow + torch.cat([du, dv], dim=1)

    flow = torch.stack([flow[0, 0].clamp(-w, w), flow[0, 1].clamp(-h, h)], dim=-1)
    return flow.numpy().astype(np.float32)


def flow_to_rgb(flow):
    """Colour-wheel rendering: hue from direction, saturation from relative magnitude.

    Zero flow renders white.
    """
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[..., 0], flow[..., 1]
    magnitude = np.hypot(u, v)
    max_magnitude = magnitude.max() if magnitude.size else 0.0
    if max_magnitude == 0.0:
        return np.ones(flow.shape[:-1] + (3,), dtype=np.float32)

    hue = np.mod(np.arctan2(v, u) / (2.0 * np.pi), 1.0)
    saturation = magnitude / max_magnitude
    hsv = np.stack([hue, saturation, np.ones_like(hue)], axis=-1)
    return hsv_to_rgb(hsv).astype(np.float32)


def write_flow(flow, path):
    flow = np.asarray(flow, dtype="<f4")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(np.ascontiguousarray(flow).tobytes(order="C"))


def read_flow(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FLOW_MAGIC:
        raise FormatError(f"{path}: bad magic, not a PHFL flow dump")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    h, w = struct.unpack("<II", data[4:12])
    expected = 12 + 8 * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for a {h}x{w} flow, found {len(data)}")
    return np.frombuffer(data[12:], dtype="<f4").reshape(h, w, 2).astype(np.float32)
