"""8-bit PPM (P6) frames and PGM (P5) masks.

Frames are float32 arrays of shape (H, W, 3) in [0, 1]; masks are uint8
arrays of shape (H, W) with values in {0, 1}.
"""
import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from phantom_insight.utils.errors import FormatError, InvalidArgumentError

MIN_FRAME_SIZE = 8

MAGIC_DICT = {
    "RGB": b"P6",
    "L": b"P5",
}


def _open(path, mode):
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic != MAGIC_DICT[mode]:
        raise FormatError(f"{path}: expected magic {MAGIC_DICT[mode].decode()}, found {magic!r}")
    try:
        with Image.open(path) as im:
            im.load()
            found = im.mode
            pixels = np.asarray(im, dtype=np.uint8).copy()
    except (OSError, SyntaxError, ValueError) as e:
        raise FormatError(f"{path}: {e}") from e
    if found != mode:
        raise FormatError(f"{path}: expected an 8-bit {mode} image, found mode {found}")
    return pixels


def to_bytes(values):
    """Quantize [0, 1] floats to bytes, rounding half up."""
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def read_frame(path):
    return _open(path, "RGB").astype(np.float32) / 255.0


def write_frame(frame, path):
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise InvalidArgumentError(f"frame must be H x W x 3, got shape {frame.shape}")
    Image.fromarray(to_bytes(frame)).save(path, format="PPM")


def read_mask(path):
    return (_open(path, "L") >= 128).astype(np.uint8)


def read_gray(path):
    """Raw P5 values mapped to [0, 1], used for soft predicted masks."""
    return _open(path, "L").astype(np.float32) / 255.0


def write_mask(mask, path):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise InvalidArgumentError(f"mask must be H x W, got shape {mask.shape}")
    Image.fromarray(to_bytes(mask)).save(path, format="PPM")


def resize_bilinear(frame, size):
    """Bilinear resize of an (H, W[, C]) array to (size, size[, C]).

    Half-pixel centres (align_corners=False), no antialiasing.
    """
    if size < 1:
        raise InvalidArgumentError(f"resize target must be positive, got {size}")
    frame = np.asarray(frame, dtype=np.float32)
    squeeze = frame.ndim == 2
    if squeeze:
        frame = frame[:, :, None]
    if frame.shape[0] == size and frame.shape[1] == size:
        out = frame.copy()
    else:
        x = torch.from_numpy(np.ascontiguousarray(frame.transpose(2, 0, 1)))[None]
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
        out = x[0].numpy().transpose(1, 2, 0)
    out = np.clip(out, 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def check_frame(frame, name="frame"):
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise InvalidArgumentError(f"{name} must be H x W x 3, got shape {frame.shape}")
    if min(frame.shape[:2]) < MIN_FRAME_SIZE:
        raise InvalidArgumentError(f"{name} must be at least {MIN_FRAME_SIZE}x{MIN_FRAME_SIZE}, got {frame.shape[:2]}")
    return frame


def overlay_mask(frame, mask, alpha=0.5, color=(1.0, 0.0, 0.0)):
    """Alpha-blend a soft mask onto a frame in a flat colour."""
    frame = np.asarray(frame, dtype=np.float32)
    weight = alpha * np.clip(np.asarray(mask, dtype=np.float32), 0.0, 1.0)[:, :, None]
    return (1.0 - weight) * frame + weight * np.asarray(color, dtype=np.float32)
