"""Procedural camouflage videos.

The background is a static multi-octave value-noise texture. The object is an
ellipse cut from a phase-shifted crop of the same noise field, moment-matched
to the background, and translated every frame with edge bounce, so motion is
the only reliable cue.
"""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from phantom_insight.core.numerics import num_threads
from phantom_insight.data_utils.data_stats import (
    DEFAULT_FRAME_SIZE,
    DEFAULT_NUM_FRAMES,
    SCENE_DICT,
    SEED_OFFSET_DICT,
    SPLIT_DICT,
)
from phantom_insight.data_utils.image_io import write_frame, write_mask
from phantom_insight.data_utils.manifest import DatasetManifest, VideoRecord, mask_to_box
from phantom_insight.utils.errors import InvalidArgumentError

TEXTURE_CONTRAST = 0.15
MAX_MEAN_GAP = 0.05
MIN_ENERGY_RATIO = 3.0


@dataclass
class SceneSpec:
    seed: int = 0
    frame_size: int = DEFAULT_FRAME_SIZE
    num_frames: int = DEFAULT_NUM_FRAMES
    octaves: int = 3
    base_frequency: int = 8
    axes_range: Tuple[float, float] = (6.0, 12.0)
    velocity_range: Tuple[float, float] = (1.5, 3.0)
    distractors: int = 0
    noise: float = 0.01

    @property
    def static(self):
        return tuple(self.velocity_range) == (0.0, 0.0)

    def validate(self):
        if self.num_frames < 3:
            raise InvalidArgumentError(f"a scene needs at least 3 frames, got {self.num_frames}")
        if self.frame_size < 8:
            raise InvalidArgumentError(f"frame_size must be at least 8, got {self.frame_size}")
        if self.octaves < 1 or self.base_frequency < 1:
            raise InvalidArgumentError("octaves and base_frequency must be positive")
        lo, hi = self.axes_range
        if lo <= 0 or hi < lo:
            raise InvalidArgumentError(f"invalid ellipse axes range {self.axes_range}")
        if 2 * math.ceil(hi) + 1 > self.frame_size:
            raise InvalidArgumentError(
                f"object with semi-axis up to {hi} px does not fit a {self.frame_size}px frame"
            )
        vlo, vhi = self.velocity_range
        if not self.static and (vlo < 1.0 or vhi < vlo):
            raise InvalidArgumentError(f"velocity range must lie at or above 1 px/frame, got {self.velocity_range}")
        if self.noise < 0:
            raise InvalidArgumentError("noise level must be nonnegative")
        return self

    @classmethod
    def for_split(cls, split, seed, frame_size=DEFAULT_FRAME_SIZE, num_frames=DEFAULT_NUM_FRAMES):
        scale = frame_size / DEFAULT_FRAME_SIZE
        return cls(
            seed=seed,
            frame_size=frame_size,
            num_frames=num_frames,
            axes_range=(6.0 * scale, 12.0 * scale),
            **SCENE_DICT[split],
        )


@dataclass
class SyntheticVideo:
    frames: List[np.ndarray]
    masks: List[np.ndarray]
    boxes: List[List[float]]


def value_noise(height, width, octaves, base_frequency, rng, persistence=0.5):
    """(height, width, 3) noise: octaves of smoothly interpolated random lattices."""
    out = np.zeros((3, height, width), dtype=np.float64)
    amplitude, total = 1.0, 0.0
    for octave in range(octaves):
        cells = base_frequency * 2 ** octave
        lattice = torch.from_numpy(rng.random((1, 3, cells + 1, cells + 1)))
        layer = F.interpolate(lattice, size=(height, width), mode="bicubic", align_corners=True)
        out += amplitude * layer[0].numpy()
        total += amplitude
        amplitude *= persistence
    out /= total

    mean = out.mean(axis=(1, 2), keepdims=True)
    std = out.std(axis=(1, 2), keepdims=True) + 1e-12
    out = 0.5 + TEXTURE_CONTRAST * (out - mean) / std
    return np.clip(out, 0.0, 1.0).transpose(1, 2, 0)


def ellipse_mask(semi_x, semi_y):
    rx, ry = math.ceil(semi_x), math.ceil(semi_y)
    ys, xs = np.mgrid[-ry:ry + 1, -rx:rx + 1]
    return ((xs / semi_x) ** 2 + (ys / semi_y) ** 2) <= 1.0


def match_moments(texture, mask, mean, std):
    """Per-channel affine map making the masked pixels match (mean, std)."""
    pixels = texture[mask]
    scale = std / (pixels.std(axis=0) + 1e-12)
    return np.clip((texture - pixels.mean(axis=0)) * scale + mean, 0.0, 1.0)


def _crop(canvas, top, left, shape):
    return canvas[top:top + shape[0], left:left + shape[1]]


def _paste(frame, patch, shape_mask, cy, cx):
    ry, rx = shape_mask.shape[0] // 2, shape_mask.shape[1] // 2
    region = frame[cy - ry:cy + ry + 1, cx - rx:cx + rx + 1]
    region[shape_mask] = patch[shape_mask]


def _trajectory(rng, spec, ry, rx):
    size = spec.frame_size
    lo = np.array([ry, rx], dtype=np.float64)
    hi = np.array([size - 1 - ry, size - 1 - rx], dtype=np.float64)
    pos = lo + rng.random(2) * (hi - lo)

    speed = rng.uniform(*spec.velocity_range)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    velocity = speed * np.array([np.sin(angle), np.cos(angle)])

    positions = []
    for _ in range(spec.num_frames):
        positions.append(np.floor(pos + 0.5).astype(int))
        pos = pos + velocity
        for axis in range(2):
            if hi[axis] == lo[axis]:
                pos[axis] = lo[axis]
                continue
            # Reflect off the borders until inside
            while pos[axis] < lo[axis] or pos[axis] > hi[axis]:
                if pos[axis] < lo[axis]:
                    pos[axis] = 2 * lo[axis] - pos[axis]
                else:
                    pos[axis] = 2 * hi[axis] - pos[axis]
                velocity[axis] = -velocity[axis]
    return positions


def gen_sequence(spec):
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    size = spec.frame_size

    # One noise field on a doubled canvas; every texture is a crop of it
    canvas = value_noise(2 * size, 2 * size, spec.octaves, 2 * spec.base_frequency, rng)
    background = _crop(canvas, 0, 0, (size, size)).copy()
    bg_mean, bg_std = background.reshape(-1, 3).mean(axis=0), background.reshape(-1, 3).std(axis=0)

    def textured_ellipse():
        semi_y, semi_x = rng.uniform(*spec.axes_range, size=2)
        shape_mask = ellipse_mask(semi_x, semi_y)
        top = int(rng.integers(0, 2 * size - shape_mask.shape[0] + 1))
        left = int(rng.integers(0, 2 * size - shape_mask.shape[1] + 1))
        patch = _crop(canvas, top, left, shape_mask.shape)
        return shape_mask, match_moments(patch, shape_mask, bg_mean, bg_std)

    for _ in range(spec.distractors):
        shape_mask, patch = textured_ellipse()
        ry, rx = shape_mask.shape[0] // 2, shape_mask.shape[1] // 2
        cy, cx = int(rng.integers(ry, size - ry)), int(rng.integers(rx, size - rx))
        _paste(background, patch, shape_mask, cy, cx)

    shape_mask, patch = textured_ellipse()
    ry, rx = shape_mask.shape[0] // 2, shape_mask.shape[1] // 2
    positions = _trajectory(rng, spec, ry, rx)

    frames, masks, boxes = [], [], []
    for cy, cx in positions:
        frame = background.copy()
        _paste(frame, patch, shape_mask, cy, cx)
        if spec.noise > 0:
            frame = frame + rng.normal(0.0, spec.noise, size=frame.shape)
        mask = np.zeros((size, size), dtype=np.uint8)
        mask[cy - ry:cy + ry + 1, cx - rx:cx + rx + 1][shape_mask] = 1

        frames.append(np.clip(frame, 0.0, 1.0).astype(np.float32))
        masks.append(mask)
        boxes.append(mask_to_box(mask))

    return SyntheticVideo(frames=frames, masks=masks, boxes=boxes)


def camouflage_stats(frames, masks):
    """Colour gap and motion-energy ratio between object and background.

    mean_gap is the largest per-channel difference of mean intensity between
    object and background pixels. energy_ratio compares the mean squared
    inter-frame difference inside the object with that of pixels covered by
    neither the current nor the previous object.
    """
    frames = np.stack([np.asarray(f, dtype=np.float64) for f in frames])
    masks = np.stack([np.asarray(m, dtype=bool) for m in masks])

    obj_mean = frames[masks].mean(axis=0)
    bg_mean = frames[~masks].mean(axis=0)
    mean_gap = float(np.abs(obj_mean - bg_mean).max())

    energy = ((frames[1:] - frames[:-1]) ** 2).sum(axis=-1)
    inside = masks[1:]
    outside = ~(masks[1:] | masks[:-1])
    obj_energy = float(energy[inside].mean())
    bg_energy = float(energy[outside].mean()) if outside.any() else 0.0
    ratio = obj_energy / bg_energy if bg_energy > 0 else float("inf")
    return {"mean_gap": mean_gap, "energy_ratio": ratio}


def check_camouflage(frames, masks):
    stats = camouflage_stats(frames, masks)
    return stats["mean_gap"] < MAX_MEAN_GAP and stats["energy_ratio"] >= MIN_ENERGY_RATIO


def write_video(video, root, video_id, split):
    frame_dir = os.path.join(root, video_id, "frames")
    mask_dir = os.path.join(root, video_id, "masks")
    os.makedirs(frame_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)

    frames, masks = [], []
    for i, (frame, mask) in enumerate(zip(video.frames, video.masks)):
        frame_path = os.path.join(video_id, "frames", f"{i + 1:04d}.ppm")
        mask_path = os.path.join(video_id, "masks", f"{i + 1:04d}.pgm")
        write_frame(frame, os.path.join(root, frame_path))
        write_mask(mask, os.path.join(root, mask_path))
        frames.append(frame_path)
        masks.append(mask_path)

    return VideoRecord(video_id=video_id, split=split, frames=frames, masks=masks, boxes=video.boxes)


def generate_dataset(root, seed=0, frame_size=DEFAULT_FRAME_SIZE, num_frames=DEFAULT_NUM_FRAMES, splits=None):
    """Write every split under root and return the (already written) manifest."""
    splits = SPLIT_DICT if splits is None else splits
    os.makedirs(root, exist_ok=True)

    jobs = []
    for split, count in splits.items():
        for i in range(count):
            spec = SceneSpec.for_split(split, seed + SEED_OFFSET_DICT[split] + i, frame_size, num_frames)
            jobs.append((spec, f"{split}_{i:03d}", split))

    def run(job):
        spec, video_id, split = job
        return write_video(gen_sequence(spec), root, video_id, split)

    with ThreadPoolExecutor(max_workers=num_threads()) as pool:
        records = list(pool.map(run, jobs))

    manifest = DatasetManifest(root=os.path.abspath(root), records=records)
    manifest.write()
    return manifest
