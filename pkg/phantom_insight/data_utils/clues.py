"""AnyRes splitting and per-timestep clue windows."""
from dataclasses import dataclass

import numpy as np
import torch

from phantom_insight.data_utils.flow import compute_optical_flow, flow_to_rgb
from phantom_insight.data_utils.image_io import check_frame, resize_bilinear
from phantom_insight.utils.errors import InvalidArgumentError, OutOfRangeError

TEMPORAL_ROLES = ["frame_t-2", "frame_t-1", "frame_t", "flow"]


def anyres_split(frame, grid, size=None):
    """Cut a frame into grid x grid row-major tiles.

    The frame is first edge-padded on the bottom/right to a multiple of grid.
    Tiles are resized to size x size when size is given.
    """
    if grid < 1:
        raise InvalidArgumentError(f"grid must be at least 1, got {grid}")
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    pad_h, pad_w = (-h) % grid, (-w) % grid
    if pad_h or pad_w:
        pad = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (frame.ndim - 2)
        frame = np.pad(frame, pad, mode="edge")

    th, tw = frame.shape[0] // grid, frame.shape[1] // grid
    tiles = [
        frame[i * th:(i + 1) * th, j * tw:(j + 1) * tw]
        for i in range(grid)
        for j in range(grid)
    ]
    if size is not None:
        tiles = [resize_bilinear(tile, size) for tile in tiles]
    return tiles


def reassemble_tiles(tiles, grid):
    rows = [np.concatenate(tiles[i * grid:(i + 1) * grid], axis=1) for i in range(grid)]
    return np.concatenate(rows, axis=0)


def _to_chw(frame):
    return torch.from_numpy(np.ascontiguousarray(np.asarray(frame, dtype=np.float32).transpose(2, 0, 1)))


@dataclass
class ClueBundle:
    """Visual inputs at one timestep, all (3, S, S) float32 tensors."""

    t: int
    frames: torch.Tensor  # (3, 3, S, S): I_{t-2}, I_{t-1}, I_t
    flow_image: torch.Tensor  # (3, S, S)
    patches: torch.Tensor  # (K, 3, S, S)

    @property
    def num_images(self):
        return 3 + 1 + self.patches.shape[0]

    def role_images(self, role):
        if role == "patches":
            return self.patches
        if role == "flow":
            return self.flow_image[None]
        return self.frames[TEMPORAL_ROLES.index(role)][None]

    def select(self, roles):
        """Stack the images of the given clue roles, temporal before spatial."""
        return torch.cat([self.role_images(role) for role in roles], dim=0)

    def images(self):
        return torch.cat([self.frames, self.flow_image[None], self.patches], dim=0)


def assemble_clue_window(frames, t, size, grid):
    """Build the clue bundle for 1-indexed timestep t of a frame sequence."""
    if t < 3 or t > len(frames):
        raise OutOfRangeError(f"clue window needs 3 <= t <= {len(frames)}, got t={t}")
    window = [check_frame(frames[t - 3 + i], name=f"frame {t - 2 + i}") for i in range(3)]

    flow = compute_optical_flow(window[1], window[2])
    flow_image = flow_to_rgb(flow)
    patches = anyres_split(window[2], grid, size=size)

    return ClueBundle(
        t=t,
        frames=torch.stack([_to_chw(resize_bilinear(f, size)) for f in window]),
        flow_image=_to_chw(resize_bilinear(flow_image, size)),
        patches=torch.stack([_to_chw(p) for p in patches]),
    )
