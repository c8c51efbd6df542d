from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from phantom_insight.data_utils.clues import ClueBundle, assemble_clue_window
from phantom_insight.data_utils.image_io import resize_bilinear


@dataclass
class ClueSample:
    video_id: str
    t: int
    bundle: ClueBundle
    mask: torch.Tensor  # (S, S) binary float ground truth at model resolution
    box: torch.Tensor  # (4,) normalized ground-truth box


def resize_mask(mask, size):
    return (resize_bilinear(np.asarray(mask, dtype=np.float32), size) >= 0.5).astype(np.float32)


class ClueWindowDataset(Dataset):
    """Every (video, t) pair with t = 3..T of one manifest split.

    Clue bundles are computed once and cached; they are deterministic
    functions of the frames.
    """

    def __init__(self, manifest, split, image_size, anyres_grid):
        self.manifest = manifest
        self.records = manifest.split(split)
        self.image_size = image_size
        self.anyres_grid = anyres_grid
        self.index = [(i, t) for i, record in enumerate(self.records) for t in range(3, record.num_frames + 1)]
        self._frames = {}
        self._cache = {}

    def __len__(self):
        return len(self.index)

    def _load(self, i):
        if i not in self._frames:
            record = self.records[i]
            self._frames[i] = (self.manifest.load_frames(record), self.manifest.load_masks(record))
        return self._frames[i]

    def __getitem__(self, item):
        if item not in self._cache:
            i, t = self.index[item]
            record = self.records[i]
            frames, masks = self._load(i)
            bundle = assemble_clue_window(frames, t, self.image_size, self.anyres_grid)
            self._cache[item] = ClueSample(
                video_id=record.video_id,
                t=t,
                bundle=bundle,
                mask=torch.from_numpy(resize_mask(masks[t - 1], self.image_size)),
                box=torch.tensor(record.boxes[t - 1], dtype=torch.float32),
            )
        return self._cache[item]


def get_loader(dataset, mode, seed=0):
    """Batch size 1 loader; training order is shuffled with a seeded generator."""
    generator = torch.Generator().manual_seed(seed)
    return DataLoader(
        dataset,
        batch_size=None,
        shuffle=(mode == "train"),
        generator=generator,
        num_workers=0,
    )
