"""JSONL dataset manifests: one record per video."""
import json
import os
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from phantom_insight.data_utils.image_io import read_frame, read_mask
from phantom_insight.utils.errors import DataError, FormatError, InvalidArgumentError

BOX_TOLERANCE = 1e-6


def mask_to_box(mask):
    """Tight normalized box [x1, y1, x2, y2] of a nonempty mask.

    x1 = min_col / W and x2 = (max_col + 1) / W, so the box covers whole pixels.
    """
    mask = np.asarray(mask)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise InvalidArgumentError("cannot take the bounding box of an empty mask")
    h, w = mask.shape
    return [cols.min() / w, rows.min() / h, (cols.max() + 1) / w, (rows.max() + 1) / h]


@dataclass
class VideoRecord:
    video_id: str
    split: str
    frames: List[str]
    masks: List[str]
    boxes: List[List[float]]

    @property
    def num_frames(self):
        return len(self.frames)

    @classmethod
    def from_dict(cls, values, index):
        try:
            record = cls(
                video_id=str(values["video_id"]),
                split=str(values["split"]),
                frames=[str(p) for p in values["frames"]],
                masks=[str(p) for p in values["masks"]],
                boxes=[[float(c) for c in box] for box in values["boxes"]],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"manifest record {index}: malformed record ({e!r})") from e
        if not (len(record.frames) == len(record.masks) == len(record.boxes)):
            raise FormatError(f"manifest record {index}: frames, masks and boxes differ in length")
        if any(len(box) != 4 for box in record.boxes):
            raise FormatError(f"manifest record {index}: every box needs 4 coordinates")
        return record


@dataclass
class DatasetManifest:
    root: str
    records: List[VideoRecord] = field(default_factory=list)

    def path(self, relative):
        return os.path.join(self.root, relative)

    def split(self, name):
        return [r for r in self.records if r.split == name]

    def find(self, video_id):
        for record in self.records:
            if record.video_id == video_id:
                return record
        raise KeyError(video_id)

    def load_frames(self, record):
        return [read_frame(self.path(p)) for p in record.frames]

    def load_masks(self, record):
        return [read_mask(self.path(p)) for p in record.masks]

    def write(self, path=None):
        path = path or os.path.join(self.root, "manifest.jsonl")
        with open(path, "w") as f:
            for record in self.records:
                f.write(json.dumps(asdict(record)) + "\n")
        return path

    def validate(self):
        """Check that files exist and that every box is the tight box of its mask."""
        for index, record in enumerate(self.records):
            for relative in record.frames + record.masks:
                if not os.path.isfile(self.path(relative)):
                    raise FormatError(f"manifest record {index}: missing file {self.path(relative)}")
            for relative, box in zip(record.masks, record.boxes):
                mask = read_mask(self.path(relative))
                if not mask.any():
                    raise FormatError(f"manifest record {index}: empty mask {self.path(relative)}")
                tight = mask_to_box(mask)
                if max(abs(a - b) for a, b in zip(tight, box)) > BOX_TOLERANCE:
                    raise FormatError(
                        f"manifest record {index}: box {box} is not the tight box {tight} of {self.path(relative)}"
                    )
        return self


def read_manifest(path, validate=True):
    if not os.path.isfile(path):
        raise DataError(f"manifest {path} not found")
    records = []
    with open(path, "r") as f:
        for index, line in enumerate(f):
            if not line.strip():
                continue
            try:
                values = json.loads(line)
            except json.JSONDecodeError as e:
                raise FormatError(f"manifest record {index}: invalid JSON ({e})") from e
            records.append(VideoRecord.from_dict(values, index))
    manifest = DatasetManifest(root=os.path.dirname(os.path.abspath(path)), records=records)
    return manifest.validate() if validate else manifest
