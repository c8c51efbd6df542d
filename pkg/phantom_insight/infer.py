import glob
import json
import os
from dataclasses import dataclass
from typing import List

import numpy as np
import torch
from tqdm import tqdm

from phantom_insight.data_utils.clues import assemble_clue_window
from phantom_insight.data_utils.image_io import overlay_mask, read_frame, write_frame, write_mask
from phantom_insight.data_utils.manifest import read_manifest
from phantom_insight.models.fusion import TextBox
from phantom_insight.train import load_model
from phantom_insight.utils.errors import DataError, InvalidArgumentError

BOXES_NAME = "boxes.jsonl"


@dataclass
class FramePrediction:
    t: int
    mask: np.ndarray  # (H, W) soft mask at source resolution
    text_box: TextBox
    box_prompt: List[float]  # the box the segmenter actually received


def frame_name(t, ext):
    return f"{t:04d}.{ext}"


@torch.no_grad()
def predict_video(model, config, frames):
    """Run the four-step procedure on every t = 3..T; returns T - 2 FramePredictions."""
    if len(frames) < 3:
        raise InvalidArgumentError(f"inference needs at least 3 frames, got {len(frames)}")
    model.eval()
    h, w = frames[0].shape[:2]
    predictions = []
    for t in range(3, len(frames) + 1):
        bundle = assemble_clue_window(frames, t, config.image_size, config.anyres_grid)
        images, frame = model.clue_images(bundle)
        outputs = model.infer(images, frame)

        probs = outputs.fg.probs[0].numpy()
        mask = probs if probs.shape == (h, w) else _resize_to(probs, h, w)
        predictions.append(FramePrediction(
            t=t,
            mask=mask,
            text_box=outputs.text_box,
            box_prompt=outputs.box_prompt[0].tolist(),
        ))
    return predictions


def _resize_to(mask, h, w):
    x = torch.from_numpy(np.ascontiguousarray(mask, dtype=np.float32))[None, None]
    x = torch.nn.functional.interpolate(x, size=(h, w), mode="bilinear", align_corners=False)
    return x[0, 0].clamp(0.0, 1.0).numpy()


def write_predictions(predictions, out_dir, frames=None):
    """masks/NNNN.pgm, boxes.jsonl and, when frames are given, overlays/NNNN.ppm."""
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    if frames is not None:
        os.makedirs(os.path.join(out_dir, "overlays"), exist_ok=True)

    with open(os.path.join(out_dir, BOXES_NAME), "w") as f:
        for p in predictions:
            write_mask(p.mask, os.path.join(out_dir, "masks", frame_name(p.t, "pgm")))
            f.write(json.dumps({"t": p.t, "box": p.text_box.format()}) + "\n")
            if frames is not None:
                blended = overlay_mask(frames[p.t - 1], p.mask)
                write_frame(blended, os.path.join(out_dir, "overlays", frame_name(p.t, "ppm")))


def read_video_dir(video_dir):
    """Frames NNNN.ppm from video_dir/frames, or from video_dir itself."""
    frame_dir = os.path.join(video_dir, "frames")
    if not os.path.isdir(frame_dir):
        frame_dir = video_dir
    paths = sorted(glob.glob(os.path.join(frame_dir, "*.ppm")))
    if not paths:
        raise DataError(f"no .ppm frames found in {frame_dir}")
    return [read_frame(p) for p in paths]


def run_inference(checkpoint, video_dir, out_dir, overlay=False):
    model, config = load_model(checkpoint)
    frames = read_video_dir(video_dir)
    predictions = predict_video(model, config, frames)
    write_predictions(predictions, out_dir, frames=frames if overlay else None)
    return predictions


def run_split_inference(checkpoint, data_dir, split, out_dir, overlay=False):
    """Predict every video of a manifest split into out_dir/<video_id>/."""
    model, config = load_model(checkpoint)
    manifest = read_manifest(os.path.join(data_dir, "manifest.jsonl"))
    records = manifest.split(split)
    for record in tqdm(records, desc="Inference"):
        frames = manifest.load_frames(record)
        predictions = predict_video(model, config, frames)
        write_predictions(predictions, os.path.join(out_dir, record.video_id), frames=frames if overlay else None)
    return len(records)


def main(args):
    if os.path.isfile(os.path.join(args.data, "manifest.jsonl")):
        count = run_split_inference(args.ckpt, args.data, args.split, args.out, overlay=args.overlay)
        print(f"Wrote predictions for {count} videos to {args.out}")
    else:
        predictions = run_inference(args.ckpt, args.data, args.out, overlay=args.overlay)
        print(f"Wrote {len(predictions)} masks to {args.out}")
