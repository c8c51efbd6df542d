import os
from concurrent.futures import ThreadPoolExecutor

from phantom_insight.core.numerics import num_threads
from phantom_insight.data_utils.data_stats import ABLATION_MODES
from phantom_insight.data_utils.image_io import read_gray
from phantom_insight.data_utils.manifest import read_manifest
from phantom_insight.infer import frame_name
from phantom_insight.utils.errors import DataError, InvalidArgumentError
from phantom_insight.utils.metrics import MetricReport, evaluate_video, format_table


def load_predictions(pred_dir, record):
    """Soft predicted masks for t = 3..T of one video."""
    preds = []
    for t in range(3, record.num_frames + 1):
        path = os.path.join(pred_dir, record.video_id, "masks", frame_name(t, "pgm"))
        if not os.path.isfile(path):
            raise DataError(f"missing prediction for {record.video_id} frame {t}: {path}")
        preds.append(read_gray(path))
    return preds


def run_evaluation(pred_dir, manifest, split="val", tag=None):
    """Per-video and mean MetricReports over a manifest split."""
    if tag is not None and tag not in ABLATION_MODES:
        raise InvalidArgumentError(f"Unknown ablation tag {tag!r}, expected one of {ABLATION_MODES}")
    records = manifest.split(split)
    if not records:
        raise DataError(f"split {split!r} of {manifest.root} holds no videos")

    def score(record):
        preds = load_predictions(pred_dir, record)
        gts = manifest.load_masks(record)[2:]
        return record.video_id, evaluate_video(gts, preds)

    with ThreadPoolExecutor(max_workers=num_threads()) as pool:
        rows = list(pool.map(score, records))

    mean = MetricReport.mean([report for _, report in rows])
    return rows, mean


def main(args):
    manifest = read_manifest(os.path.join(args.data, "manifest.jsonl"))
    rows, mean = run_evaluation(args.pred, manifest, split=args.split, tag=args.mode)
    print(format_table(rows + [("mean", mean)]))
    print(mean.to_json(split=args.split, mode=args.mode, videos=len(rows)))
    return mean
