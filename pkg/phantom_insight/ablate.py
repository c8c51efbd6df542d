import dataclasses
import json
import os

from phantom_insight.data_utils.data_stats import ABLATION_MODES
from phantom_insight.data_utils.manifest import read_manifest
from phantom_insight.evaluate import run_evaluation
from phantom_insight.infer import run_split_inference
from phantom_insight.train import run_training
from phantom_insight.utils.metrics import format_table


def run_ablation(config, manifest, out_dir, modes=None, split="val"):
    """Train, predict and score one pipeline variant per ablation tag."""
    modes = ABLATION_MODES if modes is None else modes
    rows = []
    for mode in modes:
        variant = dataclasses.replace(config, mode=mode).validate()
        mode_dir = os.path.join(out_dir, mode)
        checkpoint = run_training(variant, manifest, os.path.join(mode_dir, "checkpoints"))
        pred_dir = os.path.join(mode_dir, "predictions")
        run_split_inference(checkpoint, manifest.root, split, pred_dir)
        _, mean = run_evaluation(pred_dir, manifest, split=split, tag=mode)
        rows.append((mode, mean))
    return rows


def main(args, config):
    manifest = read_manifest(os.path.join(args.data, "manifest.jsonl"))
    modes = [args.mode] if args.mode is not None else None
    rows = run_ablation(config, manifest, args.out, modes=modes, split=args.split)
    print(format_table(rows))
    with open(os.path.join(args.out, "ablation.jsonl"), "w") as f:
        for mode, report in rows:
            f.write(report.to_json(mode=mode, split=args.split) + "\n")
    return rows
