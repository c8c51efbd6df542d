import argparse

from phantom_insight.data_utils.data_stats import ABLATION_MODES, DEFAULT_FRAME_SIZE, DEFAULT_NUM_FRAMES, PRESETS


def add_config_arguments(parser):
    parser.add_argument(
        "--config",
        default=None,
        type=str,
        help="Path to a JSON run config"
    )
    parser.add_argument(
        "--preset",
        default=None,
        type=str,
        choices=sorted(PRESETS),
        help="Model preset (overrides the config file)"
    )
    parser.add_argument(
        "--seed",
        default=None,
        type=int,
        help="Random seed"
    )
    parser.add_argument(
        "--mode",
        default=None,
        type=str,
        choices=ABLATION_MODES,
        help="Ablation tag selecting the pipeline variant"
    )
    parser.add_argument(
        "--epochs",
        default=None,
        type=int,
        help="Epochs"
    )
    parser.add_argument(
        "--wandb",
        default=None,
        action=argparse.BooleanOptionalAction,
        help="Whether to mirror the run log to wandb",
    )
    parser.add_argument(
        "--wandb_entity",
        default=None,
        type=str,
        help="Wandb entity name"
    )


def add_data_arguments(parser, split="val"):
    parser.add_argument(
        "--data",
        default="./data",
        type=str,
        help="Dataset root holding manifest.jsonl (or a single video directory for infer)"
    )
    parser.add_argument(
        "--split",
        default=split,
        type=str,
        help="Manifest split"
    )


def get_parser():
    parser = argparse.ArgumentParser(prog="phantom", description="Video camouflaged object detection")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Data generation
    datagen = subparsers.add_parser("datagen", help="Write the synthetic camouflage benchmark")
    datagen.add_argument(
        "--out",
        default="./data",
        type=str,
        help="Output dataset root"
    )
    datagen.add_argument(
        "--seed",
        default=0,
        type=int,
        help="Random seed"
    )
    datagen.add_argument(
        "--frame_size",
        default=DEFAULT_FRAME_SIZE,
        type=int,
        help="Frame resolution"
    )
    datagen.add_argument(
        "--num_frames",
        default=DEFAULT_NUM_FRAMES,
        type=int,
        help="Frames per video"
    )

    # Training
    train = subparsers.add_parser("train", help="Train a model on the train split")
    add_config_arguments(train)
    add_data_arguments(train)
    train.add_argument(
        "--out",
        default="./checkpoints",
        type=str,
        help="Path to checkpoint directory",
    )

    # Inference
    infer = subparsers.add_parser("infer", help="Predict masks and boxes for t = 3..T")
    add_data_arguments(infer)
    infer.add_argument(
        "--ckpt",
        required=True,
        type=str,
        help="Checkpoint (config.json must sit next to it)"
    )
    infer.add_argument(
        "--out",
        default="./predictions",
        type=str,
        help="Prediction directory"
    )
    infer.add_argument(
        "--overlay",
        default=False,
        action=argparse.BooleanOptionalAction,
        help="Also write mask overlays",
    )

    # Evaluation
    evaluate = subparsers.add_parser("eval", help="Score predictions against the manifest")
    add_data_arguments(evaluate)
    evaluate.add_argument(
        "--pred",
        default="./predictions",
        type=str,
        help="Prediction directory written by infer"
    )
    evaluate.add_argument(
        "--mode",
        default=None,
        type=str,
        choices=ABLATION_MODES,
        help="Ablation tag recorded with the report"
    )

    # Gradient check
    gradcheck = subparsers.add_parser("gradcheck", help="Finite-difference check of the full loss")
    gradcheck.add_argument(
        "--preset",
        default="desk",
        type=str,
        choices=sorted(PRESETS),
        help="Model preset"
    )
    gradcheck.add_argument(
        "--seed",
        default=0,
        type=int,
        help="Random seed"
    )
    gradcheck.add_argument(
        "--mode",
        default="full",
        type=str,
        choices=ABLATION_MODES,
        help="Ablation tag"
    )
    gradcheck.add_argument(
        "--num_samples",
        default=200,
        type=int,
        help="Number of sampled coordinates"
    )
    gradcheck.add_argument(
        "--fd_step",
        default=1e-3,
        type=float,
        help="Finite-difference step"
    )
    gradcheck.add_argument(
        "--tol",
        default=1e-3,
        type=float,
        help="Maximum accepted relative error"
    )

    # Ablations
    ablate = subparsers.add_parser("ablate", help="Train and score every ablation variant")
    add_config_arguments(ablate)
    add_data_arguments(ablate)
    ablate.add_argument(
        "--out",
        default="./ablations",
        type=str,
        help="Output directory"
    )

    return parser


def config_overrides(args):
    """RunConfig overrides carried by command-line flags."""
    keys = ["preset", "seed", "mode", "epochs", "wandb", "wandb_entity"]
    return {key: getattr(args, key) for key in keys if getattr(args, key, None) is not None}
