import sys

import torch

from phantom_insight import ablate, evaluate, infer, train
from phantom_insight.core.gradcheck import gradcheck
from phantom_insight.core.lora import lora_parameters
from phantom_insight.core.numerics import seed_everything
from phantom_insight.data_utils.clues import assemble_clue_window
from phantom_insight.data_utils.dataloader import ClueSample, resize_mask
from phantom_insight.data_utils.synth import SceneSpec, gen_sequence, generate_dataset
from phantom_insight.models import get_architecture
from phantom_insight.utils.config import load_config, make_config
from phantom_insight.utils.errors import NumericalInstabilityError, PhantomError
from phantom_insight.utils.losses import total_loss
from phantom_insight.utils.parsers import config_overrides, get_parser

GRADCHECK_FRAMES = 3


def gradcheck_sample(config, seed):
    """One clue window from a short synthetic video at the model's resolution."""
    video = gen_sequence(SceneSpec.for_split("train", seed, frame_size=config.image_size, num_frames=GRADCHECK_FRAMES))
    t = GRADCHECK_FRAMES
    bundle = assemble_clue_window(video.frames, t, config.image_size, config.anyres_grid)
    return ClueSample(
        video_id="gradcheck",
        t=t,
        bundle=bundle,
        mask=torch.from_numpy(resize_mask(video.masks[t - 1], config.image_size)),
        box=torch.tensor(video.boxes[t - 1], dtype=torch.float32),
    )


def run_gradcheck(config, num_samples=200, fd_step=1e-3, seed=0):
    """Max relative error of the full objective's gradient in double precision."""
    seed_everything(seed)
    model = get_architecture(config).double().eval()

    # Zero-initialized adapters would leave the A factors without signal
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in lora_parameters(model):
            if name.endswith("lora_B"):
                param.copy_(torch.randn(param.shape, generator=generator, dtype=param.dtype) * 0.05)

    sample = gradcheck_sample(config, seed)
    images, frame, target_ids, gt_mask, gt_box = train.sample_inputs(model, sample)
    images, frame = images.double(), frame.double()

    def loss_fn():
        outputs = model(images, frame, target_ids[:, :3])
        return total_loss(outputs, gt_mask, gt_box, target_ids, weights=config.loss_weights).total

    return gradcheck(loss_fn, train.trainable_parameters(model), fd_step=fd_step, num_samples=num_samples, seed=seed)


def run(args):
    if args.command == "datagen":
        manifest = generate_dataset(args.out, seed=args.seed, frame_size=args.frame_size, num_frames=args.num_frames)
        print(f"Wrote {len(manifest.records)} videos to {manifest.root}")
    elif args.command == "train":
        train.main(args, load_config(args.config, config_overrides(args)))
    elif args.command == "infer":
        infer.main(args)
    elif args.command == "eval":
        evaluate.main(args)
    elif args.command == "gradcheck":
        config = make_config(args.preset, {"seed": args.seed, "mode": args.mode})
        error = run_gradcheck(config, num_samples=args.num_samples, fd_step=args.fd_step, seed=args.seed)
        print("Max relative gradient error:", "{:.3e}".format(error))
        if error > args.tol:
            raise NumericalInstabilityError(f"gradient check failed: {error:.3e} > {args.tol:.1e}")
    elif args.command == "ablate":
        ablate.main(args, load_config(args.config, config_overrides(args)))


def main(argv=None):
    args = get_parser().parse_args(argv)
    try:
        run(args)
    except PhantomError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
