import math
import os
import time

import torch
from tqdm import tqdm

from phantom_insight.core.checkpoint import load_checkpoint, save_checkpoint
from phantom_insight.core.numerics import assert_finite, num_threads, seed_everything
from phantom_insight.data_utils.dataloader import ClueWindowDataset, get_loader
from phantom_insight.data_utils.manifest import read_manifest
from phantom_insight.models import get_architecture
from phantom_insight.models.fusion import VOCAB, box_to_tokens
from phantom_insight.utils.config import config_to_name, model_from_config, save_config
from phantom_insight.utils.errors import FormatError, NumericalInstabilityError
from phantom_insight.utils.losses import total_loss
from phantom_insight.utils.metrics import AverageMeter, dice_iou
from phantom_insight.utils.optimizer import get_optimizer, get_scheduler
from phantom_insight.utils.run_log import RunLog, init_wandb

CHECKPOINT_NAME = "model.phin"
RUN_LOG_NAME = "runlog.jsonl"


def sample_inputs(model, sample):
    """Batched model inputs and targets for one ClueSample."""
    images, frame = model.clue_images(sample.bundle)
    target_ids = torch.tensor([box_to_tokens(sample.box)], dtype=torch.long)
    return images, frame, target_ids, sample.mask[None], sample.box[None]


def compute_loss(model, sample, config):
    images, frame, target_ids, gt_mask, gt_box = sample_inputs(model, sample)
    outputs = model(images, frame, target_ids[:, :3])
    if config.debug_finite:
        assert_finite("fg mask", outputs.fg.probs)
        assert_finite("location logits", outputs.fused.location_logits)
    return outputs, total_loss(outputs, gt_mask, gt_box, target_ids, weights=config.loss_weights)


def trainable_parameters(model):
    return [p for p in model.parameters() if p.requires_grad]


def total_optimizer_steps(num_samples, config):
    return config.epochs * math.ceil(num_samples / config.accum_steps)


def mean_losses(reports):
    """Key-wise mean of LossReport dicts from one accumulation window."""
    return {key: sum(r[key] for r in reports) / len(reports) for key in reports[0]}


def train(model, opt, scheduler, epoch, train_loader, config, run_log, global_step):
    start = time.time()
    model.train()
    total = AverageMeter()
    params = trainable_parameters(model)
    window = []

    for step, sample in enumerate(tqdm(train_loader, desc="Training epoch: " + str(epoch))):
        _, report = compute_loss(model, sample, config)

        if not torch.isfinite(report.total):
            run_log.log({
                "event": "nan_abort",
                "epoch": epoch,
                "step": global_step,
                "video_id": sample.video_id,
                "t": sample.t,
                "loss": report.to_dict(),
            })
            raise NumericalInstabilityError(
                f"non-finite loss at step {global_step} ({sample.video_id}, t={sample.t})"
            )

        loss = report.total / config.accum_steps
        loss.backward()
        window.append(report.to_dict())

        if (step + 1) % config.accum_steps == 0 or (step + 1) == len(train_loader):
            if config.clip > 0:
                torch.nn.utils.clip_grad_norm_(params, config.clip)
            lr = opt.param_groups[0]["lr"]
            opt.step()
            opt.zero_grad()
            scheduler.step()
            run_log.log({"event": "step", "epoch": epoch, "step": global_step, "lr": lr, "loss": mean_losses(window)})
            window = []
            global_step += 1

        total.update(report.total.item())

    end = time.time()
    return total.get_avg(percentage=False), end - start, global_step


@torch.no_grad()
def test(model, loader):
    """Validation mDice / mIoU with the inference procedure (decoded box prompt)."""
    start = time.time()
    model.eval()
    total_dice, total_iou = AverageMeter(), AverageMeter()

    for sample in tqdm(loader, desc="Evaluation"):
        images, frame = model.clue_images(sample.bundle)
        outputs = model.infer(images, frame)
        dice, iou = dice_iou(sample.mask.numpy(), outputs.fg.probs[0].numpy())
        total_dice.update(dice)
        total_iou.update(iou)

    end = time.time()
    return total_dice.get_avg(percentage=False), total_iou.get_avg(percentage=False), end - start


def save_model(model, config, folder):
    os.makedirs(folder, exist_ok=True)
    save_config(config, folder)
    path = os.path.join(folder, CHECKPOINT_NAME)
    save_checkpoint(model.state_dict(), path)
    return path


def load_model(checkpoint_path):
    """Rebuild a model from the config.json stored next to checkpoint_path."""
    config = model_from_config(checkpoint_path)
    model = get_architecture(config)
    tensors = load_checkpoint(checkpoint_path)
    state = model.state_dict()
    missing = sorted(set(state) - set(tensors))
    unexpected = sorted(set(tensors) - set(state))
    if missing or unexpected:
        raise FormatError(
            f"{checkpoint_path}: does not match its config (missing {missing[:3]}, unexpected {unexpected[:3]})"
        )
    for name, tensor in tensors.items():
        if tensor.shape != state[name].shape:
            raise FormatError(f"{checkpoint_path}: {name} has shape {tuple(tensor.shape)}, expected {tuple(state[name].shape)}")
    VOCAB.check_codes(tensors["vocab_codes"])
    model.load_state_dict(tensors)
    model.eval()
    return model, config


def run_training(config, manifest, out_dir, val_split="val"):
    """Train on the manifest's train split; returns the checkpoint path."""
    seed_everything(config.seed)
    torch.set_num_threads(num_threads())
    if config.debug_finite:
        torch.autograd.set_detect_anomaly(True)

    model = get_architecture(config)
    config_name = config_to_name(config)
    path = os.path.join(out_dir, config_name)

    train_set = ClueWindowDataset(manifest, "train", config.image_size, config.anyres_grid)
    val_set = ClueWindowDataset(manifest, val_split, config.image_size, config.anyres_grid)
    train_loader = get_loader(train_set, mode="train", seed=config.seed)
    val_loader = get_loader(val_set, mode="test", seed=config.seed)

    opt = get_optimizer(config.optimizer)(
        trainable_parameters(model),
        lr=config.lr_peak,
        betas=config.betas,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    scheduler = get_scheduler(
        opt,
        config.scheduler,
        total_steps=total_optimizer_steps(len(train_set), config),
        warmup_frac=config.warmup_frac,
    )

    os.makedirs(path, exist_ok=True)
    global_step = 0
    with RunLog(os.path.join(path, RUN_LOG_NAME), wandb_run=init_wandb(config, config_name)) as run_log:
        run_log.log({
            "event": "start",
            "name": config_name,
            "num_params": sum(p.numel() for p in trainable_parameters(model)),
            "num_adapted": model.num_adapted,
            "train_samples": len(train_set),
        })
        for ep in range(config.epochs):
            train_loss, train_time, global_step = train(
                model, opt, scheduler, ep, train_loader, config, run_log, global_step
            )
            val_dice, val_iou = float("nan"), float("nan")
            if len(val_set) > 0:
                val_dice, val_iou, _ = test(model, val_loader)
            run_log.log({
                "event": "epoch",
                "epoch": ep,
                "train_loss": train_loss,
                "val_mDice": val_dice,
                "val_mIoU": val_iou,
                "time": train_time,
            })

            # Print all the stats
            print("Epoch", ep, "       Time:", train_time)
            print("-------------- Training ----------------")
            print("Average Training Loss:       ", "{:.6f}".format(train_loss))
            print("--------------- Validation -------------")
            print("Validation mDice             ", "{:.4f}".format(val_dice))
            print("Validation mIoU              ", "{:.4f}".format(val_iou))
            print()

        checkpoint = save_model(model, config, path)

    return checkpoint


def main(args, config):
    manifest = read_manifest(os.path.join(args.data, "manifest.jsonl"))
    checkpoint = run_training(config, manifest, args.out)
    print("Saved checkpoint to", checkpoint)
    return checkpoint
