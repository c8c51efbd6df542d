import json
import os

import numpy as np
import pytest
import torch

from phantom_insight import train as train_module
from phantom_insight.ablate import run_ablation
from phantom_insight.data_utils.dataloader import ClueWindowDataset, get_loader
from phantom_insight.data_utils.image_io import read_gray
from phantom_insight.data_utils.synth import generate_dataset
from phantom_insight.evaluate import run_evaluation
from phantom_insight.infer import read_video_dir, run_inference, run_split_inference
from phantom_insight.main import main, run_gradcheck
from phantom_insight.models import get_architecture
from phantom_insight.train import RUN_LOG_NAME, compute_loss, load_model, run_training, trainable_parameters
from phantom_insight.utils.config import make_config
from phantom_insight.utils.errors import DataError, InvalidArgumentError, NumericalInstabilityError
from phantom_insight.utils.losses import LOSS_KEYS, LossReport, seg_loss
from phantom_insight.utils.optimizer import get_optimizer, get_scheduler
from phantom_insight.utils.run_log import RunLog, init_wandb, read_run_log


def train_tiny(manifest, out_dir, **overrides):
    config = make_config("tiny", dict({"epochs": 1}, **overrides))
    return run_training(config, manifest, str(out_dir)), config


@pytest.fixture
def checkpoint(tiny_dataset, tmp_path):
    path, _ = train_tiny(tiny_dataset, tmp_path / "ckpt")
    return path


def first_sample(manifest, config):
    return ClueWindowDataset(manifest, "train", config.image_size, config.anyres_grid)[0]


class TestObjective:
    def test_components_sum(self, tiny_dataset, tiny_config):
        model = get_architecture(tiny_config)
        _, report = compute_loss(model, first_sample(tiny_dataset, tiny_config), tiny_config)
        expected = report.prompt + report.text + report.mask
        assert report.total.item() == pytest.approx(expected.item(), rel=1e-6)
        assert set(report.to_dict()) == set(LOSS_KEYS)
        assert all(np.isfinite(v) for v in report.to_dict().values())

    def test_no_background(self, tiny_dataset):
        config = make_config("tiny", {"mode": "no-background"})
        model = get_architecture(config)
        sample = first_sample(tiny_dataset, config)
        outputs, report = compute_loss(model, sample, config)
        assert outputs.bg is None and outputs.cues.bg_cue is None
        assert report.mask.item() == pytest.approx(seg_loss(sample.mask[None], outputs.fg.probs).item(), rel=1e-6)

        report.total.backward()
        grad = model.cue_head.scoring.block[0].weight.grad
        assert grad is not None and grad.abs().sum() > 0

    def test_collapsed_learned_box(self, tiny_dataset, tiny_config):
        model = get_architecture(tiny_config)
        last = model.cue_head.generator.decoder_b.block[-1]
        with torch.no_grad():
            last.weight.zero_()
            last.bias.fill_(0.3)
        outputs, report = compute_loss(model, first_sample(tiny_dataset, tiny_config), tiny_config)
        assert torch.allclose(outputs.cues.fg_box, torch.full((1, 4), torch.sigmoid(torch.tensor(0.3)).item()))
        x1, y1, x2, y2 = outputs.box_prompt[0].tolist()
        assert x1 < x2 and y1 < y2
        assert np.isfinite(report.total.item())
        report.total.backward()

    def test_frozen_segmenter_encoder(self, tiny_dataset, tiny_config):
        model = get_architecture(tiny_config)
        _, report = compute_loss(model, first_sample(tiny_dataset, tiny_config), tiny_config)
        report.total.backward()
        assert all(p.grad is None for p in model.seg_encoder.parameters())

    def test_step_touches_only_adapters_and_heads(self, tiny_dataset, tiny_config):
        model = get_architecture(tiny_config)
        before = {k: v.clone() for k, v in model.state_dict().items()}
        frozen = {name for name, p in model.named_parameters() if not p.requires_grad}
        assert any(name.startswith("seg_encoder.") for name in frozen)
        assert any(name.startswith("fusion.") and name.endswith(".weight") for name in frozen)

        opt = get_optimizer("adamw")(trainable_parameters(model), lr=1e-3)
        _, report = compute_loss(model, first_sample(tiny_dataset, tiny_config), tiny_config)
        report.total.backward()
        opt.step()

        after = model.state_dict()
        for name in frozen:
            assert torch.equal(after[name], before[name]), name
        assert torch.equal(after["vocab_codes"], before["vocab_codes"])
        changed = {name for name in after if not torch.equal(after[name], before[name])}
        assert any(name.endswith("lora_B") for name in changed)
        assert any(name.startswith("cue_head.") for name in changed)
        assert changed.isdisjoint(frozen)

    def test_accumulation_matches_mean(self, tiny_dataset, tiny_config):
        model = get_architecture(tiny_config)
        dataset = ClueWindowDataset(tiny_dataset, "train", tiny_config.image_size, tiny_config.anyres_grid)
        params = trainable_parameters(model)

        for sample in (dataset[0], dataset[1]):
            (compute_loss(model, sample, tiny_config)[1].total / 2).backward()
        accumulated = [None if p.grad is None else p.grad.clone() for p in params]

        model.zero_grad()
        joint = (compute_loss(model, dataset[0], tiny_config)[1].total + compute_loss(model, dataset[1], tiny_config)[1].total) / 2
        joint.backward()
        for a, p in zip(accumulated, params):
            assert (a is None) == (p.grad is None)
            if a is not None:
                assert torch.allclose(a, p.grad, atol=1e-6)


class TestTraining:
    def test_writes_run(self, tiny_dataset, tmp_path, capsys):
        path, config = train_tiny(tiny_dataset, tmp_path / "ckpt")
        folder = os.path.dirname(path)
        assert os.path.basename(path) == "model.phin"
        assert os.path.isfile(os.path.join(folder, "config.json"))
        assert "Validation mDice" in capsys.readouterr().out

        records = read_run_log(os.path.join(folder, RUN_LOG_NAME))
        events = [r["event"] for r in records]
        assert events[0] == "start" and events[-1] == "epoch"
        assert events.count("step") == 1
        assert records[0]["num_adapted"] > 0
        assert 0.0 <= records[-1]["val_mDice"] <= 1.0

    def test_deterministic(self, tiny_dataset, tmp_path):
        a, _ = train_tiny(tiny_dataset, tmp_path / "a", accum_steps=1)
        b, _ = train_tiny(tiny_dataset, tmp_path / "b", accum_steps=1)
        with open(a, "rb") as fa, open(b, "rb") as fb:
            assert fa.read() == fb.read()

    def test_load_round_trip(self, tiny_dataset, tmp_path):
        path, config = train_tiny(tiny_dataset, tmp_path / "ckpt")
        model, loaded = load_model(path)
        assert loaded == config
        again, _ = load_model(path)
        for (name, x), (_, y) in zip(model.state_dict().items(), again.state_dict().items()):
            assert torch.equal(x, y), name

    def test_step_logs_window_mean(self, tiny_dataset, tiny_config, tmp_path, monkeypatch):
        model = get_architecture(tiny_config)
        values = iter([1.0, 3.0])

        def fake_loss(*args):
            value = torch.tensor(next(values), requires_grad=True)
            return None, LossReport(**{k: value for k in LOSS_KEYS})

        monkeypatch.setattr(train_module, "compute_loss", fake_loss)
        dataset = ClueWindowDataset(tiny_dataset, "train", tiny_config.image_size, tiny_config.anyres_grid)
        opt = get_optimizer("adamw")(trainable_parameters(model), lr=1e-3)
        scheduler = get_scheduler(opt, "warmup_cosine", total_steps=1, warmup_frac=0.0)
        log_path = tmp_path / "runlog.jsonl"
        with RunLog(str(log_path)) as run_log:
            train_module.train(model, opt, scheduler, 0, [dataset[0], dataset[1]], tiny_config, run_log, 0)

        steps = [r for r in read_run_log(str(log_path)) if r["event"] == "step"]
        assert len(steps) == 1
        assert steps[0]["loss"] == {k: 2.0 for k in LOSS_KEYS}

    def test_nan_abort(self, tiny_dataset, tiny_config, tmp_path, monkeypatch):
        model = get_architecture(tiny_config)
        nan = torch.tensor(float("nan"))
        monkeypatch.setattr(train_module, "compute_loss", lambda *args: (None, LossReport(**{k: nan for k in LOSS_KEYS})))

        dataset = ClueWindowDataset(tiny_dataset, "train", tiny_config.image_size, tiny_config.anyres_grid)
        opt = get_optimizer("adamw")(trainable_parameters(model), lr=1e-3)
        scheduler = get_scheduler(opt, "warmup_cosine", total_steps=4, warmup_frac=0.1)
        log_path = tmp_path / "runlog.jsonl"
        with RunLog(str(log_path)) as run_log:
            with pytest.raises(NumericalInstabilityError):
                train_module.train(model, opt, scheduler, 0, get_loader(dataset, "train"), tiny_config, run_log, 0)

        records = read_run_log(str(log_path))
        assert records[-1]["event"] == "nan_abort"
        assert records[-1]["video_id"].startswith("train_")


class TestInference:
    def test_single_video(self, tiny_dataset, checkpoint, tmp_path):
        video_dir = tiny_dataset.path("val_000")
        out = tmp_path / "pred"
        predictions = run_inference(checkpoint, video_dir, str(out), overlay=True)

        assert [p.t for p in predictions] == [3, 4]
        for p in predictions:
            assert p.mask.shape == (16, 16)
            assert p.mask.min() >= 0.0 and p.mask.max() <= 1.0
            assert p.box_prompt == pytest.approx(list(p.text_box.coords), abs=1e-6)
            assert (out / "masks" / f"{p.t:04d}.pgm").is_file()
            assert (out / "overlays" / f"{p.t:04d}.ppm").is_file()

        lines = (out / "boxes.jsonl").read_text().splitlines()
        assert [json.loads(line)["box"] for line in lines] == [p.text_box.format() for p in predictions]
        assert read_gray(str(out / "masks" / "0003.pgm")).shape == (16, 16)

    def test_empty_video_dir(self, tmp_path):
        with pytest.raises(DataError):
            read_video_dir(str(tmp_path))


class TestEvaluation:
    def test_split(self, tiny_dataset, checkpoint, tmp_path):
        pred = tmp_path / "pred"
        assert run_split_inference(checkpoint, tiny_dataset.root, "val", str(pred)) == 1
        rows, mean = run_evaluation(str(pred), tiny_dataset, split="val", tag="full")
        assert [name for name, _ in rows] == ["val_000"]
        s_alpha, f_w, e_phi, mae, dice, iou = mean.values()
        assert all(0.0 <= v <= 1.0 for v in (s_alpha, f_w, e_phi, mae, dice, iou))
        assert dice >= iou

    def test_missing_prediction(self, tiny_dataset, checkpoint, tmp_path):
        pred = tmp_path / "pred"
        run_split_inference(checkpoint, tiny_dataset.root, "val", str(pred))
        os.remove(pred / "val_000" / "masks" / "0004.pgm")
        with pytest.raises(DataError, match="val_000"):
            run_evaluation(str(pred), tiny_dataset)

    def test_bad_tag(self, tiny_dataset, tmp_path):
        with pytest.raises(InvalidArgumentError):
            run_evaluation(str(tmp_path), tiny_dataset, tag="motion-only")

    def test_empty_split(self, tiny_dataset, tmp_path):
        with pytest.raises(DataError):
            run_evaluation(str(tmp_path), tiny_dataset, split="test")


class TestRunLog:
    def test_records(self, tmp_path):
        path = str(tmp_path / "log" / "runlog.jsonl")
        with RunLog(path) as run_log:
            run_log.log({"event": "step", "loss": 1.5})
            run_log.log({"b": 1, "a": 2})
        assert read_run_log(path) == [{"event": "step", "loss": 1.5}, {"a": 2, "b": 1}]
        with open(path) as f:
            assert f.readlines()[1].startswith('{"a"')

    def test_wandb_disabled(self, tiny_config, capsys):
        assert init_wandb(tiny_config, "run") is None
        config = make_config("tiny", {"wandb": True})
        assert init_wandb(config, "run") is None
        assert "No wandb entity provided" in capsys.readouterr().out


def test_gradient_check(tiny_config):
    assert run_gradcheck(tiny_config, num_samples=60) <= 1e-3


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--preset", "tiny", "--num_samples", "20"]) == 0
    assert "Max relative gradient error" in capsys.readouterr().out


@pytest.mark.slow
def test_desk_gradient_check():
    assert run_gradcheck(make_config("desk"), num_samples=200) <= 1e-3


@pytest.mark.slow
def test_desk_scale_training(tmp_path):
    manifest = generate_dataset(str(tmp_path / "data"), seed=0)
    path = run_training(make_config("desk", {"epochs": 2}), manifest, str(tmp_path / "ckpt"))
    pred = tmp_path / "pred"
    run_split_inference(path, manifest.root, "val", str(pred))
    _, mean = run_evaluation(str(pred), manifest)
    assert mean.m_dice >= 0.70


@pytest.mark.slow
def test_ablation_trends(tmp_path):
    manifest = generate_dataset(str(tmp_path / "data"), seed=0)
    config = make_config("desk", {"epochs": 2})
    modes = ["image-only", "image+spatial", "full", "no-background"]
    dice = {mode: report.m_dice for mode, report in run_ablation(config, manifest, str(tmp_path / "ablate"), modes=modes)}

    assert dice["full"] >= dice["image-only"] + 0.03
    low, high = dice["image-only"], dice["full"]
    spatial = dice["image+spatial"]
    assert low <= spatial <= high or min(abs(spatial - low), abs(spatial - high)) <= 0.01
    assert dice["full"] >= dice["no-background"] + 0.02
