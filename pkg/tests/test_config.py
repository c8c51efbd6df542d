import json

import pytest

from phantom_insight.data_utils.data_stats import ABLATION_MODES, PRESETS
from phantom_insight.main import main
from phantom_insight.utils.config import config_to_name, load_config, make_config, model_from_config, save_config
from phantom_insight.utils.errors import ConfigError
from phantom_insight.utils.parsers import config_overrides, get_parser


def test_presets_validate():
    for preset in PRESETS:
        config = make_config(preset)
        assert config.preset == preset
        assert config.mode == "full"


def test_large_token_count():
    assert make_config("large").encoder_tokens == 729


def test_ablation_tags():
    assert ABLATION_MODES == ["image-only", "image+spatial", "full", "no-background", "fusion-channel"]
    for mode in ABLATION_MODES:
        assert make_config("tiny", {"mode": mode}).mode == mode


@pytest.mark.parametrize(
    "overrides",
    [
        {"mode": "motion-only"},
        {"not_a_field": 1},
        {"cue_tokens": 3},
        {"pool_tokens": 64},
        {"fusion_depth": 2},
        {"lora_rank": 0},
        {"lora_targets": ["fusion", "vision_tower"]},
        {"warmup_frac": 1.0},
        {"optimizer": "lion"},
        {"loss_weights": {"prompt": 1.0}},
    ],
)
def test_invalid_config(overrides):
    with pytest.raises(ConfigError):
        make_config("tiny", overrides)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        make_config("huge")


def test_load_config_layers(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"preset": "tiny", "epochs": 5, "seed": 3}))
    config = load_config(str(path), {"seed": 9, "epochs": None})
    assert config.preset == "tiny"
    assert config.image_size == PRESETS["tiny"]["image_size"]
    assert config.epochs == 5
    assert config.seed == 9


@pytest.mark.parametrize("content", ["{not json", "[1, 2]"])
def test_bad_config_file(tmp_path, content):
    path = tmp_path / "run.json"
    path.write_text(content)
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_config_next_to_checkpoint(tmp_path, tiny_config):
    save_config(tiny_config, str(tmp_path))
    assert model_from_config(str(tmp_path / "model.phin")) == tiny_config
    with pytest.raises(ConfigError):
        model_from_config(str(tmp_path / "elsewhere" / "model.phin"))


def test_config_name(tiny_config):
    name = config_to_name(tiny_config)
    assert name.startswith("tiny_res_16")
    assert "mode_full" in name and name.endswith("seed_0")


class TestParser:
    def test_train_overrides(self):
        args = get_parser().parse_args(["train", "--preset", "tiny", "--epochs", "3", "--mode", "image-only"])
        overrides = config_overrides(args)
        assert overrides["preset"] == "tiny"
        assert overrides["epochs"] == 3
        assert overrides["mode"] == "image-only"
        assert load_config(None, overrides).mode == "image-only"

    def test_gradcheck_defaults(self):
        args = get_parser().parse_args(["gradcheck"])
        assert (args.preset, args.num_samples, args.fd_step, args.tol) == ("desk", 200, 1e-3, 1e-3)

    def test_unknown_tag(self):
        with pytest.raises(SystemExit):
            get_parser().parse_args(["eval", "--mode", "motion-only"])

    def test_infer_needs_checkpoint(self):
        with pytest.raises(SystemExit):
            get_parser().parse_args(["infer"])


class TestExitCodes:
    def test_config_error(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
        assert "ConfigError" in capsys.readouterr().err

    def test_missing_data(self, tmp_path, capsys):
        assert main(["eval", "--data", str(tmp_path), "--pred", str(tmp_path / "pred")]) == 3
        assert "DataError" in capsys.readouterr().err

    def test_datagen(self, tmp_path):
        out = tmp_path / "data"
        assert main(["datagen", "--out", str(out), "--frame_size", "16", "--num_frames", "3"]) == 0
        assert (out / "manifest.jsonl").is_file()
