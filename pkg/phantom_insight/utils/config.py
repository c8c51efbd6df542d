import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from phantom_insight.data_utils.data_stats import ABLATION_MODES, PRESETS, TASK_PROMPT
from phantom_insight.utils.errors import ConfigError
from phantom_insight.utils.optimizer import OPTIMIZERS_DICT, SCHEDULERS

LORA_TARGETS = ["fusion", "clue_encoder", "mask_decoder"]


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0

    # Model shapes (defaults are the desk preset)
    image_size: int = 64
    anyres_grid: int = 2
    encoder_patch: int = 8
    encoder_depth: int = 2
    encoder_heads: int = 4
    encoder_dim: int = 64
    llm_dim: int = 128
    fusion_depth: int = 4
    fusion_heads: int = 4
    max_seq_len: int = 1024
    pool_tokens: int = 64
    cue_tokens: int = 64
    box_tokens: int = 4
    mask_prompt_size: int = 16
    seg_patch: int = 4
    seg_dim: int = 64
    seg_depth: int = 2
    seg_heads: int = 4
    decoder_depth: int = 2
    decoder_heads: int = 4
    scoring_hidden: int = 128
    hidden_state_norm: bool = False
    prompt: str = TASK_PROMPT

    # Pipeline variant
    mode: str = "full"
    use_mask_prompt: bool = True
    use_cue_injection: bool = True

    # LoRA
    lora_rank: int = 4
    lora_alpha: Optional[float] = None
    lora_targets: List[str] = field(default_factory=lambda: list(LORA_TARGETS))

    # Optimization
    optimizer: str = "adamw"
    lr_peak: float = 0.0002
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    scheduler: str = "warmup_cosine"
    warmup_frac: float = 0.1
    epochs: int = 2
    accum_steps: int = 4
    clip: float = 0.0
    loss_weights: Dict[str, float] = field(default_factory=lambda: {"prompt": 1.0, "text": 1.0, "mask": 1.0})

    # Logging
    debug_finite: bool = False
    wandb: bool = False
    wandb_project: str = "phantom-insight"
    wandb_entity: Optional[str] = None

    @property
    def num_patches(self):
        return self.anyres_grid ** 2

    @property
    def encoder_tokens(self):
        return (self.image_size // self.encoder_patch) ** 2

    @property
    def seg_grid(self):
        return self.image_size // self.seg_patch

    def validate(self):
        if self.mode not in ABLATION_MODES:
            raise ConfigError(f"Unknown ablation mode {self.mode!r}, expected one of {ABLATION_MODES}")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be at least 8, got {self.image_size}")
        if self.encoder_patch > self.image_size or self.seg_patch > self.image_size:
            raise ConfigError("patch sizes must not exceed image_size")
        if self.image_size % self.seg_patch != 0:
            raise ConfigError("seg_patch must divide image_size")
        for dim, heads, name in [
            (self.encoder_dim, self.encoder_heads, "encoder"),
            (self.llm_dim, self.fusion_heads, "fusion"),
            (self.seg_dim, self.seg_heads, "segmenter"),
            (self.seg_dim // 2, self.decoder_heads, "decoder"),
        ]:
            if dim % heads != 0:
                raise ConfigError(f"{name} heads ({heads}) must divide its width ({dim})")
        if self.fusion_depth < 3:
            raise ConfigError("fusion_depth must be at least 3 (the last three layers are extracted)")
        if math.isqrt(self.cue_tokens) ** 2 != self.cue_tokens:
            raise ConfigError(f"cue_tokens must be a perfect square, got {self.cue_tokens}")
        if self.cue_tokens > self.pool_tokens or self.box_tokens > self.pool_tokens:
            raise ConfigError("cue_tokens and box_tokens must not exceed pool_tokens")
        if self.pool_tokens > self.encoder_tokens:
            raise ConfigError("pool_tokens must not exceed the per-image token count")
        if self.lora_rank <= 0:
            raise ConfigError(f"lora_rank must be positive, got {self.lora_rank}")
        unknown = set(self.lora_targets) - set(LORA_TARGETS)
        if unknown:
            raise ConfigError(f"Unknown LoRA targets {sorted(unknown)}")
        if self.optimizer not in OPTIMIZERS_DICT:
            raise ConfigError(f"Optimizer {self.optimizer} not supported.")
        if self.scheduler not in SCHEDULERS:
            raise ConfigError(f"Scheduler {self.scheduler} not supported.")
        if self.epochs < 1 or self.accum_steps < 1:
            raise ConfigError("epochs and accum_steps must be positive")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac must lie in [0, 1), got {self.warmup_frac}")
        if set(self.loss_weights) != {"prompt", "text", "mask"}:
            raise ConfigError("loss_weights needs exactly the keys prompt, text, mask")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def make_config(preset="desk", overrides=None):
    """Build a RunConfig from a preset plus overrides, then validate it."""
    if preset not in PRESETS:
        raise ConfigError(f"Unknown preset {preset!r}, expected one of {sorted(PRESETS)}")
    values = dict(PRESETS[preset])
    values["preset"] = preset
    values.update(overrides or {})

    unknown = set(values) - FIELD_NAMES
    if unknown:
        raise ConfigError(f"Unknown config keys {sorted(unknown)}")
    if "betas" in values:
        values["betas"] = tuple(values["betas"])
    try:
        config = RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e
    return config.validate()


def load_config(path=None, overrides=None):
    """Preset defaults -> JSON file -> explicit overrides."""
    values = {}
    if path is not None:
        try:
            with open(path, "r") as f:
                values = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file {path} not found") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    preset = values.pop("preset", "desk")
    return make_config(preset, values)


def save_config(config, folder):
    os.makedirs(folder, exist_ok=True)
    with open(os.path.join(folder, "config.json"), "w") as f:
        json.dump(config.to_dict(), f, indent=2)


def config_to_name(config):
    return os.path.join(
        f"{config.preset}_res_{config.image_size}",
        f"mode_{config.mode}_grid_{config.anyres_grid}",
        f"lora_r_{config.lora_rank}",
        f"{config.optimizer}_lr_{config.lr_peak}_decay_{config.weight_decay}"
        + f"_accum_{config.accum_steps}_epochs_{config.epochs}",
        f"seed_{config.seed}",
    )


def model_from_config(checkpoint_path):
    """Return the RunConfig stored next to a checkpoint."""
    path = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "config.json")
    if not os.path.isfile(path):
        raise ConfigError(f"No config.json next to checkpoint {checkpoint_path}")
    return load_config(path)
