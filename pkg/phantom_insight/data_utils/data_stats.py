# Model and dataset presets to look up by name

TASK_PROMPT = (
    "There are animal categories similar to the background in the image, please locate them."
)

ABLATION_MODES = ["image-only", "image+spatial", "full", "no-background", "fusion-channel"]

# Which clue images each ablation feeds to the fusion backbone
CLUE_ROLES_DICT = {
    "image-only": ["frame_t"],
    "image+spatial": ["frame_t", "patches"],
    "full": ["frame_t-2", "frame_t-1", "frame_t", "flow", "patches"],
    "no-background": ["frame_t-2", "frame_t-1", "frame_t", "flow", "patches"],
    "fusion-channel": ["frame_t-2", "frame_t-1", "frame_t", "flow", "patches"],
}

# Network shapes
PRESETS = {
    "desk": {
        "image_size": 64,
        "anyres_grid": 2,
        "encoder_patch": 8,
        "encoder_depth": 2,
        "encoder_heads": 4,
        "encoder_dim": 64,
        "llm_dim": 128,
        "fusion_depth": 4,
        "fusion_heads": 4,
        "max_seq_len": 1024,
        "pool_tokens": 64,
        "cue_tokens": 64,
        "box_tokens": 4,
        "mask_prompt_size": 16,
        "seg_patch": 4,
        "seg_dim": 64,
        "seg_depth": 2,
        "seg_heads": 4,
        "decoder_depth": 2,
        "decoder_heads": 4,
        "scoring_hidden": 128,
        "lora_rank": 4,
    },
    "large": {
        "image_size": 384,
        "anyres_grid": 2,
        "encoder_patch": 14,
        "encoder_depth": 27,
        "encoder_heads": 16,
        "encoder_dim": 1152,
        "llm_dim": 3084,
        "fusion_depth": 28,
        "fusion_heads": 12,
        "max_seq_len": 8192,
        "pool_tokens": 256,
        "cue_tokens": 256,
        "box_tokens": 4,
        "mask_prompt_size": 64,
        "seg_patch": 16,
        "seg_dim": 256,
        "seg_depth": 12,
        "seg_heads": 8,
        "decoder_depth": 2,
        "decoder_heads": 8,
        "scoring_hidden": 1024,
        "lora_rank": 128,
    },
    # Small enough for finite-difference gradient checks in double precision
    "tiny": {
        "image_size": 16,
        "anyres_grid": 2,
        "encoder_patch": 8,
        "encoder_depth": 1,
        "encoder_heads": 2,
        "encoder_dim": 16,
        "llm_dim": 16,
        "fusion_depth": 3,
        "fusion_heads": 2,
        "max_seq_len": 256,
        "pool_tokens": 4,
        "cue_tokens": 4,
        "box_tokens": 4,
        "mask_prompt_size": 4,
        "seg_patch": 4,
        "seg_dim": 16,
        "seg_depth": 1,
        "seg_heads": 2,
        "decoder_depth": 2,
        "decoder_heads": 2,
        "scoring_hidden": 16,
        "lora_rank": 2,
    },
}

# Synthetic benchmark: number of videos per split
SPLIT_DICT = {
    "train": 40,
    "val": 8,
    "unseen": 8,
}

# Scene generation parameters per split
SCENE_DICT = {
    "train": {"octaves": 3, "base_frequency": 8, "distractors": 0},
    "val": {"octaves": 3, "base_frequency": 8, "distractors": 0},
    "unseen": {"octaves": 4, "base_frequency": 6, "distractors": 2},
}

# Offsets keeping per-split seeds disjoint
SEED_OFFSET_DICT = {
    "train": 0,
    "val": 100_000,
    "unseen": 200_000,
}

DEFAULT_FRAME_SIZE = 64
DEFAULT_NUM_FRAMES = 8
