import json
import os


class RunLog(object):
    """Append-only JSONL run record, optionally mirrored to wandb."""

    def __init__(self, path, wandb_run=None):
        self.path = path
        self.wandb_run = wandb_run
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._file = open(path, "a")

    def log(self, record):
        self._file.write(json.dumps(record, sort_keys=True) + "\n")
        self._file.flush()
        if self.wandb_run is not None:
            self.wandb_run.log({k: v for k, v in record.items() if isinstance(v, (int, float))})

    def close(self):
        self._file.close()
        if self.wandb_run is not None:
            self.wandb_run.finish()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_run_log(path):
    with open(path, "r") as f:
        return [json.loads(line) for line in f if line.strip()]


def init_wandb(config, name):
    """Start a wandb run mirroring the RunLog, or None when disabled."""
    if not config.wandb:
        return None
    if config.wandb_entity is None:
        print("No wandb entity provided, Continuing without wandb")
        return None
    import wandb

    run = wandb.init(
        project=config.wandb_project,
        entity=config.wandb_entity,
        config=config.to_dict(),
        tags=["train", config.mode],
    )
    run.name = name
    return run
