"""Run configuration documents (JSON) and dataclass (de)serialisation."""
from __future__ import annotations

import dataclasses
import enum
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .attention import PamConfig
from .features import ExtractorConfig
from .reconstruction import ReconstructionConfig
from .segmentation import SegConfig


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 3e-4
    epochs: int = 100
    steps: int | None = None  # overrides epochs when set
    batch_size: int | None = None  # None -> 6 at x2, 5 at x4 (SR); 6 for segmentation
    seed: int = 0
    loss: str = "sr_l1"
    patch_size: int | None = 32  # LR pixels for SR, HR pixels for segmentation; None = full frame
    checkpoint_every: int = 0  # in steps; 0 disables intermediate checkpoints
    lr_schedule: str = "constant"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in ("sr_l1", "sr_l1_ssim", "seg_ce_jaccard"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.steps is not None and self.steps < 0:
            raise ValueError("steps must be >= 0")

    def resolved_batch_size(self, scale=None):
        if self.batch_size is not None:
            return self.batch_size
        return 5 if scale == 4 else 6


@dataclass
class RunConfig:
    dataset: str = "data"
    out_dir: str = "runs/default"
    scale: int = 2
    seed: int = 0
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    pam: PamConfig = field(default_factory=PamConfig)
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)
    seg: SegConfig = field(default_factory=SegConfig)
    train_sr: TrainConfig = field(default_factory=TrainConfig)
    train_seg: TrainConfig = field(
        default_factory=lambda: TrainConfig(loss="seg_ce_jaccard", patch_size=None)
    )
    seg_input: str = "sr"  # "sr": segment SR outputs; "hr": segment ground-truth HR frames
    sr_checkpoint: str | None = None

    def __post_init__(self):
        if self.seg_input not in ("sr", "hr"):
            raise ValueError("seg_input must be 'sr' or 'hr'")
        if self.reconstruction.scale != self.scale:
            self.reconstruction = dataclasses.replace(self.reconstruction, scale=self.scale)


def to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def from_dict(cls, doc, path=""):
    """Build dataclass ``cls`` from a mapping, rejecting unknown keys at any depth."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown config keys{where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        hint = hints[key]
        sub = f"{path}.{key}" if path else key
        if dataclasses.is_dataclass(hint):
            value = from_dict(hint, value, sub)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return from_dict(RunConfig, doc)


def dump_run_config(cfg: RunConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"
