"""Run configuration: nested dataclasses addressed by flat dotted keys.

A config file is JSON whose keys are either nested objects or flat dotted
paths (``{"fusion.heads": 4}``). Precedence is command-line flags, then the
config file, then the defaults below.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Invalid configuration value. ``field`` names the offending dotted key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class DataConfig:
    height: int = 64
    width: int = 64
    num_classes: int = 4
    count: int = 64
    # classes rendered only in one modality
    rgb_only: list[int] = field(default_factory=lambda: [2])
    thermal_only: list[int] = field(default_factory=lambda: [3])
    exclusivity: float = 1.0
    grid: int = 2
    object_prob: float = 0.85
    # object height and width as fractions of the cell size
    size_range: list[float] = field(default_factory=lambda: [0.4, 0.9])
    noise: float = 0.04
    root: str | None = None
    # raw label value remapped to class 0 when loading from disk
    unlabeled_value: int | None = None


@dataclass
class EncoderConfig:
    widths: list[int] = field(default_factory=lambda: [32, 64, 64])
    strides: list[int] = field(default_factory=lambda: [2, 2, 2])
    attn_reduction: int = 4
    spatial_kernel: int = 7

    @property
    def total_stride(self) -> int:
        s = 1
        for v in self.strides:
            s *= v
        return s


@dataclass
class PromptConfig:
    proj_dim: int = 128
    conv_width: int = 64
    hidden: int = 128
    eps: float = 1e-8


@dataclass
class FusionConfig:
    d_model: int = 64
    d_attn: int = 64
    heads: int = 4
    ffn_dim: int = 128
    blocks: int = 1
    stages: int = 3
    stage_width: list[int] = field(default_factory=lambda: [64, 32, 16])
    se_reduction: int = 4
    ls: int | None = None  # None -> equal to channel.lb
    positional: bool = True


@dataclass
class ChannelConfig:
    lb: int = 4096
    flip_prob: float = 0.0
    eval_flip_prob: float = 0.0
    temperature: float = 1.0
    anneal: float = 1.0  # per-epoch multiplicative factor on temperature
    min_temperature: float = 0.5
    grad_mode: str = "straight-through"
    eval_sampling: str = "gumbel"
    allow_ls_mismatch: bool = False


@dataclass
class DecoderConfig:
    grid_h: int = 8
    grid_w: int = 8
    width: int = 64


@dataclass
class LossConfig:
    weight: float = 0.5  # dice weight; soft-CE gets 1 - weight
    smoothing: float = 0.1
    include_background: bool = True
    skip_empty: bool = True


@dataclass
class TrainConfig:
    pretrain_epochs: int = 0
    epochs: int = 300
    batch_size: int = 4
    lr: float = 1e-4
    pretrain_lr: float | None = None
    lr_decay: float = 0.9
    lr_step: int = 20
    seed: int = 0
    data_seed: int = 0
    split_seed: int = 0
    channel_seed: int = 1234
    modality: str = "both"
    pretrain: bool = True
    select_best: bool = True
    log_every: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str = "runs"

    @property
    def ls(self) -> int:
        return self.fusion.ls if self.fusion.ls is not None else self.channel.lb

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def flat(self) -> dict[str, Any]:
        return flatten(self.to_dict())

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def copy(self) -> "RunConfig":
        return from_dict(self.to_dict())

    def validate(self) -> "RunConfig":
        d, c, t = self.data, self.channel, self.train
        if d.num_classes < 2:
            raise ConfigError("data.num_classes", "at least 2 classes required")
        if d.height <= 0 or d.width <= 0:
            raise ConfigError("data.height", "image dims must be positive")
        for k in list(d.rgb_only) + list(d.thermal_only):
            if not 0 < k < d.num_classes:
                raise ConfigError("data.rgb_only", f"class {k} outside [1, {d.num_classes})")
        if set(d.rgb_only) & set(d.thermal_only):
            raise ConfigError("data.thermal_only", "a class cannot be exclusive to both modalities")
        if not 0.0 <= d.exclusivity <= 1.0:
            raise ConfigError("data.exclusivity", "must lie in [0, 1]")
        if len(d.size_range) != 2 or not 0.0 < d.size_range[0] <= d.size_range[1] <= 1.0:
            raise ConfigError("data.size_range", "need two fractions with 0 < lo <= hi <= 1")
        s = self.encoder.total_stride
        if d.height % s or d.width % s:
            raise ConfigError("encoder.strides", f"image {d.height}x{d.width} not divisible by stride {s}")
        if len(self.encoder.widths) != len(self.encoder.strides):
            raise ConfigError("encoder.widths", "widths and strides must have equal length")
        f = self.fusion
        if f.d_attn % f.heads:
            raise ConfigError("fusion.heads", f"d_attn={f.d_attn} not divisible by heads={f.heads}")
        if len(f.stage_width) != f.stages:
            raise ConfigError("fusion.stage_width", f"expected {f.stages} entries")
        if not 0.0 <= c.flip_prob <= 1.0:
            raise ConfigError("channel.flip_prob", "must lie in [0, 1]")
        if not 0.0 <= c.eval_flip_prob <= 1.0:
            raise ConfigError("channel.eval_flip_prob", "must lie in [0, 1]")
        if c.temperature <= 0:
            raise ConfigError("channel.temperature", "must be positive")
        if c.lb <= 0:
            raise ConfigError("channel.lb", "must be positive")
        if c.grad_mode not in ("straight-through", "detached"):
            raise ConfigError("channel.grad_mode", f"unknown mode {c.grad_mode!r}")
        if c.eval_sampling not in ("gumbel", "argmax"):
            raise ConfigError("channel.eval_sampling", f"unknown mode {c.eval_sampling!r}")
        if self.ls != c.lb and not c.allow_ls_mismatch:
            raise ConfigError("fusion.ls", f"ls={self.ls} differs from lb={c.lb}; set channel.allow_ls_mismatch")
        grid_cells = self.decoder.grid_h * self.decoder.grid_w
        if c.lb % grid_cells:
            raise ConfigError("channel.lb", f"lb={c.lb} not divisible by decoder grid {self.decoder.grid_h}x{self.decoder.grid_w}")
        for dim, g, name in ((d.height, self.decoder.grid_h, "grid_h"), (d.width, self.decoder.grid_w, "grid_w")):
            ratio = dim // g if g > 0 else 0
            if g <= 0 or dim % g or ratio & (ratio - 1):
                raise ConfigError(f"decoder.{name}", f"{dim} is not {g} times a power of two")
        if self.decoder.grid_h and d.height // self.decoder.grid_h != d.width // self.decoder.grid_w:
            raise ConfigError("decoder.grid_w", "grid must upsample both axes by the same factor")
        lc = self.loss
        if not 0.0 <= lc.weight <= 1.0:
            raise ConfigError("loss.weight", "must lie in [0, 1]")
        if not 0.0 <= lc.smoothing < 1.0:
            raise ConfigError("loss.smoothing", "must lie in [0, 1)")
        if t.epochs < 0 or t.pretrain_epochs < 0:
            raise ConfigError("train.epochs", "epoch counts must be non-negative")
        if t.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if t.modality not in ("both", "rgb", "thermal"):
            raise ConfigError("train.modality", f"unknown modality {t.modality!r}")
        return self


def flatten(d: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value: Any, current: Any, annotation: str) -> Any:
    if isinstance(value, str):
        text = value.strip()
        if text.lower() in ("none", "null"):
            return None
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
    if value is None:
        return None
    if "bool" in annotation and not isinstance(value, bool):
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if annotation.startswith("list") and not isinstance(value, list):
        value = [value]
    if annotation.startswith("int") and isinstance(value, float) and value.is_integer():
        value = int(value)
    if annotation.startswith("float") and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if annotation.startswith(("int", "float")) and not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    return value


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Set dotted keys in place; unknown keys raise ConfigError."""
    for key, value in overrides.items():
        parts = key.split(".")
        target: Any = cfg
        for p in parts[:-1]:
            if not dataclasses.is_dataclass(target) or not hasattr(target, p):
                raise ConfigError(key, "unknown config key")
            target = getattr(target, p)
        leaf = parts[-1]
        fields = {f.name: f for f in dataclasses.fields(target)} if dataclasses.is_dataclass(target) else {}
        if leaf not in fields or dataclasses.is_dataclass(getattr(target, leaf)):
            raise ConfigError(key, "unknown config key")
        ann = str(fields[leaf].type)
        setattr(target, leaf, _coerce(key, value, getattr(target, leaf), ann))
    return cfg


def from_dict(d: dict[str, Any]) -> RunConfig:
    return apply_overrides(RunConfig(), flatten(d))


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None, validate: bool = True) -> RunConfig:
    """Defaults, then the JSON file, then ``overrides``.

    A run manifest (``run.json``) is accepted too; its embedded config is used.
    """
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        with p.open() as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(str(p), f"not valid JSON ({exc})") from exc
        if isinstance(raw, dict) and "command" in raw and isinstance(raw.get("config"), dict):
            raw = raw["config"]
        apply_overrides(cfg, flatten(raw))
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg.validate() if validate else cfg


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.flat(), indent=2, sort_keys=True) + "\n")


def parse_assignments(items: list[str] | None) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out
