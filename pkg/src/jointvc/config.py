"""Hierarchical configuration with ``paper`` and ``toy`` profiles.

Config files are JSON objects whose keys mirror the dataclass fields below.
Unknown keys are rejected with the full dotted key in the message.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class ContentConfig:
    kind: str = "weo"  # weo | ppg | stub
    dim: int | None = 1024
    model_id: str = "openai/whisper-medium"
    seed: int = 1234
    cache_dir: str = "cache"


@dataclass
class ModelConfig:
    content_dim: int = 1024
    latent_channels: int = 192
    hidden_channels: int = 192
    speaker_dim: int = 256
    speaker_hidden: int = 256
    speaker_layers: int = 3
    speaker_normalize: bool = True
    n_mels: int = 80
    spec_channels: int = 513
    enc_kernel: int = 5
    enc_layers: int = 16
    flow_layers: int = 4
    flow_wn_layers: int = 4
    upsample_rates: list[int] = field(default_factory=lambda: [10, 8, 2, 2])
    upsample_kernels: list[int] = field(default_factory=lambda: [20, 16, 4, 4])
    upsample_initial_channel: int = 512
    resblock_kernels: list[int] = field(default_factory=lambda: [3, 7, 11])
    resblock_dilations: list[list[int]] = field(default_factory=lambda: [[1, 3, 5]] * 3)
    disc_periods: list[int] = field(default_factory=lambda: [2, 3, 5, 7, 11])
    disc_channels: list[int] = field(default_factory=lambda: [32, 128, 512, 1024, 1024])
    disc_scale_channels: list[int] = field(default_factory=lambda: [16, 64, 256, 1024, 1024, 1024])

    def validate(self) -> None:
        rates, kernels = list(self.upsample_rates), list(self.upsample_kernels)
        if len(rates) != 4 or len(kernels) != 4:
            raise ConfigError("model.upsample_rates and model.upsample_kernels need exactly 4 entries")
        if math.prod(rates) != 320:
            raise ConfigError(f"model.upsample_rates {rates} multiply to {math.prod(rates)}, not 320")
        for u, k in zip(rates, kernels):
            if k < u or (k - u) % 2:
                raise ConfigError(f"model.upsample_kernels: kernel {k} is invalid for rate {u}")
        for name in ("content_dim", "latent_channels", "hidden_channels", "speaker_dim", "speaker_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if len(self.resblock_kernels) != len(self.resblock_dilations):
            raise ConfigError("model.resblock_kernels and model.resblock_dilations differ in length")


@dataclass
class TrainConfig:
    phase1_steps: int = 100_000
    phase2_steps: int = 200_000
    seg_frames_phase1: int = 28
    seg_frames_phase2: int = 75
    batch_phase1: int = 108
    batch_phase2: int = 42
    scl_weight_phase1: float = 0.0
    scl_weight_phase2: float = 1.0
    min_samples: int = 24_000
    max_samples: int = 96_000
    learning_rate: float = 2e-4
    betas: list[float] = field(default_factory=lambda: [0.8, 0.99])
    weight_decay: float = 0.01
    lr_decay: float = 0.999875
    c_mel: float = 45.0
    c_kl: float = 1.0
    checkpoint_interval: int = 10_000
    seed: int = 1234
    out_dir: str = "runs/default"
    manifest: str = ""
    fp16: bool = False

    def validate(self) -> None:
        if self.phase1_steps <= 0 or self.phase2_steps < 0:
            raise ConfigError("train.phase1_steps must be positive and train.phase2_steps non-negative")
        for seg in (self.seg_frames_phase1, self.seg_frames_phase2):
            if seg <= 0 or seg * 320 > self.min_samples:
                raise ConfigError(f"segment of {seg} frames does not fit train.min_samples={self.min_samples}")
        if self.min_samples > self.max_samples:
            raise ConfigError("train.min_samples exceeds train.max_samples")
        if self.batch_phase1 <= 0 or self.batch_phase2 <= 0:
            raise ConfigError("batch sizes must be positive")


@dataclass
class InferConfig:
    temperature: float = 0.667
    min_seconds: float = 1.0
    max_seconds: float = 30.0


@dataclass
class Config:
    content: ContentConfig = field(default_factory=ContentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferConfig = field(default_factory=InferConfig)
    device: str = "cpu"

    def validate(self) -> "Config":
        self.model.validate()
        self.train.validate()
        if self.content.kind not in ("weo", "ppg", "stub"):
            raise ConfigError(f"content.kind must be weo, ppg or stub, got {self.content.kind!r}")
        if self.content.dim is not None and self.content.dim != self.model.content_dim:
            raise ConfigError(
                f"content.dim={self.content.dim} disagrees with model.content_dim={self.model.content_dim}"
            )
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


TOY_OVERRIDES: dict[str, Any] = {
    "content": {"kind": "stub", "dim": 64, "model_id": "stub"},
    "model": {
        "content_dim": 64,
        "latent_channels": 32,
        "hidden_channels": 64,
        "speaker_dim": 64,
        "speaker_hidden": 64,
        "enc_layers": 4,
        "flow_wn_layers": 2,
        "upsample_initial_channel": 64,
        "resblock_kernels": [3],
        "resblock_dilations": [[1, 3]],
        "disc_channels": [8, 16, 32, 32, 32],
        "disc_scale_channels": [8, 16, 32, 32, 32, 32],
    },
    "train": {
        "phase1_steps": 500,
        "phase2_steps": 1000,
        "batch_phase1": 4,
        "batch_phase2": 4,
        "checkpoint_interval": 250,
    },
}

PROFILES = {"paper": {}, "toy": TOY_OVERRIDES}


def _merge(obj, updates: dict, prefix: str = ""):
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in updates.items():
        dotted = f"{prefix}{key}"
        if key not in names:
            raise ConfigError(f"unknown config key: {dotted}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {dotted} must be an object")
            _merge(current, value, dotted + ".")
        else:
            setattr(obj, key, value)
    return obj


def merge(cfg: Config, updates: dict) -> Config:
    return _merge(cfg, updates)


def from_dict(data: dict, profile: str = "paper") -> Config:
    return merge(build(profile), data).validate()


def build(profile: str = "paper") -> Config:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return merge(Config(), json.loads(json.dumps(PROFILES[profile])))


def load(path=None, profile: str = "paper", overrides: dict | None = None) -> Config:
    """Defaults for ``profile``, then the JSON file at ``path``, then ``overrides``."""
    cfg = build(profile)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        merge(cfg, data)
    if overrides:
        merge(cfg, overrides)
    return cfg.validate()


def reference_doc() -> str:
    """Markdown listing of every key with its ``paper`` and ``toy`` default."""
    paper, toy = build("paper").to_dict(), build("toy").to_dict()
    lines = ["# Configuration reference", "",
             "Generated by `jointvc config-reference`.", "",
             "| key | paper | toy |", "|---|---|---|"]

    def walk(a, b, prefix=""):
        for key, value in a.items():
            if isinstance(value, dict):
                walk(value, b[key], f"{prefix}{key}.")
            else:
                lines.append(f"| `{prefix}{key}` | `{json.dumps(value)}` | `{json.dumps(b[key])}` |")

    walk(paper, toy)
    return "\n".join(lines) + "\n"
