"""One flat key=value config for the whole pipeline, plus the master-seed
fanout. Defaults are the frozen desk-scale reference configuration; the
paper-scale values (lr 1e-3, batch 384, lambda_reg 0.008 / lambda_id 0.004)
are noted next to the fields they correspond to.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import DatasetManifest
from .encoders import TrainConfig
from .errors import ConfigError
from .losses import LossFlags

# fixed per-stage offsets applied to the master seed
SEED_OFFSETS = {
    "data": 101,
    "teacher": 211,
    "audio": 307,
    "generator": 401,
    "manip": 503,
    "eval": 601,
}


def stage_seed(master_seed: int, stage: str) -> int:
    return master_seed + SEED_OFFSETS[stage]


@dataclass
class RunConfig:
    master_seed: int = 7

    # synthetic dataset
    classes: int = 8
    videos_per_class: int = 6
    records_per_video: int = 8
    freq_bins: int = 20
    time_frames: int = 10
    pixels: int = 64
    bias_spec: dict[int, int] = field(default_factory=lambda: {0: 0, 1: 0})
    bias_cooccurrence: float = 0.8
    audio_video_offset: float = 0.7
    image_video_offset: float = 0.7
    audio_noise: float = 0.005
    image_noise: float = 0.01
    nuisance_scale: float = 0.5
    intensity_min: float = 0.2
    intensity_max: float = 1.0

    # encoders and contrastive training (paper: lr 1e-3, batch 384)
    embed_dim: int = 32
    hidden_dim: int = 64
    tau: float = 0.07
    teacher_lr: float = 0.1
    teacher_epochs: int = 20
    audio_lr: float = 0.05
    audio_epochs: int = 80
    batch_size: int = 64
    momentum: float = 0.9
    sched_period: int = 10
    freq_mask_ratio: float = 0.15
    time_mask_ratio: float = 0.3
    text_aug_prob: float = 0.5
    use_loss_at: bool = True
    use_loss_av: bool = True
    use_loss_self: bool = True
    use_loss_kl: bool = True
    kl_full_rows: bool = False

    # generator
    latent_dim: int = 32
    gen_fit_epochs: int = 5

    # manipulation (paper face-domain: 0.008 / 0.004; scene: 0.002 / 0)
    lambda_reg: float = 0.008
    lambda_id: float = 0.004
    manip_steps: int = 300
    manip_step_size: float = 0.1
    adaptive_masking: bool = True
    identity_enabled: bool = True

    # evaluation
    probe_epochs: int = 200
    probe_lr: float = 0.1
    direction_seeds: int = 20

    def seed_for(self, stage: str) -> int:
        return stage_seed(self.master_seed, stage)

    def dataset_manifest(self) -> DatasetManifest:
        return DatasetManifest(
            classes=self.classes, videos_per_class=self.videos_per_class,
            records_per_video=self.records_per_video, freq_bins=self.freq_bins,
            time_frames=self.time_frames, pixels=self.pixels,
            seed=self.seed_for("data"), bias_spec=dict(self.bias_spec),
            bias_cooccurrence=self.bias_cooccurrence,
            audio_video_offset=self.audio_video_offset,
            image_video_offset=self.image_video_offset,
            audio_noise=self.audio_noise, image_noise=self.image_noise,
            nuisance_scale=self.nuisance_scale,
            intensity_min=self.intensity_min, intensity_max=self.intensity_max)

    def loss_flags(self) -> LossFlags:
        return LossFlags(use_at=self.use_loss_at, use_av=self.use_loss_av,
                         use_self=self.use_loss_self, use_kl=self.use_loss_kl,
                         kl_full_rows=self.kl_full_rows)

    def teacher_train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.teacher_lr, epochs=self.teacher_epochs,
                           batch_size=self.batch_size, tau=self.tau,
                           momentum=self.momentum, sched_period=self.sched_period,
                           text_aug_prob=self.text_aug_prob,
                           seed=self.seed_for("teacher"))

    def audio_train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.audio_lr, epochs=self.audio_epochs,
                           batch_size=self.batch_size, tau=self.tau,
                           momentum=self.momentum, sched_period=self.sched_period,
                           freq_mask_ratio=self.freq_mask_ratio,
                           time_mask_ratio=self.time_mask_ratio,
                           text_aug_prob=self.text_aug_prob,
                           seed=self.seed_for("audio"), flags=self.loss_flags())


_INT_KEYS = {"master_seed", "classes", "videos_per_class", "records_per_video",
             "freq_bins", "time_frames", "pixels", "embed_dim", "hidden_dim",
             "teacher_epochs", "audio_epochs", "batch_size", "sched_period",
             "latent_dim", "gen_fit_epochs", "manip_steps", "probe_epochs",
             "direction_seeds"}
_FLOAT_KEYS = {"bias_cooccurrence", "audio_video_offset", "image_video_offset",
               "audio_noise", "image_noise", "nuisance_scale", "intensity_min",
               "intensity_max", "tau", "teacher_lr", "audio_lr", "momentum",
               "freq_mask_ratio", "time_mask_ratio", "text_aug_prob",
               "lambda_reg", "lambda_id", "manip_step_size", "probe_lr"}
_BOOL_KEYS = {"use_loss_at", "use_loss_av", "use_loss_self", "use_loss_kl",
              "kl_full_rows", "adaptive_masking", "identity_enabled"}


def _parse_bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: cannot parse boolean from {value!r}")


def _parse_bias_spec(value: str) -> dict[int, int]:
    if not value.strip():
        return {}
    try:
        return {int(c): int(p) for c, p in
                (item.split(":") for item in value.split(","))}
    except ValueError as exc:
        raise ConfigError(f"bias_spec: malformed {value!r}") from exc


def set_key(config: RunConfig, key: str, value: str) -> None:
    if key in _INT_KEYS:
        try:
            setattr(config, key, int(value))
        except ValueError as exc:
            raise ConfigError(f"{key}: expected integer, got {value!r}") from exc
    elif key in _FLOAT_KEYS:
        try:
            setattr(config, key, float(value))
        except ValueError as exc:
            raise ConfigError(f"{key}: expected float, got {value!r}") from exc
    elif key in _BOOL_KEYS:
        setattr(config, key, _parse_bool(value, key))
    elif key == "bias_spec":
        config.bias_spec = _parse_bias_spec(value)
    else:
        raise ConfigError(f"unknown config key {key!r}")


def config_to_text(config: RunConfig) -> str:
    lines = []
    for f in fields(config):
        val = getattr(config, f.name)
        if f.name == "bias_spec":
            val = ",".join(f"{c}:{p}" for c, p in sorted(val.items()))
        elif isinstance(val, bool):
            val = int(val)
        elif isinstance(val, float):
            val = repr(val)
        lines.append(f"{f.name}={val}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, base: RunConfig | None = None) -> RunConfig:
    config = base if base is not None else RunConfig()
    bad: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            bad.append(line)
            continue
        try:
            set_key(config, key.strip(), value.strip())
        except ConfigError:
            bad.append(key.strip())
    if bad:
        raise ConfigError(f"invalid config entries: {', '.join(sorted(set(bad)))}")
    return config


def load_config(path, overrides: list[str] | None = None) -> RunConfig:
    """Config file then key=value overrides; unknown keys fail loudly."""
    config = RunConfig()
    if path is not None:
        config = config_from_text(Path(path).read_text(encoding="utf-8"), config)
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override must look like key=value: {item!r}")
        set_key(config, key.strip(), value.strip())
    return config


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(config_to_text(config).encode()).hexdigest()[:12]
