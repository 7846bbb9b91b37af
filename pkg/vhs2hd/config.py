"""
Configuration from a YAML (or JSON) document with Pydantic validation.
Presets and dotted `key=value` overrides are applied on top of the file.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from vhs2hd.degradation import DegradationConfig
from vhs2hd.errors import ConfigError, UsageError
from vhs2hd.limits import WorkerLimitManager, WorkerLimits
from vhs2hd.losses import LossWeights
from vhs2hd.timeouts import DecoderTimeouts

# Sync logger for load_config() only: it runs before the event loop exists.
_load_log = logging.getLogger("vhs2hd.config")


# --- Pydantic models (config schema) ---


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DecoderConfig(_Section):
    ffmpeg: str = "ffmpeg"
    ffprobe: str = "ffprobe"
    probe_ms: int = 10000
    read_ms: int = 15000
    total_ms: int = 3600000


class DataConfig(_Section):
    x_dir: Optional[str] = None
    y_dir: Optional[str] = None
    manifest_path: Optional[str] = None
    train_frac: float = 0.95
    seed: int = 0
    stride: int = 1
    degradation: DegradationConfig = DegradationConfig()
    decoder: DecoderConfig = DecoderConfig()

    @field_validator("train_frac")
    @classmethod
    def check_frac(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("train_frac must be in (0, 1]")
        return v

    @field_validator("stride")
    @classmethod
    def check_stride(cls, v: int) -> int:
        if v < 1:
            raise ValueError("stride must be >= 1")
        return v


class GeneratorConfig(_Section):
    depth: int = 6
    base_channels: int = 64
    max_channels: int = 512
    norm: Literal["instance", "none"] = "instance"
    residual_bypass: bool = False

    @field_validator("depth", "base_channels", "max_channels")
    @classmethod
    def positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v


class DiscriminatorConfig(_Section):
    widths: List[int] = [64, 128]

    @field_validator("widths")
    @classmethod
    def check_widths(cls, v: List[int]) -> List[int]:
        if not v or any(w < 1 for w in v):
            raise ValueError("widths must be a non-empty list of positive integers")
        return v


class FeatureConfig(_Section):
    tap_stage: str = "relu4_4"
    weights_path: Optional[str] = None
    allow_random_weights: bool = False
    random_seed: int = 0


class ModelConfig(_Section):
    generator: GeneratorConfig = GeneratorConfig()
    discriminator: DiscriminatorConfig = DiscriminatorConfig()
    features: FeatureConfig = FeatureConfig()


class TrainConfig(_Section):
    """Every optimization hyperparameter; serialized verbatim into checkpoints and run logs."""

    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    lambda_cyc: float = 0.1
    kappa_perc: float = 0.05
    gan_form: Literal["least_squares", "vanilla_log"] = "least_squares"
    perc_norm: Literal["mse", "l2"] = "mse"
    res_steps_per_cycle_step: int = 5
    batch_size: int = 1
    crop: int = 256
    hflip: bool = True
    total_cycle_steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 100
    log_every: int = 1
    use_fake_pool: bool = False
    pool_size: int = 50
    max_consecutive_aborts: int = 3
    deterministic: bool = True
    num_threads: int = 1
    sample_workers: int = 0

    @model_validator(mode="after")
    def check_ranges(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 < self.adam_beta1 < self.adam_beta2 < 1.0:
            raise ValueError("expected 0 < adam_beta1 < adam_beta2 < 1")
        if self.lambda_cyc < 0 or self.kappa_perc < 0:
            raise ValueError("lambda_cyc and kappa_perc must be >= 0")
        if self.res_steps_per_cycle_step < 0:
            raise ValueError("res_steps_per_cycle_step must be >= 0")
        if self.batch_size < 1 or self.crop < 16:
            raise ValueError("batch_size must be >= 1 and crop >= 16")
        if self.total_cycle_steps < 0:
            raise ValueError("total_cycle_steps must be >= 0")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ValueError("checkpoint_every and log_every must be >= 1")
        if self.max_consecutive_aborts < 1:
            raise ValueError("max_consecutive_aborts must be >= 1")
        return self

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_cyc=self.lambda_cyc,
            kappa_perc=self.kappa_perc,
            gan_form=self.gan_form,
            perc_norm=self.perc_norm,
        )


class IqaConfig(_Section):
    model_path: Optional[str] = None
    range_path: Optional[str] = None
    workers: int = 4


class LoggingConfig(_Section):
    level: str = "info"

    @field_validator("level", mode="before")
    @classmethod
    def normalize_level(cls, v: str) -> str:
        return (v or "info").strip().lower()


class ConfigModel(_Section):
    """Root config model (what we read from YAML/JSON)."""
    data: DataConfig = DataConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    iqa: IqaConfig = IqaConfig()
    logging: LoggingConfig = LoggingConfig()

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


PRESETS: Dict[str, Dict[str, Any]] = {
    "full": {},
    "desk": {
        "model": {
            "generator": {"depth": 4, "base_channels": 16, "max_channels": 128},
            "discriminator": {"widths": [16, 32]},
            "features": {"tap_stage": "identity"},
        },
        "train": {
            "crop": 64,
            "total_cycle_steps": 20,
            "checkpoint_every": 10,
        },
    },
}


class ConfigHolder:
    """
    Holds validated config and derived runtime objects
    (DegradationConfig, LossWeights, WorkerLimitManager, DecoderTimeouts).
    """
    __slots__ = ("model", "degradation", "loss_weights", "worker_limits", "decoder_timeouts")

    def __init__(self, model: ConfigModel):
        self.model = model
        self.degradation = model.data.degradation
        self.loss_weights = model.train.loss_weights()
        self.worker_limits = WorkerLimitManager(WorkerLimits(max_workers=model.iqa.workers))
        self.decoder_timeouts = DecoderTimeouts(
            probe_ms=model.data.decoder.probe_ms,
            read_ms=model.data.decoder.read_ms,
            total_ms=model.data.decoder.total_ms,
        )


# Current config (atomic reference); None until first load
_current: Optional[ConfigHolder] = None


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _resolve_key(data: Dict[str, Any], key: str) -> List[str]:
    """Resolve 'train.lr' or a bare unique field name like 'lr' to a path."""
    if "." in key:
        return key.split(".")
    matches = []

    def walk(model_cls, prefix):
        for name, field in model_cls.model_fields.items():
            if name == key:
                matches.append(prefix + [name])
            ann = field.annotation
            if isinstance(ann, type) and issubclass(ann, BaseModel):
                walk(ann, prefix + [name])

    walk(ConfigModel, [])
    if len(matches) != 1:
        raise UsageError(
            "Override key %r is %s" % (key, "ambiguous" if matches else "unknown")
        )
    return matches[0]


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply `key=value` overrides to a raw config dict; values follow YAML scalar rules."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise UsageError("Override %r is not of the form key=value" % item)
        key, raw = item.split("=", 1)
        path = _resolve_key(out, key.strip())
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise UsageError("Override %r descends into a scalar" % item)
        node[path[-1]] = yaml.safe_load(raw)
    return out


def build_config(
    data: Optional[Dict[str, Any]] = None,
    preset: Optional[str] = None,
    overrides: Sequence[str] = (),
) -> ConfigModel:
    """Preset, then document, then overrides; validated into a ConfigModel."""
    merged: Dict[str, Any] = {}
    if preset:
        if preset not in PRESETS:
            raise UsageError("Unknown preset %r (known: %s)" % (preset, ", ".join(PRESETS)))
        merged = _deep_merge(merged, PRESETS[preset])
    merged = _deep_merge(merged, data or {})
    merged = apply_overrides(merged, overrides)
    try:
        return ConfigModel.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def read_document(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError("Cannot parse %s: %s" % (path, e)) from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("Config %s must be a mapping at top level" % path)
    return data


def load_config(
    path: Optional[Union[str, Path]] = None,
    preset: Optional[str] = None,
    overrides: Sequence[str] = (),
) -> ConfigHolder:
    """
    Load config from file (optional), apply preset and overrides, validate, build holder.
    On success replace current config; on failure keep the previous one and raise.
    """
    global _current
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise UsageError("--config: file not found: %s" % path)
        data = read_document(path)
    try:
        model = build_config(data, preset=preset, overrides=overrides)
    except (ConfigError, UsageError) as e:
        _load_log.error("Failed to load config from %s: %s", str(path), e)
        raise
    holder = ConfigHolder(model)
    _current = holder
    _load_log.info(
        "Config loaded from %s (preset=%s, overrides=%d)",
        str(path) if path else "<defaults>", preset or "-", len(overrides),
    )
    return holder


def get_config() -> Optional[ConfigHolder]:
    """Return current config holder (None if never loaded)."""
    return _current
