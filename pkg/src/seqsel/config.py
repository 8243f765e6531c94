"""Flat ``section.key = value`` run configuration with schema validation."""

import hashlib
import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple

from .features import FeatureConfig
from .model import VARIANTS, ModelConfig
from .training import TrainConfig

RUN_ROOT_ENV = "SEQSEL_RUN_ROOT"


class ConfigError(ValueError):
    def __init__(self, errors: List[str]):
        self.errors = errors
        super().__init__("; ".join(errors))


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(x) for x in text.replace(" ", "").split(",") if x)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: str
    help: str
    choices: Optional[Tuple[str, ...]] = None


SCHEMA: "OrderedDict[str, Key]" = OrderedDict(
    [
        ("data.root", Key(str, "", "dataset directory with audio/ and labels/")),
        ("data.split", Key(str, "80/20", "train/validation ratio over sorted stems")),
        ("data.remap", Key(str, "", "optional ours=theirs column remap file")),
        ("features.sample_rate", Key(int, "44100", "expected input sample rate (Hz)")),
        ("features.chunk_seconds", Key(float, "0.5", "chunk length (s)")),
        ("features.fft_size", Key(int, "2048", "FFT points (power of two)")),
        ("features.frame_ms", Key(float, "40", "analysis frame length (ms)")),
        ("features.hop_ms", Key(float, "20", "frame shift (ms)")),
        ("features.bins", Key(int, "1024", "frequency bins kept, starting above DC")),
        ("model.variant", Key(str, "adrenaline", "network variant", VARIANTS)),
        ("model.conv_filters", Key(int, "64", "filters per convolution layer")),
        ("model.pool_widths", Key(_int_list, "8,8,2", "frequency pooling per conv layer")),
        ("model.hidden", Key(int, "64", "encoder GRU size per direction")),
        ("model.max_sources", Key(int, "4", "source slots S")),
        ("model.seldnet_hidden", Key(int, "128", "SELDNet(m) GRU size per direction")),
        ("model.seldnet_layers", Key(int, "2", "SELDNet(m) stacked bidirectional layers")),
        ("train.batch_size", Key(int, "16", "minibatch size")),
        ("train.base_lr", Key(float, "0.0002", "learning rate (schedule peak)")),
        ("train.scheduler", Key(str, "noam", "learning-rate schedule", ("none", "noam"))),
        ("train.model_dim", Key(int, "128", "schedule model dimension")),
        ("train.warmup_steps", Key(int, "1000", "schedule warmup steps")),
        ("train.max_epochs", Key(int, "200", "epoch limit")),
        ("train.patience", Key(int, "20", "early-stopping patience (epochs)")),
        ("train.seed", Key(int, "0", "initialization and shuffling seed")),
        ("train.lam", Key(float, "1.0", "DoA loss weight")),
        ("train.weight_decay", Key(float, "0.01", "decoupled weight decay")),
        ("train.teacher_forcing", Key(_bool, "false", "feed ground truth to the decoder")),
        ("run.root", Key(str, "runs", f"run directory root (env {RUN_ROOT_ENV} overrides)")),
    ]
)


def parse_text(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw: Dict[str, str] = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected key = value")
            continue
        key, value = (s.strip() for s in body.split("=", 1))
        raw[key] = value
    if errors:
        raise ConfigError(errors)
    return raw


class RunConfig:
    """Validated merge of defaults, a config file and command-line overrides."""

    def __init__(self, overrides: Optional[Mapping[str, str]] = None):
        raw = {k: spec.default for k, spec in SCHEMA.items()}
        errors = []
        for key, value in (overrides or {}).items():
            if key not in SCHEMA:
                errors.append(f"unknown key {key!r}")
            else:
                raw[key] = str(value)
        values: Dict[str, Any] = {}
        for key, spec in SCHEMA.items():
            try:
                values[key] = spec.parse(raw[key])
            except ValueError as exc:
                errors.append(f"{key}: {exc}")
                continue
            if spec.choices and values[key] not in spec.choices:
                errors.append(f"{key}: {values[key]!r} not in {spec.choices}")
        self.raw = raw
        self.values = values
        if not errors:
            errors.extend(self._cross_check())
        if errors:
            raise ConfigError(errors)

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None) -> "RunConfig":
        merged = parse_text(Path(path).read_text()) if path else {}
        merged.update(overrides or {})
        return cls(merged)

    def _cross_check(self) -> List[str]:
        errors = []
        for name, build in (("features", self.feature_config), ("train", self.train_config)):
            try:
                build()
            except ValueError as exc:
                errors.append(f"{name}: {exc}")
        try:
            self.model_config(channels=4)
        except ValueError as exc:
            errors.append(f"model: {exc}")
        return errors

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, name: str) -> Dict[str, Any]:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(**self.section("features"))

    def model_config(self, channels: int) -> ModelConfig:
        fc = self.feature_config()
        return ModelConfig(channels=channels, frames=fc.frames_per_chunk, bins=fc.bins, **self.section("model"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.section("train"))

    def to_text(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in SCHEMA)

    def digest(self) -> str:
        """Short hash of everything that affects a training run."""
        text = "".join(f"{k} = {self.raw[k]}\n" for k in SCHEMA if not k.startswith("run."))
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def run_root(self) -> Path:
        return Path(os.environ.get(RUN_ROOT_ENV) or self.values["run.root"])

    def run_dir(self) -> Path:
        return self.run_root() / self.digest()
