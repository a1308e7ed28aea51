"""Sectioned ``key = value`` experiment configuration."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dsp import MelConfig
from .enhance import UNetConfig
from .loss import get_variant
from .speaker import SpeakerNetConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    n_speakers: int = 8
    utts_per_speaker: int = 20
    duration_s: float = 2.0
    noise_clips: int = 40
    noise_duration_s: float = 4.0
    val_speakers: int = 2


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 2e-3
    warmup_epochs: int = 2
    crop_frames: int = 100


@dataclass(frozen=True)
class EvalConfig:
    snr_list: tuple = ("-15", "-10", "-5", "0", "5", "10", "15", "clean")
    noise_kind: str = "mixed"
    utts_per_speaker: int = 10
    n_trials: int = 200
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def conditions(self) -> list:
        return [c if c == "clean" else float(c) for c in self.snr_list]


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    variants: tuple = ("equal_w", "grad_w")


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig = RunConfig()
    data: DataConfig = DataConfig()
    mel: MelConfig = MelConfig()
    speaker: SpeakerNetConfig = SpeakerNetConfig()
    pretrain: PretrainConfig = PretrainConfig()
    unet: UNetConfig = UNetConfig()
    train: TrainConfig = field(default_factory=lambda: TrainConfig(crop_frames=100, pairs_per_utterance=4))
    eval: EvalConfig = EvalConfig()

    def __post_init__(self):
        for v in self.run.variants:
            get_variant(v)
        if self.speaker.num_speakers != self.data.n_speakers:
            raise ConfigError("speaker.num_speakers must equal data.n_speakers")
        if self.speaker.n_mels != self.mel.n_mels or self.unet.n_mels != self.mel.n_mels:
            raise ConfigError("speaker.n_mels and unet.n_mels must equal mel.n_mels")
        if not 0 < self.data.val_speakers < self.data.n_speakers:
            raise ConfigError("data.val_speakers must lie in 1..n_speakers-1")
        for c in self.eval.snr_list:
            if c != "clean":
                try:
                    float(c)
                except ValueError:
                    raise ConfigError(f"bad SNR condition {c!r}") from None

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=seed), train=replace(self.train, seed=seed))


SECTIONS = tuple(f.name for f in fields(ExperimentConfig))


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(x) for x in items)
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str) -> ExperimentConfig:
    """Parse a config; absent sections and keys keep their defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".splitlines()[0]) from None
    base = ExperimentConfig()
    parts = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]; expected one of {', '.join(SECTIONS)}")
    for name in SECTIONS:
        current = getattr(base, name)
        if not cp.has_section(name):
            parts[name] = current
            continue
        known = {f.name: f for f in fields(current)}
        kwargs = {}
        for key, raw in cp.items(name):
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
            kwargs[key] = _parse_value(raw, getattr(current, key), f"{name}.{key}")
        try:
            parts[name] = replace(current, **kwargs)
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    try:
        return ExperimentConfig(**parts)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    """Fully resolved config text; :func:`parse_config` inverts it exactly."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name in SECTIONS:
        section = getattr(cfg, name)
        cp[name] = {f.name: _format_value(getattr(section, f.name)) for f in fields(section)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue().rstrip("\n") + "\n"
