"""Run configuration: INI files with fixed sections and strictly known keys.

The architecture-determining sections (frontend, encoder, vc) are hashed so
a checkpoint can refuse to load into a differently shaped model. Training
and evaluation knobs stay out of the hash: they do not change what the
weights mean.
"""

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields

from .errors import ConfigError
from .seresnet import STEM_ORDERS, VARIANTS, EncoderConfig
from .vc import TrainingConfig


@dataclass
class FrontendSection:
    sample_rate: int = 16000
    n_mels: int = 256

    def validate(self):
        if self.sample_rate != 16000:
            raise ConfigError(
                f"frontend is fixed at 16000 Hz, got sample_rate={self.sample_rate}")
        if self.n_mels < 1:
            raise ConfigError(f"n_mels must be positive, got {self.n_mels}")


@dataclass
class EncoderSection:
    variant: str = "ddse"
    channels: tuple = (16, 16, 32, 64, 64)
    reduction: int = 8
    attn_hidden: int = 128
    bottleneck: int = 256
    stem_order: str = "conv_relu_bn"

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.stem_order not in STEM_ORDERS:
            raise ConfigError(
                f"stem_order must be one of {STEM_ORDERS}, got {self.stem_order!r}")
        if len(self.channels) < 1 or any(c < 1 for c in self.channels):
            raise ConfigError(f"channels must be positive ints, got {self.channels}")
        for name in ("reduction", "attn_hidden", "bottleneck"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class VCSection:
    content_channels: int = 64
    kernel: int = 5

    def validate(self):
        if self.content_channels < 1:
            raise ConfigError(
                f"content_channels must be positive, got {self.content_channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"kernel must be a positive odd int, got {self.kernel}")


@dataclass
class TrainSection:
    steps: int = 500
    batch_size: int = 3
    crop_frames: int = 48
    lr: float = 3e-3
    grad_clip: float = 5.0
    seed: int = 0
    loss: str = "l1"
    recon_weight: float = 1.0

    def validate(self):
        pass  # TrainingConfig re-checks everything on construction


@dataclass
class EvalSection:
    n_trials: int = 100
    held_out_per_speaker: int = 4
    seed: int = 123

    def validate(self):
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be positive, got {self.n_trials}")
        if self.held_out_per_speaker < 1:
            raise ConfigError(
                f"held_out_per_speaker must be positive, got {self.held_out_per_speaker}")


@dataclass
class RunConfig:
    frontend: FrontendSection = field(default_factory=FrontendSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    vc: VCSection = field(default_factory=VCSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self):
        for section in (self.frontend, self.encoder, self.vc, self.train, self.eval):
            section.validate()
        self.training_config()  # surfaces cross-section problems early
        return self

    def encoder_config(self):
        return EncoderConfig(mel_bands=self.frontend.n_mels,
                             channels=tuple(self.encoder.channels),
                             reduction=self.encoder.reduction,
                             variant=self.encoder.variant,
                             stem_order=self.encoder.stem_order,
                             attn_hidden=self.encoder.attn_hidden,
                             bottleneck=self.encoder.bottleneck)

    def training_config(self, seed=None):
        return TrainingConfig(seed=self.train.seed if seed is None else seed,
                              steps=self.train.steps,
                              batch_size=self.train.batch_size,
                              crop_frames=self.train.crop_frames,
                              lr=self.train.lr,
                              grad_clip=self.train.grad_clip,
                              loss=self.train.loss,
                              recon_weight=self.train.recon_weight,
                              variant=self.encoder.variant,
                              channels=tuple(self.encoder.channels),
                              reduction=self.encoder.reduction,
                              attn_hidden=self.encoder.attn_hidden,
                              bottleneck=self.encoder.bottleneck,
                              content_channels=self.vc.content_channels,
                              kernel=self.vc.kernel)

    def hash(self):
        """Hex digest over the architecture-determining sections only."""
        lines = []
        for section_name in ("frontend", "encoder", "vc"):
            section = getattr(self, section_name)
            for f in fields(section):
                lines.append(f"{section_name}.{f.name}={_format_value(getattr(section, f.name))}")
        blob = "\n".join(sorted(lines)).encode("ascii")
        return hashlib.sha256(blob).hexdigest()


_SECTIONS = {
    "frontend": FrontendSection,
    "encoder": EncoderSection,
    "vc": VCSection,
    "train": TrainSection,
    "eval": EvalSection,
}


def _parse_value(section, key, text, kind):
    text = text.strip()
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            return tuple(int(part.strip()) for part in text.split(","))
        return text
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: cannot parse {text!r} as {kind.__name__}") from None


def _format_value(value):
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def default_config():
    return RunConfig().validate()


def loads(text):
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), strict=True)
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config syntax: {exc}") from exc

    cfg = RunConfig()
    for section_name in parser.sections():
        if section_name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section_name}]")
        section = getattr(cfg, section_name)
        kinds = {f.name: type(getattr(section, f.name)) for f in fields(type(section))}
        for key, raw in parser.items(section_name):
            if key not in kinds:
                raise ConfigError(f"unknown key {key!r} in section [{section_name}]")
            setattr(section, key, _parse_value(section_name, key, raw, kinds[key]))
    return cfg.validate()


def load_config(path):
    with open(path, "r", encoding="ascii") as fh:
        return loads(fh.read())


def to_text(cfg):
    """Round-trippable INI rendering of a RunConfig."""
    out = io.StringIO()
    for section_name in _SECTIONS:
        section = getattr(cfg, section_name)
        out.write(f"[{section_name}]\n")
        for f in fields(section):
            out.write(f"{f.name} = {_format_value(getattr(section, f.name))}\n")
        out.write("\n")
    return out.getvalue()
