"""INI-style configuration with one section per module.

Example::

    [signature]
    hops = 2
    bins = 6
    discount = 0.5
    gamma = 1.0
    landmarks = 10

    [optimizer]
    lr = 2e-5
    batch = 64

Unknown sections or keys are rejected.  Precedence: command-line flag,
then config file, then the defaults below.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from typing import Optional

from .corpus.llm import DEFAULT_KEY_ENV, DEFAULT_MODEL
from .featalign import DEFAULT_HIDDEN
from .graphs import DEFAULT_MAX_OBJECTS, DEFAULT_TEXT_DIM, DEFAULT_VISUAL_DIM
from .structal import SignatureConfig


class ConfigError(ValueError):
    pass


@dataclass
class SignatureSection:
    hops: int = 2
    bins: int = 6
    discount: float = 0.5
    gamma: float = 1.0
    landmarks: Optional[int] = None

    def validate(self):
        SignatureConfig(self.hops, self.bins, self.discount, self.gamma)
        if self.landmarks is not None and self.landmarks < 1:
            raise ValueError("landmarks must be >= 1")


@dataclass
class ModelSection:
    visual_dim: int = DEFAULT_VISUAL_DIM
    text_dim: int = DEFAULT_TEXT_DIM
    hidden: int = DEFAULT_HIDDEN
    max_objects: int = DEFAULT_MAX_OBJECTS

    def validate(self):
        if min(self.visual_dim, self.text_dim, self.hidden, self.max_objects) < 1:
            raise ValueError("model dimensions and max_objects must be >= 1")


@dataclass
class OptimizerSection:
    lr: float = 2e-5
    batch: int = 64
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 200
    patience: int = 20
    min_delta: float = 1e-5

    def validate(self):
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ValueError("lr and weight_decay must be >= 0, eps > 0")
        if self.batch < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("batch, epochs and patience must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")


@dataclass
class CorpusSection:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = DEFAULT_MODEL
    api_key_env: str = DEFAULT_KEY_ENV
    max_words: int = 20
    min_relations: int = 2
    concurrency: int = 4
    offline: bool = False
    lexicon: Optional[str] = None

    def validate(self):
        if self.max_words < 1 or self.min_relations < 0 or self.concurrency < 1:
            raise ValueError("max_words and concurrency must be >= 1, min_relations >= 0")


@dataclass
class PathsSection:
    data: Optional[str] = None
    params: Optional[str] = None
    out: Optional[str] = None

    def validate(self):
        pass


@dataclass
class Config:
    signature: SignatureSection = field(default_factory=SignatureSection)
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def signature_config(self) -> SignatureConfig:
        s = self.signature
        return SignatureConfig(s.hops, s.bins, s.discount, s.gamma)


def _convert(raw: str, typ: str, where: str):
    raw = raw.strip()
    optional = typ.startswith("Optional[")
    base = typ[len("Optional["):-1] if optional else typ
    if optional and raw.lower() in ("", "none"):
        return None
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        if base == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> Config:
    parser = configparser.ConfigParser(interpolation=None, default_section="__never__")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    cfg = Config()
    sections = {f.name: f for f in fields(Config)}
    for name in parser.sections():
        if name not in sections:
            raise ConfigError(f"{source}: unknown section [{name}]")
        section = getattr(cfg, name)
        known = {f.name: f for f in fields(section)}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"{source}: unknown key '{key}' in [{name}]")
            setattr(section, key, _convert(raw, str(known[key].type), f"{source} [{name}] {key}"))
    validate(cfg, source)
    return cfg


def validate(cfg: Config, source: str = "<config>") -> Config:
    for f in fields(Config):
        try:
            getattr(cfg, f.name).validate()
        except ValueError as exc:
            raise ConfigError(f"{source} [{f.name}]: {exc}") from None
    return cfg


def load_config(path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), str(path))
