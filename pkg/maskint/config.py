"""Flat ``key=value`` run configuration.

Keys are ``seed`` or ``<section>.<field>`` with sections data, tokenizer,
model, train and decode; each section is one of the config dataclasses and is
validated by its ``__post_init__``. Lines starting with ``#`` are comments.

The section seeds (train, decode) are not configurable: they are derived from
the top-level ``seed``.
"""

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Tuple, Union, get_args, get_origin, get_type_hints

from maskint.dataset import DataConfig
from maskint.decoder import DecodeConfig
from maskint.errors import ConfigError, MaskintError
from maskint.mtm import TrainConfig
from maskint.rng import derive_seed
from maskint.tokenizer import TokenizerConfig
from maskint.transformer import ModelConfig

SECTIONS = {
    "data": DataConfig,
    "tokenizer": TokenizerConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "decode": DecodeConfig,
}
DERIVED_KEYS = {"train.seed", "decode.seed"}

_TRUE = {"true", "yes", "1"}
_FALSE = {"false", "no", "0"}


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(text: str, hint, key: str):
    """Parse ``text`` into the type named by a dataclass field annotation."""
    text = text.strip()
    if get_origin(hint) is Union:
        if text.lower() == "none":
            return None
        hint = next(a for a in get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        if get_origin(hint) is tuple:
            element = get_args(hint)[0]
            return tuple(parse_value(item, element, key) for item in text.split(",") if item.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {getattr(hint, '__name__', hint)}")
    raise ConfigError(f"{key}: unsupported field type {hint}")


def section_items(prefix: str, section) -> List[Tuple[str, str]]:
    return [(f"{prefix}.{f.name}", format_value(getattr(section, f.name))) for f in dataclasses.fields(section)]


def build_section(cls, values: Dict[str, str], prefix: str):
    """Instantiate a config dataclass from ``{field: text}``, rejecting unknown fields."""
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"Unknown key(s) {', '.join(f'{prefix}.{k}' for k in unknown)}")
    kwargs = {name: parse_value(text, hints[name], f"{prefix}.{name}") for name, text in values.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (MaskintError, TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid {prefix} section: {exc}")


def parse_lines(text: str, source: str = "<config>") -> Dict[str, str]:
    items: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in items:
            raise ConfigError(f"{source}:{number}: duplicated key {key!r}")
        items[key] = value
    return items


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self):
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if (self.model.color_vocab, self.model.structure_vocab) != (
            self.tokenizer.color_vocab,
            self.tokenizer.structure_vocab,
        ):
            raise ConfigError("model vocabularies must equal the tokenizer vocabularies")
        patch = self.tokenizer.patch_size
        if (self.data.height, self.data.width) != (self.model.grid_height * patch, self.model.grid_width * patch):
            raise ConfigError(
                f"data geometry {self.data.height}x{self.data.width} != model grid "
                f"{self.model.grid_height}x{self.model.grid_width} times patch {patch}"
            )
        object.__setattr__(self, "train", replace(self.train, seed=derive_seed(self.seed, "train")))
        object.__setattr__(self, "decode", replace(self.decode, seed=derive_seed(self.seed, "decode")))

    @classmethod
    def from_items(cls, items: Dict[str, str]) -> "RunConfig":
        grouped: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
        seed = 0
        for key, value in items.items():
            if key == "seed":
                seed = parse_value(value, int, key)
                continue
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name or key in DERIVED_KEYS:
                raise ConfigError(f"Unknown key {key!r}")
            grouped[section][name] = value
        sections = {name: build_section(SECTIONS[name], grouped[name], name) for name in SECTIONS}
        return cls(seed=seed, **sections)

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        return cls.from_items(parse_lines(text, source))

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(encoding="utf-8"), str(path))

    def to_items(self) -> List[Tuple[str, str]]:
        items = [("seed", str(self.seed))]
        for name in SECTIONS:
            items += [(k, v) for k, v in section_items(name, getattr(self, name)) if k not in DERIVED_KEYS]
        return items

    def to_text(self) -> str:
        return "".join(f"{key}={value}\n" for key, value in self.to_items())

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)
