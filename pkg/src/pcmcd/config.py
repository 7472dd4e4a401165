"""Run configuration as flat ``section.key = value`` text.

Values are Python literals (numbers, strings, tuples, booleans) parsed with
``ast.literal_eval``.  Every field has a default, so an empty file is a
complete configuration.
"""

from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GridConfig:
    wl_min: float = 1.0
    wl_max: float = 2.5
    channels: int = 100
    levels: int = 11


@dataclass(frozen=True)
class StackConfig:
    thickness: float = 0.30
    substrate_n: float = 1.45
    superstrate_n: float = 1.0
    period: float = 1.0


@dataclass(frozen=True)
class DataConfig:
    dispersion: str = ""  # empty: built-in table
    count: int = 2000
    seed: int = 0


@dataclass(frozen=True)
class SceneConfig:
    count: int = 8
    val_count: int = 2
    H: int = 32
    W: int = 32
    endmembers: int = 4
    smoothness: float = 4.0
    seed: int = 0
    val_seed: int = 1000


@dataclass(frozen=True)
class SurrogateConfig:
    d: int = 64
    heads: int = 4
    blocks: int = 2
    hidden: int = 256
    epochs: int = 100
    batch: int = 32
    lr: float = 2e-3
    seed: int = 0


@dataclass(frozen=True)
class InverseConfig:
    hidden: int = 256
    epochs: int = 100
    batch: int = 32
    lr: float = 1e-3
    tandem_epochs: int = 50
    tandem_lr: float = 5e-4
    seed: int = 0


@dataclass(frozen=True)
class DecoderConfig:
    features: int = 32
    patch: int = 4
    blocks: int = 2


@dataclass(frozen=True)
class CodesignConfig:
    epochs: int = 100
    steps: int = 16
    batch: int = 8
    crop: int = 16
    snr_min: float = 10.0
    snr_max: float = 40.0
    val_snr: float = 30.0
    lr_shape: float = 1e-2
    lr_decoder: float = 1e-3
    project: bool = True
    freeze_shape: bool = False
    init_logits: tuple = (2.0, 1.0, 0.0)
    test_snrs: tuple = (10.0, 20.0, 30.0)


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    stack: StackConfig = field(default_factory=StackConfig)
    data: DataConfig = field(default_factory=DataConfig)
    scenes: SceneConfig = field(default_factory=SceneConfig)
    surrogate: SurrogateConfig = field(default_factory=SurrogateConfig)
    inverse: InverseConfig = field(default_factory=InverseConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    codesign: CodesignConfig = field(default_factory=CodesignConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    def flat(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if hasattr(val, "__dataclass_fields__"):
                for g in fields(val):
                    out[f"{f.name}.{g.name}"] = getattr(val, g.name)
            else:
                out[f.name] = val
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.flat().items())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def with_overrides(self, items: dict) -> "RunConfig":
        """Return a copy with dotted-key overrides applied (values already parsed)."""
        sections = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, value in items.items():
            head, _, tail = key.partition(".")
            if head not in sections:
                raise ConfigError(f"unknown config key {key!r}")
            current = sections[head]
            if tail:
                if not hasattr(current, "__dataclass_fields__") or tail not in current.__dataclass_fields__:
                    raise ConfigError(f"unknown config key {key!r}")
                sections[head] = replace(current, **{tail: _coerce(key, getattr(current, tail), value)})
            else:
                if hasattr(current, "__dataclass_fields__"):
                    raise ConfigError(f"{key!r} is a section, not a value")
                sections[head] = _coerce(key, current, value)
        return RunConfig(**sections)


def _coerce(key: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (tuple, list)):
            raise ConfigError(f"{key}: expected a tuple, got {value!r}")
        return tuple(float(v) for v in value)
    if type(value) is not type(default):
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


def parse_value(text: str):
    try:
        return ast.literal_eval(text.strip())
    except (ValueError, SyntaxError):
        # bare words are taken as strings
        return text.strip()


def parse_assignment(line: str) -> tuple[str, object]:
    if "=" not in line:
        raise ConfigError(f"expected 'key = value', got {line!r}")
    key, _, value = line.partition("=")
    return key.strip(), parse_value(value)


def loads(text: str, base: RunConfig | None = None) -> RunConfig:
    items = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            key, value = parse_assignment(line)
        except ConfigError as exc:
            raise ConfigError(f"line {n}: {exc}") from None
        items[key] = value
    return (base or RunConfig()).with_overrides(items)


def load(path) -> RunConfig:
    """Read a config file; the name ``default`` means the built-in defaults."""
    if str(path) == "default":
        return RunConfig()
    try:
        return loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
