"""Configuration dataclasses and the flat ``key = value`` config file format.

Every field has a default.  A run configuration is assembled from the
defaults, then the config file, then command-line overrides (later wins).
Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError


@dataclass(frozen=True)
class ArchConfig:
    channels_x: int = 3
    channels_y: int = 1
    content_widths: tuple[int, ...] = (32, 64, 128, 128, 128)
    style_widths: tuple[int, ...] = (32, 64, 128, 256)
    mlp_hidden: int = 1024
    kernel_size: int = 3
    epsilon: float = 1e-5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("channels_x", "channels_y", "mlp_hidden"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("content_widths", "style_widths"):
            widths = getattr(self, name)
            if not widths or any(int(w) <= 0 for w in widths):
                raise ConfigError(f"{name} must be a non-empty sequence of positive ints, got {widths}")
        k = self.kernel_size
        if isinstance(k, (tuple, list)):
            if len(k) != 2 or k[0] != k[1]:
                raise ConfigError(f"only square kernels are supported, got {k}")
            k = k[0]
        if int(k) <= 0 or int(k) % 2 == 0:
            raise ConfigError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be > 0")

    @property
    def kernel(self) -> int:
        k = self.kernel_size
        return int(k[0]) if isinstance(k, (tuple, list)) else int(k)

    @property
    def content_channels(self) -> int:
        return self.content_widths[-1]

    @property
    def style_dim(self) -> int:
        return self.style_widths[-1]

    @property
    def ffb_width(self) -> int:
        # residual blocks operate directly on the content code
        return self.content_widths[-1]

    @property
    def adain_param_count(self) -> int:
        # two AdaIN layers, each with a gamma and an eta vector
        return 4 * self.ffb_width

    def channels(self, domain: str) -> int:
        return self.channels_x if domain == "X" else self.channels_y

    @classmethod
    def scaled(cls, content_channels: int, style_dim: int, **kwargs) -> "ArchConfig":
        """Shrink the default layer widths while keeping their ratios.

        ``scaled(128, 256)`` reproduces the defaults; ``scaled(32, 64)`` gives
        content widths (8, 16, 32, 32, 32) and style widths (8, 16, 32, 64).
        """
        c, s = int(content_channels), int(style_dim)
        content = (max(c // 4, 1), max(c // 2, 1), c, c, c)
        style = (max(s // 8, 1), max(s // 4, 1), max(s // 2, 1), s)
        return cls(content_widths=content, style_widths=style, **kwargs)


@dataclass(frozen=True)
class LossToggles:
    recon: bool = True
    trans: bool = True
    cyc: bool = True
    align: bool = True

    @classmethod
    def without(cls, *names: str) -> "LossToggles":
        bad = set(names) - {f.name for f in fields(cls)}
        if bad:
            raise ConfigError(f"unknown loss component(s): {sorted(bad)}")
        return cls(**{n: False for n in names})


@dataclass(frozen=True)
class TrainConfig:
    patch_size: int = 64
    stride: int = 56
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.5, 0.9)
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs_per_iteration: int = 10
    iterations: int = 2
    seed: int = 0
    augment: bool = True
    align_margin: float = 4.0
    losses: LossToggles = field(default_factory=LossToggles)

    def __post_init__(self):
        if not (self.patch_size >= self.stride > 0):
            raise ConfigError(f"need patch_size >= stride > 0, got {self.patch_size}, {self.stride}")
        if self.batch_size <= 0 or self.epochs_per_iteration <= 0:
            raise ConfigError("batch_size and epochs_per_iteration must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if not self.align_margin > 0:
            raise ConfigError("align_margin must be > 0")


@dataclass(frozen=True)
class FilterConfig:
    enabled: bool = True
    sigma: float = 1.5
    kernel_size: int = 7

    def __post_init__(self):
        if self.enabled:
            if not self.sigma > 0:
                raise ConfigError("filter sigma must be > 0")
            if self.kernel_size <= 0 or self.kernel_size % 2 == 0:
                raise ConfigError(f"filter kernel_size must be a positive odd integer, got {self.kernel_size}")


@dataclass(frozen=True)
class MetricConfig:
    tile_size: int = 64
    tile_stride: int = 64
    extractor: str = "stats"
    window_grid: int = 2
    kid_unbiased: bool = False


# flat key -> (section, field).  Loss toggles appear as loss_<name>.
_SECTIONS = {
    "arch": ArchConfig,
    "train": TrainConfig,
    "filter": FilterConfig,
    "metric": MetricConfig,
}
_PREFIX = {"arch": "", "train": "", "filter": "filter_", "metric": ""}


def _key_table() -> dict[str, tuple[str, str]]:
    table: dict[str, tuple[str, str]] = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            if f.name == "losses":
                for t in fields(LossToggles):
                    table[f"loss_{t.name}"] = ("losses", t.name)
                continue
            key = _PREFIX[section] + f.name
            if key in table:
                raise AssertionError(f"duplicate config key {key}")
            table[key] = (section, f.name)
    return table


KEYS = _key_table()


def _coerce(raw: Any, default: Any, key: str) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.strip("()[]").split(",") if s.strip()]
            elem = type(default[0]) if default else float
            return tuple(elem(s) for s in items)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return text


@dataclass(frozen=True)
class RunConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)

    @classmethod
    def from_mapping(cls, values: dict[str, Any], base: "RunConfig | None" = None) -> "RunConfig":
        base = base or cls()
        updates: dict[str, dict[str, Any]] = {s: {} for s in (*_SECTIONS, "losses")}
        for key, raw in values.items():
            if key not in KEYS:
                raise ConfigError(f"unknown config key: {key}")
            section, name = KEYS[key]
            owner = base.train.losses if section == "losses" else getattr(base, section)
            updates[section][name] = _coerce(raw, getattr(owner, name), key)
        losses = dataclasses.replace(base.train.losses, **updates.pop("losses"))
        kwargs = {}
        for section in _SECTIONS:
            current = getattr(base, section)
            extra = updates[section]
            if section == "train":
                extra["losses"] = losses
            kwargs[section] = dataclasses.replace(current, **extra)
        return cls(**kwargs)

    def to_mapping(self) -> dict[str, Any]:
        out = {}
        for key, (section, name) in KEYS.items():
            owner = self.train.losses if section == "losses" else getattr(self, section)
            out[key] = getattr(owner, name)
        return out


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown config key: {key}")
        values[key] = value
    return values


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        values.update(parse_config_text(text))
    values.update(overrides or {})
    return RunConfig.from_mapping(values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_mapping().items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
