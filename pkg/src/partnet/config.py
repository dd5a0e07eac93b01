"""Run configuration and the line-oriented key=value config file format."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError

__all__ = ["TrainConfig", "load_config_file", "parse_config_lines"]


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of the pipeline; defaults follow the stock recipe."""

    # problem dimensions
    classes: int = 10
    channels: int = 32
    width: int = 28
    height: int = 28
    stride: int = 16
    # proposals
    cells: int = 4
    boxes_per_anchor: int = 28
    # head
    part_detectors: int = 3
    pool_size: int = 7
    hidden_width: int = 256
    # optimization
    epochs: int = 160
    batch_size: int = 32
    lr_head: float = 1e-1
    lr_backbone: float = 1e-3
    lr_drop_epochs: tuple = (80, 120)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clamp_eps: float = 1e-12
    seed: int = 0
    # modes
    degenerate: bool = False
    svb_enabled: bool = False
    svb_epsilon: float = 0.05
    svb_period: int = 1
    flip_augment: bool = False
    # part extraction / ensembling
    top_m: int = 50
    # synthetic task
    patch_size: int = 5
    signal_channels_per_class: int = 2
    noise_level: float = 0.5
    train_per_class: int = 10
    test_per_class: int = 10

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.part_detectors < 1:
            raise ConfigError(f"need at least 1 part detector, got {self.part_detectors}")
        if self.cells < 1 or self.cells > min(self.width, self.height):
            raise ConfigError(
                f"cell grid {self.cells} invalid for {self.width}x{self.height}"
            )
        if self.pool_size < 1:
            raise ConfigError(f"pool size must be >= 1, got {self.pool_size}")

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


_BOOL_VALUES = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


def _coerce(name: str, kind, raw: str):
    if kind is bool:
        if raw.lower() not in _BOOL_VALUES:
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return _BOOL_VALUES[raw.lower()]
    if kind is tuple:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def parse_config_lines(lines, base: TrainConfig | None = None) -> TrainConfig:
    """Apply ``key=value`` lines on top of a base config.

    Blank lines and ``#`` comments are skipped; unknown keys are errors so
    typos cannot silently fall back to defaults.
    """
    base = base or TrainConfig()
    kinds = {f.name: type(getattr(base, f.name)) for f in fields(base)}
    overrides = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected key=value, got {text!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in kinds:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        overrides[key] = _coerce(key, kinds[key], raw)
    return base.with_overrides(**overrides)


def load_config_file(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_lines(Path(path).read_text().splitlines(), base)
