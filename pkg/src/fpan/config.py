"""Line-oriented ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import get_type_hints

from .imaging import DegradationSpec
from .model import ABLATIONS, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source is not None and line is not None:
            where = f"{source}:{line}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line


def _scales(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    scale: int = 4
    blocks: int = 2
    stage_depth: int = 4
    channels: int = 64
    pyramid_scales: tuple[int, ...] = (1, 2, 4)
    reduction: int = 16
    ablation: str = "P4"
    degradation: str = "BI"
    seed: int = 0
    epochs: int = 1000
    batch: int = 16
    patch: int = 48
    lr0: float = 1e-4
    halve_every: int = 200
    steps_per_epoch: int = 0
    augment: bool = True
    data_dir: str = "data/DIV2K_train_HR"
    lr_dir: str = ""
    out_dir: str = "runs/fpan"

    def model_config(self) -> ModelConfig:
        base = ModelConfig(
            scale=self.scale,
            channels=self.channels,
            num_blocks=self.blocks,
            stage_depth=self.stage_depth,
            pyramid_scales=self.pyramid_scales,
            reduction=self.reduction,
        )
        return base.with_ablation(self.ablation)

    def degradation_spec(self) -> DegradationSpec:
        return DegradationSpec(self.degradation, self.scale, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch,
            lr_patch=self.patch,
            lr0=self.lr0,
            halve_every=self.halve_every,
            epochs=self.epochs,
            seed=self.seed,
            scale=self.scale,
            degradation=self.degradation_spec(),
            augment=self.augment,
            steps_per_epoch=self.steps_per_epoch or None,
        )


_PARSERS = {
    int: int,
    float: float,
    str: str,
    bool: _bool,
    tuple[int, ...]: _scales,
}
_TYPES = get_type_hints(RunConfig)


def _validate(cfg: RunConfig, key: str, line: int | None, source: str | None) -> None:
    if key == "ablation" and cfg.ablation.upper() not in ABLATIONS:
        raise ConfigError(f"ablation must be one of {sorted(ABLATIONS)}, got {cfg.ablation!r}", line, source)
    if key == "degradation" and cfg.degradation.upper() not in ("BI", "BD", "DN"):
        raise ConfigError(f"degradation must be BI, BD or DN, got {cfg.degradation!r}", line, source)


def apply(cfg: RunConfig, key: str, value: str, line: int | None = None, source: str | None = None) -> RunConfig:
    key = key.strip()
    if key not in _TYPES:
        raise ConfigError(f"unknown key {key!r}", line, source)
    try:
        parsed = _PARSERS[_TYPES[key]](value.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}", line, source) from None
    out = replace(cfg, **{key: parsed})
    _validate(out, key, line, source)
    return out


def parse(text: str, source: str | None = None) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        key, value = line.split("=", 1)
        cfg = apply(cfg, key, value, lineno, source)
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse(text, str(path))


def dump(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
