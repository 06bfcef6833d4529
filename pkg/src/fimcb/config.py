"""File-based experiment configuration (TOML) with strict key checking."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dataset import SplitSpec
from .imageops import ColorMode
from .segmentation import SegmentationConfig
from .synth import SynthSpec
from .trainer import GridSpec, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class CurateConfig:
    min_side: int = 25
    target_side: int = 256


@dataclass
class GridConfig:
    lrs: tuple[float, ...] = (1.0, 0.1, 0.01, 0.001)
    weight_decays: tuple[float, ...] = (0.0, 1e-5)
    momenta: tuple[float, ...] = (0.0, 0.1, 0.05)
    modes: tuple[str, ...] = ("rgb", "red", "green", "blue", "grayscale", "mixed")


@dataclass
class TrainSection:
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    schedule_epochs: int | None = None
    eta_min: float = 0.0
    input_side: int = 224
    augment_crop: bool = True
    augment_flips: bool = True
    crop_scale: tuple[float, float] = (0.5, 1.0)
    crop_aspect: tuple[float, float] = (3 / 4, 4 / 3)
    standardize: bool = True
    seed: int = 0


@dataclass
class SegmentSection:
    light_threshold: float = 13
    dark_threshold: float = 10
    merge_distance: float = 3.0
    margin: int = 2
    calibration: float | None = None  # um per pixel; required by the segment command


@dataclass
class SplitSection:
    val_fraction: float = 0.15
    holdout_antibodies: tuple[str, ...] = ()
    seed: int = 0


@dataclass
class AppConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    segment: SegmentSection = field(default_factory=SegmentSection)
    split: SplitSection = field(default_factory=SplitSection)
    curate: CurateConfig = field(default_factory=CurateConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    train: TrainSection = field(default_factory=TrainSection)

    # -- derived objects --
    def segmentation_config(self) -> SegmentationConfig:
        s = self.segment
        return SegmentationConfig(s.light_threshold, s.dark_threshold, s.merge_distance, s.margin)

    def split_spec(self, extra_holdout=()) -> SplitSpec:
        s = self.split
        return SplitSpec(s.val_fraction, frozenset(s.holdout_antibodies) | frozenset(extra_holdout), s.seed)

    def grid_spec(self) -> GridSpec:
        t = self.train
        base = TrainConfig(batch_size=t.batch_size, max_epochs=t.max_epochs, patience=t.patience,
                           schedule_epochs=t.schedule_epochs,
                           eta_min=t.eta_min, input_side=t.input_side, augment_crop=t.augment_crop,
                           augment_flips=t.augment_flips, crop_scale=tuple(t.crop_scale),
                           crop_aspect=tuple(t.crop_aspect), standardize=t.standardize,
                           seed=t.seed)
        return GridSpec(tuple(self.grid.lrs), tuple(self.grid.weight_decays), tuple(self.grid.momenta), base)

    def color_modes(self) -> list[ColorMode]:
        return [ColorMode.parse(m) for m in self.grid.modes]

    def with_seed(self, seed: int) -> "AppConfig":
        return dataclasses.replace(
            self,
            synth=dataclasses.replace(self.synth, seed=seed),
            split=dataclasses.replace(self.split, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))


def _coerce(section_cls, values: dict, section: str):
    known = {f.name: f for f in fields(section_cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return section_cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


_SECTIONS = {"synth": SynthSpec, "segment": SegmentSection, "split": SplitSection,
             "curate": CurateConfig, "grid": GridConfig, "train": TrainSection}


def config_from_dict(doc: dict) -> AppConfig:
    unknown = sorted(set(doc) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    cfg = AppConfig(**{name: _coerce(cls, doc.get(name, {}), name) for name, cls in _SECTIONS.items()})
    validate(cfg)
    return cfg


def validate(cfg: AppConfig) -> None:
    try:
        cfg.segmentation_config()
        cfg.split_spec()
        cfg.grid_spec().configs()
        cfg.color_modes()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.segment.calibration is not None and not cfg.segment.calibration > 0:
        raise ConfigError("[segment] calibration must be > 0")
    if cfg.curate.min_side < 0 or cfg.curate.target_side < 1:
        raise ConfigError("[curate] min_side must be >= 0 and target_side >= 1")


def load_config(path=None) -> AppConfig:
    if path is None:
        return config_from_dict({})
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(doc)


def write_snapshot(cfg: AppConfig, out_dir) -> Path:
    path = Path(out_dir) / "config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
