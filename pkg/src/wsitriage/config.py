"""Flat key=value configuration with documented defaults.

Every key a config file may set is declared here with its default;
unknown keys are rejected by name.  Section dots group keys by the module
that consumes them (tiling.*, roi.*, confidence.*, classifier.*).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .classifier import TrainConfig
from .tiling import TilingConfig


class ConfigError(ValueError):
    """Raised for unknown keys or unparseable values."""


def _parse_targets(text: str) -> tuple:
    return tuple(float(v) for v in str(text).split(",") if v != "")


# key -> (parser, default, help)
CONFIG_KEYS = {
    "seed": (int, 0, "global seed for corpus generation and inference"),
    "workers": (int, 1, "worker processes for corpus generation and runs"),
    "paths.workdir": (str, "triage-work", "default base directory for outputs"),
    "tiling.s_min": (float, 0.08, "tissue saturation floor"),
    "tiling.l_max": (float, 0.82, "tissue luminance ceiling"),
    "tiling.min_tissue_fraction": (float, 0.25, "minimum tissue fraction to keep a tile"),
    "tiling.tile_px": (int, 128, "tile edge length in pixels"),
    "roi.theta": (float, 0.05, "positive fraction needed to select a tile"),
    "confidence.T": (int, 30, "prediction repetitions per slide"),
    "confidence.keep_prob": (float, 0.30, "hidden-unit keep probability"),
    "confidence.targets": (_parse_targets, (0.90, 0.95, 0.98),
                           "accuracy targets for confidence levels"),
    "classifier.epochs": (int, 200, "training epochs"),
    "classifier.learning_rate": (float, 0.8, "training learning rate"),
    "classifier.batch_size": (int, 32, "training minibatch size"),
    "classifier.seed": (int, 0, "training seed"),
    "classifier.finetune_lr_scale": (float, 0.1, "fine-tuning learning-rate factor"),
    "classifier.finetune_epochs": (int, 60, "fine-tuning epochs"),
}


@dataclass
class Config:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {key: default for key, (_, default, _) in CONFIG_KEYS.items()}
        for key, value in self.values.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            parser = CONFIG_KEYS[key][0]
            try:
                merged[key] = parser(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from None
        self.values = merged

    def __getitem__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"unknown config key {key!r}") from None

    @property
    def tiling(self) -> TilingConfig:
        return TilingConfig(
            s_min=self["tiling.s_min"],
            l_max=self["tiling.l_max"],
            min_tissue_fraction=self["tiling.min_tissue_fraction"],
            tile_px=self["tiling.tile_px"],
        )

    @property
    def train(self) -> TrainConfig:
        return TrainConfig(
            epochs=self["classifier.epochs"],
            learning_rate=self["classifier.learning_rate"],
            batch_size=self["classifier.batch_size"],
            seed=self["classifier.seed"],
            keep_prob=self["confidence.keep_prob"],
            finetune_lr_scale=self["classifier.finetune_lr_scale"],
            finetune_epochs=self["classifier.finetune_epochs"],
        )

    def snapshot(self) -> str:
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            lines.append(f"{key}={value}")
        return "\n".join(lines)


def load_config(path) -> Config:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return Config(values)


def default_config() -> Config:
    return Config()
