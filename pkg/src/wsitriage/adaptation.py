"""Appearance standardization: map tiles from any lab into the reference
domain by matching per-channel color statistics.

Statistics live in a decorrelated log color space (log-LMS rotated onto
its principal axes), where per-channel scale/shift transfer is a good
approximation of full distribution matching for stain-like color shifts.
The stage contract is tile in, appearance-standardized tile of the same
shape out, so a learned model could replace this implementation behind
the same interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tiling import Tile, TilingConfig, segment_tissue

ADAPTER_HEADER = "wsi-triage-adapter v1"

STD_FLOOR = 1e-6

_RGB2LMS = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
_LMS2RGB = np.linalg.inv(_RGB2LMS)

_DECOR = np.diag([1.0 / np.sqrt(3.0), 1.0 / np.sqrt(6.0), 1.0 / np.sqrt(2.0)]) @ np.array([
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -2.0],
    [1.0, -1.0, 0.0],
])
_DECOR_INV = np.linalg.inv(_DECOR)

_LMS_FLOOR = 1e-6


def to_decorrelated(rgb: np.ndarray) -> np.ndarray:
    """(..., 3) uint8/float RGB -> (..., 3) decorrelated log-space values."""
    flat = np.asarray(rgb, dtype=np.float64).reshape(-1, 3) / 255.0
    lms = np.maximum(flat @ _RGB2LMS.T, _LMS_FLOOR)
    return (np.log10(lms) @ _DECOR.T).reshape(np.shape(rgb))


def from_decorrelated(vals: np.ndarray) -> np.ndarray:
    """Inverse of to_decorrelated; returns float RGB in gray levels (unclamped)."""
    flat = np.asarray(vals, dtype=np.float64).reshape(-1, 3)
    lms = np.power(10.0, flat @ _DECOR_INV.T)
    return (lms @ _LMS2RGB.T).reshape(np.shape(vals)) * 255.0


@dataclass(frozen=True)
class DomainStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(3))
        std = np.maximum(np.asarray(self.std, dtype=float).reshape(3), STD_FLOOR)
        object.__setattr__(self, "std", std)

    def __eq__(self, other):
        if not isinstance(other, DomainStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)


@dataclass(frozen=True)
class AdapterModel:
    source: DomainStats
    target: DomainStats

    @property
    def is_identity(self) -> bool:
        return self.source == self.target


def fit_stats(tiles, config: TilingConfig = TilingConfig()) -> DomainStats:
    """Mean/std over the tissue pixels of a tile sample, in decorrelated space.

    Tiles without tissue pixels do not contribute; if the whole sample has
    none (blank corpus), all pixels are used instead.
    """
    if not tiles:
        raise ValueError("cannot fit domain stats on an empty tile sample")
    chunks = []
    all_pixels = []
    for t in tiles:
        pixels = t.pixels if isinstance(t, Tile) else np.asarray(t)
        mask = segment_tissue(pixels, config)
        chunks.append(pixels[mask])
        all_pixels.append(pixels.reshape(-1, 3))
    tissue = [c for c in chunks if len(c)]
    stacked = np.concatenate(tissue if tissue else all_pixels)
    vals = to_decorrelated(stacked)
    return DomainStats(mean=vals.mean(axis=0), std=vals.std(axis=0))


def fit_reference(tiles, config: TilingConfig = TilingConfig()) -> DomainStats:
    """Target-domain statistics, fit on a reference-lab tile sample."""
    return fit_stats(tiles, config)


def fit_lab(tiles, config: TilingConfig = TilingConfig()) -> DomainStats:
    """Source-domain statistics for one lab, fit on its calibration tiles."""
    return fit_stats(tiles, config)


def adapt_pixels(pixels: np.ndarray, model: AdapterModel,
                 config: TilingConfig = TilingConfig()) -> np.ndarray:
    """Standardize an (..., 3) RGB array; returns uint8 of the same shape.

    Only tissue pixels are transformed, mirroring the tissue-only fit;
    background glass is already standard and dragging it through the
    transfer would tint it into phantom tissue.  The per-pixel transform
    runs in float32 (the result is rounded to 8-bit gray levels anyway);
    statistics fitting stays float64.
    """
    out = np.asarray(pixels, dtype=np.uint8).copy()
    if model.is_identity:
        return out
    mask = segment_tissue(out, config)
    flat = out[mask].astype(np.float32) / np.float32(255.0)
    lms = np.maximum(flat @ _RGB2LMS.T.astype(np.float32), np.float32(_LMS_FLOOR))
    vals = np.log10(lms) @ _DECOR.T.astype(np.float32)
    scale = (model.target.std / model.source.std).astype(np.float32)
    shift = (model.target.mean - model.source.mean * model.target.std
             / model.source.std).astype(np.float32)
    vals *= scale
    vals += shift
    lms = np.power(np.float32(10.0), vals @ _DECOR_INV.T.astype(np.float32))
    adapted = (lms @ _LMS2RGB.T.astype(np.float32)) * np.float32(255.0)
    np.rint(adapted, out=adapted)
    np.clip(adapted, 0, 255, out=adapted)
    out[mask] = adapted.astype(np.uint8)
    return out


def adapt(t: Tile, model: AdapterModel) -> Tile:
    """Map one tile into the target domain; shape and metadata preserved."""
    return Tile(t.slide_id, t.origin, adapt_pixels(t.pixels, model), t.tissue_fraction)


def adapt_tiles(tiles, model: AdapterModel | None) -> list:
    """Batch form of adapt(); None passes tiles through unchanged."""
    tiles = list(tiles)
    if model is None or not tiles:
        return tiles
    stacked = adapt_pixels(np.stack([t.pixels for t in tiles]), model)
    return [Tile(t.slide_id, t.origin, px, t.tissue_fraction)
            for t, px in zip(tiles, stacked)]


def save_adapter(model: AdapterModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(ADAPTER_HEADER + "\n")
        for name, vec in (("source_mean", model.source.mean),
                          ("source_std", model.source.std),
                          ("target_mean", model.target.mean),
                          ("target_std", model.target.std)):
            fh.write(name + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def load_adapter(path) -> AdapterModel:
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != ADAPTER_HEADER:
            raise ValueError(f"{path}: not an adapter file")
        vals = {}
        for line in fh:
            parts = line.split()
            if parts:
                vals[parts[0]] = np.array([float(x) for x in parts[1:]])
    try:
        return AdapterModel(
            source=DomainStats(vals["source_mean"], vals["source_std"]),
            target=DomainStats(vals["target_mean"], vals["target_std"]),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing field {exc}") from None
