"""Region-of-interest extraction: per-tile segmentation maps and selection
of the tile set forwarded to classification.

The segmenter is a per-pixel logistic model over local color/texture
features, trained on the generator's ground-truth lesion masks.  A tile is
selected when enough of its segmentation map is positive; a slide whose
selection comes out empty ends as a no-ROI result downstream, never as a
class prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .manifest import stable_seed
from .tiling import Tile

THETA_ROI = 0.05

SEGMENTER_HEADER = "wsi-triage-segmenter v1"

N_PIXEL_FEATURES = 7

_LUMA = np.array([0.299, 0.587, 0.114])


def pixel_features(pixels: np.ndarray) -> np.ndarray:
    """(..., H, W, 7) feature stack: rgb, saturation, darkness, gradient,
    local std.  Accepts one tile (H, W, 3) or a stack (N, H, W, 3); the
    local filters never mix pixels across tiles."""
    pixels = np.asarray(pixels)
    one = np.float32(1.0)
    r = pixels[..., 0].astype(np.float32) / np.float32(255.0)
    g = pixels[..., 1].astype(np.float32) / np.float32(255.0)
    b = pixels[..., 2].astype(np.float32) / np.float32(255.0)
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    saturation = (mx - mn) / np.maximum(mx, np.float32(1e-12))
    luma = np.float32(0.299) * r + np.float32(0.587) * g + np.float32(0.114) * b
    gy = np.gradient(luma, axis=-2)
    gx = np.gradient(luma, axis=-1)
    grad = np.hypot(gy, gx)
    size = (1,) * (luma.ndim - 2) + (5, 5)
    m = ndimage.uniform_filter(luma, size=size, mode="nearest")
    m2 = ndimage.uniform_filter(luma * luma, size=size, mode="nearest")
    local_std = np.sqrt(np.maximum(m2 - m * m, np.float32(0.0)))
    return np.stack([r, g, b, saturation, one - luma, grad, local_std], axis=-1)


@dataclass(frozen=True)
class SegMap:
    mask: np.ndarray              # (tile_px, tile_px) bool
    positive_fraction: float

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "SegMap":
        return cls(mask=mask, positive_fraction=float(mask.sum()) / mask.size)


@dataclass(frozen=True)
class ROISelection:
    slide_id: str
    selected: tuple     # tiles kept, in canonical row-major order

    def __len__(self):
        return len(self.selected)

    @property
    def empty(self) -> bool:
        return not self.selected


@dataclass(frozen=True)
class PixelSegmenter:
    weights: np.ndarray
    bias: float
    feat_mean: np.ndarray
    feat_std: np.ndarray

    def scores(self, pixels: np.ndarray) -> np.ndarray:
        """Per-pixel logits; standardization is folded into the weights so
        the whole map is one float32 matmul."""
        folded_w = (self.weights / self.feat_std).astype(np.float32)
        folded_b = np.float32(self.bias - float((self.feat_mean / self.feat_std)
                                                @ self.weights))
        return pixel_features(pixels) @ folded_w + folded_b


def segment(t: Tile, model: PixelSegmenter) -> SegMap:
    """Binary lesion map for one (adapted) tile; threshold 0.5 on the
    logistic output, i.e. 0 on the logit."""
    return SegMap.from_mask(model.scores(t.pixels) >= 0.0)


def segment_tiles(tiles, model: PixelSegmenter) -> list[SegMap]:
    """Segmentation maps for a batch of tiles in one vectorized pass."""
    tiles = list(tiles)
    if not tiles:
        return []
    masks = model.scores(np.stack([t.pixels for t in tiles])) >= 0.0
    return [SegMap.from_mask(m) for m in masks]


def select(tiles, segmaps, theta: float = THETA_ROI) -> ROISelection:
    """Keep tiles whose positive fraction reaches theta; may be empty."""
    tiles = list(tiles)
    segmaps = list(segmaps)
    if len(tiles) != len(segmaps):
        raise ValueError(f"{len(tiles)} tiles but {len(segmaps)} segmentation maps")
    slide_id = tiles[0].slide_id if tiles else ""
    kept = tuple(t for t, sm in zip(tiles, segmaps) if sm.positive_fraction >= theta)
    return ROISelection(slide_id=slide_id, selected=kept)


def train_segmenter(pairs, seed: int = 0, samples_per_tile: int = 300,
                    epochs: int = 150, learning_rate: float = 2.0,
                    l2: float = 1e-4) -> PixelSegmenter:
    """Fit the logistic pixel model on (tile_pixels, truth_mask) pairs.

    Pixels are subsampled per tile, balanced between classes where
    possible; training is deterministic full-batch gradient descent.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no training pairs")
    rng = np.random.default_rng(stable_seed("segmenter", seed))
    xs, ys = [], []
    half = samples_per_tile // 2
    for pixels, mask in pairs:
        feats = pixel_features(pixels).reshape(-1, N_PIXEL_FEATURES)
        flat = np.asarray(mask, dtype=bool).reshape(-1)
        pos = np.flatnonzero(flat)
        neg = np.flatnonzero(~flat)
        for idx, want in ((pos, half), (neg, half)):
            if len(idx) == 0:
                continue
            take = rng.choice(idx, size=min(want, len(idx)), replace=False)
            xs.append(feats[take])
            ys.append(flat[take])
    x = np.concatenate(xs)
    y = np.concatenate(ys).astype(np.float64)
    if y.min() == y.max():
        raise ValueError("training pairs contain a single pixel class only")

    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-6)
    xs_std = (x - mean) / std

    w = np.zeros(N_PIXEL_FEATURES)
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(xs_std @ w + b)))
        err = p - y
        w -= learning_rate * (xs_std.T @ err / n + l2 * w)
        b -= learning_rate * float(err.mean())
    return PixelSegmenter(weights=w, bias=b, feat_mean=mean, feat_std=std)


def save_segmenter(model: PixelSegmenter, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SEGMENTER_HEADER + "\n")
        fh.write("weights " + " ".join(repr(float(v)) for v in model.weights) + "\n")
        fh.write(f"bias {model.bias!r}\n")
        fh.write("feat_mean " + " ".join(repr(float(v)) for v in model.feat_mean) + "\n")
        fh.write("feat_std " + " ".join(repr(float(v)) for v in model.feat_std) + "\n")


def load_segmenter(path) -> PixelSegmenter:
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != SEGMENTER_HEADER:
            raise ValueError(f"{path}: not a segmenter file")
        vals = {}
        for line in fh:
            parts = line.split()
            if parts:
                vals[parts[0]] = np.array([float(v) for v in parts[1:]])
    return PixelSegmenter(weights=vals["weights"], bias=float(vals["bias"][0]),
                          feat_mean=vals["feat_mean"], feat_std=vals["feat_std"])
