"""Slide classification: tile features, mean pooling to a slide embedding,
and a small fully-connected network with per-class sigmoid outputs.

The network is 64 -> 32 (tanh) -> 4, trained on summed per-class binary
cross-entropy, so each output is an independent binary probability rather
than a normalized distribution.  A stochastic mask over the hidden layer
(keep probability 0.30, survivors scaled by 1/0.30) is applied both during
training and during repeated inference for confidence scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifest import N_CLASSES, stable_seed
from .tiling import Tile, TilingConfig, segment_tissue

CLASSIFIER_HEADER = "wsi-triage-classifier v1"

N_FEATURES = 64
N_HIDDEN = 32
N_COLOR_BINS = 16
N_GRAD_BINS = 16
GRAD_RANGE = 0.5
KEEP_PROB = 0.30

_LUMA = np.array([0.299, 0.587, 0.114])


def featurize_tiles(tiles, config: TilingConfig = TilingConfig()) -> np.ndarray:
    """(N, 64) feature matrix for a batch of tiles in one vectorized pass."""
    tiles = list(tiles)
    if not tiles:
        return np.empty((0, N_FEATURES))
    stack = np.stack([t.pixels if isinstance(t, Tile) else np.asarray(t)
                      for t in tiles])
    masks = segment_tissue(stack, config)

    luma = (np.float32(0.299) * stack[..., 0] + np.float32(0.587) * stack[..., 1]
            + np.float32(0.114) * stack[..., 2]).astype(np.float32)
    luma /= np.float32(255.0)
    gy = np.gradient(luma, axis=-2)
    gx = np.gradient(luma, axis=-1)
    grad_bins = np.minimum((np.hypot(gy, gx) * (N_GRAD_BINS / GRAD_RANGE)).astype(np.intp),
                           N_GRAD_BINS - 1)

    out = np.empty((len(tiles), N_FEATURES))
    uniform = np.full(N_COLOR_BINS, 1.0 / N_COLOR_BINS)
    for i in range(len(tiles)):
        tissue = stack[i][masks[i]]
        parts = []
        if len(tissue):
            # uint8 values bucketed into 16 bins of width 16
            for c in range(3):
                hist = np.bincount(tissue[:, c] >> 4, minlength=N_COLOR_BINS)
                parts.append(hist / hist.sum())
        else:
            parts.extend([uniform] * 3)
        hist = np.bincount(grad_bins[i].reshape(-1), minlength=N_GRAD_BINS)
        parts.append(hist / hist.sum())
        out[i] = np.concatenate(parts)
    return out


def featurize(t: Tile, config: TilingConfig = TilingConfig()) -> np.ndarray:
    """64-vector: 16-bin color histogram per channel over tissue pixels,
    plus a 16-bin gradient-magnitude histogram over the whole tile.

    Each of the four histograms is L1-normalized; a tile without tissue
    pixels falls back to uniform color histograms.
    """
    return featurize_tiles([t], config)[0]


def pool(vectors) -> np.ndarray:
    """Componentwise mean of tile feature vectors (order-invariant)."""
    vectors = list(vectors)
    if not vectors:
        raise ValueError("cannot pool an empty feature set; no-ROI slides "
                         "must be handled before classification")
    return np.mean(np.stack(vectors), axis=0)


@dataclass(frozen=True)
class NetParams:
    w1: np.ndarray   # (64, 32)
    b1: np.ndarray   # (32,)
    w2: np.ndarray   # (32, 4)
    b2: np.ndarray   # (4,)

    def copy(self) -> "NetParams":
        return NetParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


@dataclass(frozen=True)
class StochasticMask:
    keep: np.ndarray      # (32,) bool
    keep_prob: float

    @property
    def scale(self) -> np.ndarray:
        return self.keep.astype(np.float64) / self.keep_prob


def draw_mask(rng: np.random.Generator, keep_prob: float = KEEP_PROB) -> StochasticMask:
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep_prob must be in (0, 1], got {keep_prob}")
    return StochasticMask(keep=rng.random(N_HIDDEN) < keep_prob, keep_prob=keep_prob)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(seed: int = 0) -> NetParams:
    rng = np.random.default_rng(stable_seed("classifier-init", seed))
    return NetParams(
        w1=rng.normal(0.0, 1.0 / np.sqrt(N_FEATURES), size=(N_FEATURES, N_HIDDEN)),
        b1=np.zeros(N_HIDDEN),
        w2=rng.normal(0.0, 1.0 / np.sqrt(N_HIDDEN), size=(N_HIDDEN, N_CLASSES)),
        b2=np.zeros(N_CLASSES),
    )


def predict(embedding: np.ndarray, params: NetParams,
            mask: StochasticMask | None = None) -> np.ndarray:
    """Forward pass to the 4 per-class sigmoids; mask omits hidden units
    and rescales the survivors, no-mask uses all units unscaled.

    Outputs are clamped away from exact 0/1 so saturated units still
    yield valid strictly-(0,1) probabilities downstream.
    """
    h = np.tanh(embedding @ params.w1 + params.b1)
    if mask is not None:
        h = h * mask.scale
    out = _sigmoid(h @ params.w2 + params.b2)
    return np.clip(out, 1e-12, 1.0 - 1e-12)


def predict_class(embedding: np.ndarray, params: NetParams) -> int:
    """Deterministic argmax prediction (no mask); ties break to the
    canonical class order."""
    return int(np.argmax(predict(embedding, params)))


def one_hot(labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), N_CLASSES))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def loss_and_grad(params: NetParams, x: np.ndarray, y: np.ndarray,
                  mask_scale: np.ndarray):
    """Mean summed-per-class BCE over the batch and its analytic gradient.

    mask_scale is the (N, 32) per-sample hidden scaling (mask / keep_prob,
    or ones for no dropout); fixing it makes the loss deterministic, which
    the finite-difference gradient check relies on.
    """
    n = len(x)
    z1 = x @ params.w1 + params.b1
    h = np.tanh(z1)
    hm = h * mask_scale
    z2 = hm @ params.w2 + params.b2
    p = _sigmoid(z2)

    eps = 1e-12
    loss = float(-(y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps)).sum() / n)

    dz2 = (p - y) / n
    gw2 = hm.T @ dz2
    gb2 = dz2.sum(axis=0)
    dh = (dz2 @ params.w2.T) * mask_scale
    dz1 = dh * (1.0 - h * h)
    gw1 = x.T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, {"w1": gw1, "b1": gb1, "w2": gw2, "b2": gb2}


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.8
    batch_size: int = 32
    seed: int = 0
    keep_prob: float = KEEP_PROB
    finetune_lr_scale: float = 0.1
    finetune_epochs: int = 60


def train(x: np.ndarray, labels, config: TrainConfig = TrainConfig(),
          params: NetParams | None = None,
          learning_rate: float | None = None,
          epochs: int | None = None) -> NetParams:
    """Seeded minibatch SGD with per-sample stochastic hidden masks.

    Starts from a fresh seeded initialization unless params is given (the
    fine-tuning path).  Missing classes in the labels produce a warning,
    not a failure.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if len(x) == 0:
        raise ValueError("empty training set")
    missing = sorted(set(range(N_CLASSES)) - set(labels.tolist()))
    if missing:
        import warnings
        warnings.warn(f"training set is missing classes {missing}", stacklevel=2)

    lr = config.learning_rate if learning_rate is None else learning_rate
    n_epochs = config.epochs if epochs is None else epochs
    params = init_params(config.seed) if params is None else params.copy()
    y = one_hot(labels)
    rng = np.random.default_rng(stable_seed("classifier-train", config.seed))

    w1, b1, w2, b2 = params.w1, params.b1, params.w2, params.b2
    n = len(x)
    for _ in range(n_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            scale = (rng.random((len(idx), N_HIDDEN)) < config.keep_prob) / config.keep_prob
            cur = NetParams(w1, b1, w2, b2)
            _, g = loss_and_grad(cur, x[idx], y[idx], scale)
            w1 = w1 - lr * g["w1"]
            b1 = b1 - lr * g["b1"]
            w2 = w2 - lr * g["w2"]
            b2 = b2 - lr * g["b2"]
    return NetParams(w1, b1, w2, b2)


def fine_tune(params: NetParams, x: np.ndarray, labels,
              config: TrainConfig = TrainConfig()) -> NetParams:
    """Continue training on calibration data at a reduced learning rate."""
    return train(x, labels, config, params=params,
                 learning_rate=config.learning_rate * config.finetune_lr_scale,
                 epochs=config.finetune_epochs)


def accuracy(params: NetParams, x: np.ndarray, labels) -> float:
    labels = np.asarray(labels, dtype=int)
    preds = [predict_class(e, params) for e in np.asarray(x, dtype=np.float64)]
    return float(np.mean(np.asarray(preds) == labels))


def save_params(params: NetParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CLASSIFIER_HEADER + "\n")
        for name in ("w1", "b1", "w2", "b2"):
            arr = getattr(params, name)
            shape = " ".join(str(s) for s in arr.shape)
            fh.write(f"tensor {name} {shape}\n")
            fh.write(" ".join(repr(float(v)) for v in arr.reshape(-1)) + "\n")


def load_params(path) -> NetParams:
    tensors = {}
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != CLASSIFIER_HEADER:
            raise ValueError(f"{path}: not a classifier parameter file")
        while True:
            header = fh.readline()
            if not header:
                break
            parts = header.split()
            if not parts:
                continue
            if parts[0] != "tensor":
                raise ValueError(f"{path}: malformed tensor header {header!r}")
            name, shape = parts[1], tuple(int(s) for s in parts[2:])
            values = np.array([float(v) for v in fh.readline().split()])
            tensors[name] = values.reshape(shape)
    try:
        return NetParams(tensors["w1"], tensors["b1"], tensors["w2"], tensors["b2"])
    except KeyError as exc:
        raise ValueError(f"{path}: missing tensor {exc}") from None
