"""Monte-Carlo confidence scoring and a-priori threshold calibration.

Prediction is repeated T times with independent stochastic hidden masks;
the confidence score of a slide is the maximum over classes of the
per-class mean sigmoid across repetitions, and the class attaining that
maximum is the predicted class.  Thresholds for the three confidence
levels are fixed ahead of any test run by scanning a calibration
validation set for the smallest threshold whose retained accuracy meets
each target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classifier import NetParams, draw_mask, predict
from .manifest import N_CLASSES, ClassLabel

DEFAULT_T = 30
DEFAULT_KEEP_PROB = 0.30
DEFAULT_TARGETS = (0.90, 0.95, 0.98)

THRESHOLDS_HEADER = "wsi-triage-thresholds v1"


class _Unreachable:
    """Sentinel for a target accuracy no threshold can achieve."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNREACHABLE"


UNREACHABLE = _Unreachable()


@dataclass(frozen=True)
class ConfidenceScore:
    value: float
    argmax_class: ClassLabel


def mc_predict(embedding: np.ndarray, params: NetParams, t: int = DEFAULT_T,
               keep_prob: float = DEFAULT_KEEP_PROB, seed: int = 0) -> np.ndarray:
    """(T, 4) matrix of repeated masked predictions; row i is repetition i."""
    if t < 1:
        raise ValueError(f"need at least one repetition, got {t}")
    rng = np.random.default_rng(seed)
    rows = [predict(embedding, params, draw_mask(rng, keep_prob)) for _ in range(t)]
    return np.stack(rows)


def validate_matrix(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != N_CLASSES or matrix.shape[0] < 1:
        raise ValueError(f"expected a (T, {N_CLASSES}) matrix, got shape {matrix.shape}")
    if np.any(matrix <= 0.0) or np.any(matrix >= 1.0):
        raise ValueError("prediction matrix entries must lie strictly in (0, 1)")
    return matrix


def score(matrix: np.ndarray) -> ConfidenceScore:
    """Max over classes of the column means; argmax ties break to the
    canonical class order.

    Column means use exactly-rounded summation, so the score is invariant
    to row permutation down to the last bit.
    """
    matrix = validate_matrix(matrix)
    t = matrix.shape[0]
    means = np.array([math.fsum(matrix[:, c]) / t for c in range(N_CLASSES)])
    idx = int(np.argmax(means))
    return ConfidenceScore(value=float(means[idx]), argmax_class=ClassLabel(idx))


@dataclass(frozen=True)
class ThresholdSet:
    """Per-level sigmoid thresholds; a level is UNREACHABLE when no
    threshold attains its target on the calibration data."""

    targets: tuple
    values: tuple     # floats or UNREACHABLE, parallel to targets

    def __post_init__(self):
        if len(self.targets) != len(self.values):
            raise ValueError("targets and values must have equal length")
        if list(self.targets) != sorted(self.targets):
            raise ValueError("targets must be non-decreasing")
        last = -np.inf
        seen_unreachable = False
        for v in self.values:
            if v is UNREACHABLE:
                seen_unreachable = True
                continue
            if seen_unreachable:
                raise ValueError("a reachable level cannot follow an unreachable one")
            if v < last:
                raise ValueError("thresholds must be non-decreasing in level")
            last = v

    @property
    def levels(self) -> tuple:
        return tuple(range(1, len(self.targets) + 1))

    def value(self, level: int):
        return self.values[level - 1]

    def target(self, level: int) -> float:
        return self.targets[level - 1]


def calibrate_thresholds(results, targets=DEFAULT_TARGETS) -> ThresholdSet:
    """Smallest threshold per target such that accuracy over results with
    score >= threshold meets the target.

    Candidates are 0 plus the observed scores: the retained-accuracy curve
    is a step function with steps only at data points.
    """
    results = list(results)
    if not results:
        raise ValueError("cannot calibrate thresholds on empty validation results")
    scores = np.array([s for s, _ in results], dtype=np.float64)
    correct = np.array([bool(c) for _, c in results])

    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    c_sorted = correct[order]
    # suffix_correct[i] / suffix_n[i]: accuracy over items with the i-th
    # smallest score or greater
    suffix_correct = np.cumsum(c_sorted[::-1])[::-1]
    n = len(results)

    candidates = [0.0] + sorted(set(s_sorted.tolist()))
    values = []
    for target in targets:
        chosen = UNREACHABLE
        for cand in candidates:
            first = int(np.searchsorted(s_sorted, cand, side="left"))
            kept = n - first
            if kept == 0:
                continue
            if suffix_correct[first] / kept >= target:
                chosen = cand
                break
        values.append(chosen)
    return ThresholdSet(targets=tuple(targets), values=tuple(values))


def apply_threshold(s, threshold) -> bool:
    """True when the score clears the threshold (inclusive boundary);
    an UNREACHABLE threshold never classifies."""
    if threshold is UNREACHABLE:
        return False
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    value = s.value if isinstance(s, ConfidenceScore) else float(s)
    return value >= threshold


def save_thresholds(thresholds: ThresholdSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(THRESHOLDS_HEADER + "\n")
        for level in thresholds.levels:
            v = thresholds.value(level)
            token = "unreachable" if v is UNREACHABLE else repr(float(v))
            fh.write(f"level {level} target {thresholds.target(level)!r} threshold {token}\n")


def load_thresholds(path) -> ThresholdSet:
    targets, values = [], []
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != THRESHOLDS_HEADER:
            raise ValueError(f"{path}: not a thresholds file")
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] != "level" or len(parts) != 6:
                raise ValueError(f"{path}: malformed line {line!r}")
            targets.append(float(parts[3]))
            values.append(UNREACHABLE if parts[5] == "unreachable" else float(parts[5]))
    return ThresholdSet(targets=tuple(targets), values=tuple(values))
