"""Specimen-level aggregation of per-slide outcomes.

Diagnosis is reported per specimen, which may span several slides; the
specimen takes the maximum-confidence prediction of its slides.  Slides
without any detected region of interest carry no prediction, and a
specimen whose slides all lack ROIs stays unclassified as no-ROI.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .confidence import ThresholdSet, apply_threshold
from .manifest import ClassLabel

RESULTS_HEADER = "wsi-triage-specimen-results v1"
SLIDE_RESULTS_HEADER = "wsi-triage-slide-results v1"
CLASS_SCORES_HEADER = "wsi-triage-class-scores v1"


class FinalOutcome(enum.Enum):
    CLASSIFIED = "Classified"
    BELOW_THRESHOLD = "BelowThreshold"
    NO_ROI = "NoROI"


@dataclass(frozen=True)
class SlideResult:
    slide_id: str
    specimen_id: str
    predicted: ClassLabel | None = None   # None when no ROI was detected
    score: float | None = None
    matrix: np.ndarray | None = None      # (T, 4) repetition matrix
    error: str | None = None

    @property
    def classified(self) -> bool:
        return self.predicted is not None and self.error is None

    @property
    def class_means(self) -> np.ndarray | None:
        return None if self.matrix is None else self.matrix.mean(axis=0)


@dataclass(frozen=True)
class SpecimenResult:
    specimen_id: str
    predicted: ClassLabel | None          # None when every slide was no-ROI
    score: float | None
    source_slide_id: str | None
    class_means: np.ndarray | None
    final: FinalOutcome | None = None     # set by finalize()

    @property
    def classified(self) -> bool:
        return self.predicted is not None


def aggregate(slide_results) -> SpecimenResult:
    """Maximum-confidence slide becomes the specimen prediction; score
    ties break to the lowest slide_id."""
    slide_results = list(slide_results)
    if not slide_results:
        raise ValueError("no slide results to aggregate")
    specimen_ids = {r.specimen_id for r in slide_results}
    if len(specimen_ids) != 1:
        raise ValueError(f"mixed specimen ids in one aggregate: {sorted(specimen_ids)}")
    specimen_id = slide_results[0].specimen_id

    candidates = [r for r in slide_results if r.classified]
    if not candidates:
        return SpecimenResult(specimen_id, None, None, None, None)
    best = min(candidates, key=lambda r: (-r.score, r.slide_id))
    return SpecimenResult(specimen_id, best.predicted, best.score,
                          best.slide_id, best.class_means)


def finalize(specimen: SpecimenResult, threshold) -> SpecimenResult:
    """Apply a confidence threshold: no-ROI specimens stay no-ROI, others
    are classified iff their score clears the threshold."""
    if not specimen.classified:
        return replace(specimen, final=FinalOutcome.NO_ROI)
    if apply_threshold(specimen.score, threshold):
        return replace(specimen, final=FinalOutcome.CLASSIFIED)
    return replace(specimen, final=FinalOutcome.BELOW_THRESHOLD)


def attained_level(specimen: SpecimenResult, thresholds: ThresholdSet) -> int:
    """Highest confidence level whose threshold the specimen clears (0 if none)."""
    level = 0
    if not specimen.classified:
        return level
    for lv in thresholds.levels:
        if apply_threshold(specimen.score, thresholds.value(lv)):
            level = lv
    return level


def save_specimen_results(specimens, thresholds: ThresholdSet, path,
                          report_level: int = 1) -> None:
    """One line per specimen: specimen_id,final,class,score,level,source_slide.

    `final` is the outcome at report_level's threshold; `level` is the
    highest level the specimen's score attains.
    """
    threshold = thresholds.value(report_level) if thresholds.levels else 0.0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(RESULTS_HEADER + "\n")
        fh.write("specimen_id,final,class,score,level,source_slide\n")
        for spec in sorted(specimens, key=lambda s: s.specimen_id):
            done = finalize(spec, threshold)
            if done.final is FinalOutcome.NO_ROI:
                fh.write(f"{spec.specimen_id},{done.final.value},,,,\n")
            else:
                fh.write(
                    f"{spec.specimen_id},{done.final.value},{spec.predicted.token},"
                    f"{spec.score!r},{attained_level(spec, thresholds)},"
                    f"{spec.source_slide_id}\n"
                )


def save_slide_results(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SLIDE_RESULTS_HEADER + "\n")
        fh.write("slide_id,specimen_id,outcome,class,score,error\n")
        for r in sorted(results, key=lambda r: r.slide_id):
            if r.error is not None:
                fh.write(f"{r.slide_id},{r.specimen_id},Error,,,{r.error}\n")
            elif r.classified:
                fh.write(f"{r.slide_id},{r.specimen_id},Classified,"
                         f"{r.predicted.token},{r.score!r},\n")
            else:
                fh.write(f"{r.slide_id},{r.specimen_id},NoROI,,,\n")


def load_noroi_slide_ids(path) -> set:
    out = set()
    with open(path, "r", encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != SLIDE_RESULTS_HEADER:
            raise ValueError(f"{path}: not a slide results file")
        fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if len(parts) >= 3 and parts[2] == "NoROI":
                out.add(parts[0])
    return out


def save_class_scores(specimens, path) -> None:
    """Per-class mean sigmoid of each classified specimen's winning slide,
    the score swept for the one-vs-rest ROC curves."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CLASS_SCORES_HEADER + "\n")
        fh.write("specimen_id,basaloid,squamous,melanocytic,other\n")
        for spec in sorted(specimens, key=lambda s: s.specimen_id):
            if spec.class_means is None:
                continue
            means = ",".join(repr(float(v)) for v in spec.class_means)
            fh.write(f"{spec.specimen_id},{means}\n")


def load_specimen_results(results_path, class_scores_path=None) -> list[SpecimenResult]:
    """Rebuild specimen results from the results file (and the class-score
    table when per-class ROC evaluation is wanted)."""
    means_by_id = {}
    if class_scores_path is not None:
        with open(class_scores_path, "r", encoding="utf-8") as fh:
            if fh.readline().rstrip("\n") != CLASS_SCORES_HEADER:
                raise ValueError(f"{class_scores_path}: not a class score table")
            fh.readline()
            for line in fh:
                parts = line.rstrip("\n").split(",")
                if len(parts) == 5:
                    means_by_id[parts[0]] = np.array([float(v) for v in parts[1:]])

    out = []
    with open(results_path, "r", encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != RESULTS_HEADER:
            raise ValueError(f"{results_path}: not a specimen results file")
        fh.readline()
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"{results_path}: malformed line {line!r}")
            specimen_id, final, cls, s, _, source = parts
            if final == FinalOutcome.NO_ROI.value:
                out.append(SpecimenResult(specimen_id, None, None, None, None))
            else:
                out.append(SpecimenResult(
                    specimen_id, ClassLabel.from_token(cls), float(s), source,
                    means_by_id.get(specimen_id)))
    return out
