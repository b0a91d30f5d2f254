"""Model fitting and per-lab calibration on top of the slide pipeline.

Development fits everything on the reference lab's training split: domain
statistics, the ROI segmenter (on the generator's ground-truth masks), and
the slide classifier.  Calibrating an additional lab fits that lab's
color statistics, fine-tunes the classifier on the lab's calibration
slides, and fixes the lab's confidence thresholds on its held-out
calibration validation specimens; after that everything is frozen for a
single test run.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .adaptation import AdapterModel, DomainStats, adapt, fit_lab, fit_reference
from .classifier import NetParams, accuracy, fine_tune, train
from .config import Config
from .confidence import ThresholdSet, calibrate_thresholds
from .manifest import DatasetManifest, Split
from .parallel import pmap
from .pipeline import Models, embed_record, run_corpus
from .pnm import read_pgm, read_ppm
from .roi import PixelSegmenter, train_segmenter
from .synthesis import mask_path_for
from . import tiling


def _embed_task(record, models, config):
    return embed_record(record, models, config)


def collect_embeddings(records, models: Models, config: Config, workers: int = 1):
    """Embeddings and labels for every record with a non-empty ROI selection."""
    records = sorted(records, key=lambda r: r.slide_id)
    fn = functools.partial(_embed_task, models=models, config=config)
    embeddings = pmap(fn, records, workers=workers)
    xs, labels, kept = [], [], []
    for rec, emb in zip(records, embeddings):
        if emb is None:
            continue
        xs.append(emb)
        labels.append(int(rec.truth))
        kept.append(rec)
    x = np.stack(xs) if xs else np.empty((0, 64))
    return x, np.array(labels, dtype=int), kept


def sample_tiles(records, config: Config, max_slides: int = 24):
    """Unadapted tissue tiles from a deterministic sample of slides."""
    tiles = []
    for rec in sorted(records, key=lambda r: r.slide_id)[:max_slides]:
        raster = read_ppm(rec.raster_path)
        mask = tiling.segment_tissue(raster, config.tiling)
        tiles.extend(tiling.tile(raster, mask, rec.slide_id, config.tiling))
    return tiles


def segmenter_pairs(records, adapter: AdapterModel | None, config: Config,
                    max_slides: int = 24, max_tiles: int = 600):
    """(adapted tile pixels, ground-truth lesion mask) training pairs."""
    pairs = []
    for rec in sorted(records, key=lambda r: r.slide_id)[:max_slides]:
        if len(pairs) >= max_tiles:
            break
        raster = read_ppm(rec.raster_path)
        lesion = read_pgm(mask_path_for(rec.raster_path)) > 0
        mask = tiling.segment_tissue(raster, config.tiling)
        for t in tiling.tile(raster, mask, rec.slide_id, config.tiling):
            if len(pairs) >= max_tiles:
                break
            if adapter is not None:
                t = adapt(t, adapter)
            y, x = t.origin
            side = config.tiling.tile_px
            pairs.append((t.pixels, lesion[y:y + side, x:x + side]))
    return pairs


@dataclass
class TrainedModels:
    reference_stats: DomainStats
    segmenter: PixelSegmenter
    classifier: NetParams
    train_accuracy: float
    n_train_slides: int


def train_models(manifest: DatasetManifest, config: Config,
                 workers: int = 1) -> TrainedModels:
    """Fit reference stats, ROI segmenter, and the base classifier on the
    manifest's training split."""
    train_records = manifest.records_in(Split.TRAIN)
    if not train_records:
        raise ValueError("manifest has no Train split records")

    ref_stats = fit_reference(sample_tiles(train_records, config), config.tiling)
    identity = AdapterModel(source=ref_stats, target=ref_stats)

    pairs = segmenter_pairs(train_records, identity, config)
    segmenter = train_segmenter(pairs, seed=config["classifier.seed"])

    embed_models = Models(segmenter=segmenter, adapter=identity)
    x, labels, kept = collect_embeddings(train_records, embed_models, config, workers)
    if len(x) == 0:
        raise ValueError("no training slide produced an ROI selection")
    params = train(x, labels, config.train)
    return TrainedModels(
        reference_stats=ref_stats,
        segmenter=segmenter,
        classifier=params,
        train_accuracy=accuracy(params, x, labels),
        n_train_slides=len(kept),
    )


def calibrate_reference(manifest: DatasetManifest, trained: TrainedModels,
                        config: Config, workers: int = 1,
                        global_seed: int = 0) -> ThresholdSet:
    """Fix confidence thresholds on the reference validation split."""
    identity = AdapterModel(trained.reference_stats, trained.reference_stats)
    models = Models(segmenter=trained.segmenter, classifier=trained.classifier,
                    adapter=identity)
    run = run_corpus(manifest, models, config, workers=workers,
                     global_seed=global_seed, split=Split.VALIDATION)
    truths = manifest.truth_by_specimen()
    scored = [(s.score, s.predicted == truths[s.specimen_id])
              for s in run.specimens if s.classified]
    if not scored:
        raise ValueError("no Validation specimen was scored")
    return calibrate_thresholds(scored, targets=config["confidence.targets"])


@dataclass
class LabCalibration:
    lab_id: str
    adapter: AdapterModel | None
    classifier: NetParams
    thresholds: ThresholdSet
    validation_accuracy: float      # specimen-level, unthresholded
    n_validation_specimens: int


def calibrate_lab(lab_manifest: DatasetManifest, base: TrainedModels,
                  config: Config, workers: int = 1, global_seed: int = 0,
                  with_adaptation: bool = True) -> LabCalibration:
    """Fit lab stats, fine-tune the classifier, and fix confidence
    thresholds, using only the lab's calibration splits."""
    lab_ids = lab_manifest.lab_ids()
    if len(lab_ids) != 1:
        raise ValueError(f"calibration manifest must cover one lab, got {lab_ids}")
    lab_id = lab_ids[0]

    cf_records = lab_manifest.records_in(Split.CALIB_FINETUNE)
    cv_records = lab_manifest.records_in(Split.CALIB_VALIDATION)
    if not cf_records or not cv_records:
        raise ValueError(f"lab {lab_id!r} needs CalibFinetune and CalibValidation splits")

    adapter = None
    if with_adaptation:
        lab_stats = fit_lab(sample_tiles(cf_records, config), config.tiling)
        adapter = AdapterModel(source=lab_stats, target=base.reference_stats)

    embed_models = Models(segmenter=base.segmenter, adapter=adapter)
    x, labels, _ = collect_embeddings(cf_records, embed_models, config, workers)
    if len(x) == 0:
        raise ValueError(f"lab {lab_id!r}: no fine-tuning slide produced an ROI")
    tuned = fine_tune(base.classifier, x, labels, config.train)

    models = Models(segmenter=base.segmenter, classifier=tuned, adapter=adapter)
    cv_run = run_corpus(lab_manifest, models, config, workers=workers,
                        global_seed=global_seed, split=Split.CALIB_VALIDATION)
    truths = lab_manifest.truth_by_specimen()
    scored = [(s.score, s.predicted == truths[s.specimen_id])
              for s in cv_run.specimens if s.classified]
    if not scored:
        raise ValueError(f"lab {lab_id!r}: no CalibValidation specimen was scored")
    thresholds = calibrate_thresholds(scored, targets=config["confidence.targets"])
    val_acc = float(np.mean([correct for _, correct in scored]))
    return LabCalibration(
        lab_id=lab_id,
        adapter=adapter,
        classifier=tuned,
        thresholds=thresholds,
        validation_accuracy=val_acc,
        n_validation_specimens=len(cv_run.specimens),
    )
