"""Command-line surface: corpus generation, splitting, training, per-lab
calibration, frozen runs, evaluation, and timing profiles.

Exit codes: 0 success, 1 usage/config error, 2 data error (missing or
malformed input files, the offending path named on stderr).
"""

from __future__ import annotations

import argparse
import os
import sys

from .adaptation import AdapterModel, load_adapter, save_adapter
from .aggregation import (load_noroi_slide_ids, load_specimen_results,
                          save_class_scores, save_slide_results,
                          save_specimen_results)
from .classifier import load_params, save_params
from .config import Config, ConfigError, load_config
from .confidence import load_thresholds, save_thresholds
from .evaluation import evaluate, format_report, write_report
from .manifest import (DatasetManifest, ManifestError, Split, build_splits,
                       load_manifest, save_manifest)
from .pipeline import (Models, build_run_manifest, format_profile,
                       load_timings, profile, run_corpus, save_run_manifest,
                       save_timings)
from .roi import load_segmenter, save_segmenter
from .synthesis import default_lab_profiles, generate_corpus
from .training import TrainedModels, calibrate_lab, calibrate_reference, train_models

USAGE_ERROR = 1
DATA_ERROR = 2


class CliError(Exception):
    def __init__(self, message, code=DATA_ERROR):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message, code=USAGE_ERROR)


def _load_config(path) -> Config:
    if path is None:
        return Config()
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(str(exc), code=USAGE_ERROR) from None


def _require(path, kind="input"):
    if not os.path.exists(path):
        raise CliError(f"missing {kind} file: {path}")
    return path


def _load_manifest(path) -> DatasetManifest:
    _require(path, "manifest")
    try:
        return load_manifest(path)
    except ManifestError as exc:
        raise CliError(str(exc)) from None


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    profiles = {p.lab_id: p for p in default_lab_profiles()}
    labs = args.labs.split(",") if args.labs else list(profiles)
    unknown = [lab for lab in labs if lab not in profiles]
    if unknown:
        raise CliError(f"unknown lab profiles: {unknown}", code=USAGE_ERROR)
    out = args.out or os.path.join(config["paths.workdir"], "corpus")
    manifest = generate_corpus(
        n_specimens_per_lab=args.specimens,
        labs=[profiles[lab] for lab in labs],
        slides_per_specimen_range=(args.slides_min, args.slides_max),
        seed=args.seed if args.seed is not None else config["seed"],
        out_dir=out,
        workers=args.workers or config["workers"],
    )
    print(f"wrote {len(manifest.records)} slides for {len(labs)} labs to {out}")
    return 0


def cmd_split(args) -> int:
    manifest = _load_manifest(args.manifest)
    if args.lab is not None:
        records = [r for r in manifest.records if r.lab_id == args.lab]
        if not records:
            raise CliError(f"no records for lab {args.lab!r} in {args.manifest}")
        manifest = DatasetManifest(records=records)
    try:
        ratios = tuple(float(v) for v in args.ratios.split(","))
        names = tuple(Split(n) for n in args.names.split(","))
    except ValueError as exc:
        raise CliError(f"bad --ratios/--names value: {exc}", code=USAGE_ERROR) from None
    if len(ratios) != 3 or len(names) != 3:
        raise CliError("need exactly three ratios and three split names",
                       code=USAGE_ERROR)
    out = build_splits(manifest, ratios, seed=args.seed, splits=names)
    save_manifest(out, args.out)
    counts = {}
    for split in out.splits.values():
        counts[split.value] = counts.get(split.value, 0) + 1
    print(f"wrote {args.out}: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return 0


def _model_paths(models_dir, lab=None):
    base = lambda name: os.path.join(models_dir, name)
    if lab is None:
        return {
            "adapter": base("reference.adapter"),
            "segmenter": base("segmenter.txt"),
            "classifier": base("classifier.txt"),
            "thresholds": base("reference.thresholds"),
        }
    return {
        "adapter": base(f"{lab}.adapter"),
        "segmenter": base("segmenter.txt"),
        "classifier": base(f"{lab}.classifier.txt"),
        "thresholds": base(f"{lab}.thresholds"),
    }


def cmd_train(args) -> int:
    config = _load_config(args.config)
    manifest = _load_manifest(args.manifest)
    trained = train_models(manifest, config, workers=args.workers or config["workers"])
    os.makedirs(args.models, exist_ok=True)
    paths = _model_paths(args.models)
    save_adapter(AdapterModel(trained.reference_stats, trained.reference_stats),
                 paths["adapter"])
    save_segmenter(trained.segmenter, paths["segmenter"])
    save_params(trained.classifier, paths["classifier"])
    thresholds = calibrate_reference(
        manifest, trained, config, workers=args.workers or config["workers"],
        global_seed=args.seed if args.seed is not None else config["seed"])
    save_thresholds(thresholds, paths["thresholds"])
    print(f"trained on {trained.n_train_slides} slides; "
          f"training accuracy {trained.train_accuracy:.4f}")
    return 0


def cmd_calibrate(args) -> int:
    config = _load_config(args.config)
    manifest = _load_manifest(args.manifest)
    base_paths = _model_paths(args.models)
    for name in ("adapter", "segmenter", "classifier"):
        _require(base_paths[name], "model")
    reference = load_adapter(base_paths["adapter"])
    base = TrainedModels(
        reference_stats=reference.target,
        segmenter=load_segmenter(base_paths["segmenter"]),
        classifier=load_params(base_paths["classifier"]),
        train_accuracy=float("nan"),
        n_train_slides=0,
    )
    cal = calibrate_lab(manifest, base, config,
                        workers=args.workers or config["workers"],
                        global_seed=args.seed if args.seed is not None else config["seed"],
                        with_adaptation=not args.no_adaptation)
    paths = _model_paths(args.models, cal.lab_id)
    if cal.adapter is not None:
        save_adapter(cal.adapter, paths["adapter"])
    save_params(cal.classifier, paths["classifier"])
    save_thresholds(cal.thresholds, paths["thresholds"])
    print(f"lab {cal.lab_id}: validation accuracy {cal.validation_accuracy:.4f} "
          f"over {cal.n_validation_specimens} specimens")
    print("thresholds: " + ", ".join(
        f"level {lv} -> {cal.thresholds.value(lv)!r}" for lv in cal.thresholds.levels))
    return 0


def _load_models(models_dir, lab=None, with_adaptation=True) -> Models:
    paths = _model_paths(models_dir, lab)
    if lab is not None and not os.path.exists(paths["classifier"]):
        paths = _model_paths(models_dir)  # fall back to base models
    _require(paths["segmenter"], "model")
    _require(paths["classifier"], "model")
    adapter = None
    if with_adaptation and os.path.exists(paths["adapter"]):
        adapter = load_adapter(paths["adapter"])
    return Models(segmenter=load_segmenter(paths["segmenter"]),
                  classifier=load_params(paths["classifier"]),
                  adapter=adapter)


def cmd_run(args) -> int:
    config = _load_config(args.config)
    manifest = _load_manifest(args.manifest)
    models = _load_models(args.models, args.lab, with_adaptation=not args.no_adaptation)
    seed = args.seed if args.seed is not None else config["seed"]
    workers = args.workers or config["workers"]
    try:
        split = Split(args.split) if args.split else None
    except ValueError:
        raise CliError(f"unknown split {args.split!r}", code=USAGE_ERROR) from None
    out = args.out or os.path.join(config["paths.workdir"], "run")

    run = run_corpus(manifest, models, config, workers=workers,
                     global_seed=seed, split=split)

    thresholds_path = _model_paths(args.models, args.lab)["thresholds"]
    if not os.path.exists(thresholds_path):
        thresholds_path = _model_paths(args.models)["thresholds"]
    _require(thresholds_path, "thresholds")
    thresholds = load_thresholds(thresholds_path)

    os.makedirs(out, exist_ok=True)
    save_slide_results(run.slide_results, os.path.join(out, "slide_results.csv"))
    save_specimen_results(run.specimens, thresholds,
                          os.path.join(out, "specimen_results.csv"))
    save_class_scores(run.specimens, os.path.join(out, "class_scores.csv"))
    save_timings(run.timings, os.path.join(out, "timings.csv"))
    save_thresholds(thresholds, os.path.join(out, "thresholds.txt"))
    rm = build_run_manifest(
        run_id=os.path.basename(os.path.normpath(out)),
        global_seed=seed, workers=workers, input_manifest=args.manifest,
        model_paths={k: p for k, p in _model_paths(args.models, args.lab).items()
                     if os.path.exists(p)},
        config=config)
    save_run_manifest(rm, os.path.join(out, "run_manifest.txt"), wall_ms=run.wall_ms)
    print(f"processed {len(run.slide_results)} slides "
          f"({len(run.specimens)} specimens) in {run.wall_ms:.0f} ms; "
          f"throughput {run.throughput_per_hour:.0f} slides/hour")
    return 0


def cmd_evaluate(args) -> int:
    manifest = _load_manifest(args.manifest)
    results_path = _require(os.path.join(args.run, "specimen_results.csv"), "results")
    scores_path = os.path.join(args.run, "class_scores.csv")
    specimens = load_specimen_results(
        results_path, scores_path if os.path.exists(scores_path) else None)
    thresholds = load_thresholds(_require(args.thresholds, "thresholds"))
    truths = manifest.truth_by_specimen()
    try:
        report = evaluate(specimens, truths, thresholds)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if args.out:
        write_report(report, args.out)
        print(f"wrote report to {args.out}")
    else:
        print(format_report(report))
    return 0


def cmd_profile(args) -> int:
    timings = load_timings(_require(os.path.join(args.run, "timings.csv"), "timings"))
    if not timings:
        raise CliError(f"no timings in {args.run}")
    noroi = set()
    slide_results = os.path.join(args.run, "slide_results.csv")
    if os.path.exists(slide_results):
        noroi = load_noroi_slide_ids(slide_results)
    wall_ms = None
    rm_path = os.path.join(args.run, "run_manifest.txt")
    if os.path.exists(rm_path):
        with open(rm_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.startswith("wall_ms="):
                    wall_ms = float(line.split("=", 1)[1])
    print(format_profile(profile(timings, noroi_slide_ids=noroi, wall_ms=wall_ms)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wsitriage",
                     description="Whole-slide-image triage pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file (defaults documented in README)")
        p.add_argument("--seed", type=int, help="global seed (overrides config)")
        p.add_argument("--workers", type=int, help="worker processes (overrides config)")

    p = sub.add_parser("synth", help="generate a synthetic multi-lab corpus")
    common(p)
    p.add_argument("--out", help="corpus output directory "
                   "(default: <paths.workdir>/corpus)")
    p.add_argument("--labs", help="comma list of built-in lab profiles (default: all)")
    p.add_argument("--specimens", type=int, default=40, help="specimens per lab")
    p.add_argument("--slides-min", type=int, default=1)
    p.add_argument("--slides-max", type=int, default=2)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("split", help="assign specimen-grouped splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--lab", help="restrict to one lab's records first")
    p.add_argument("--ratios", default="0.7,0.15,0.15")
    p.add_argument("--names", default="Train,Validation,Test",
                   help="comma list of three split names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train reference models on the Train split")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True, help="model output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("calibrate", help="fit lab stats, fine-tune, fix thresholds")
    common(p)
    p.add_argument("--manifest", required=True, help="one lab's manifest with calib splits")
    p.add_argument("--models", required=True, help="directory with base models")
    p.add_argument("--no-adaptation", action="store_true",
                   help="skip appearance adaptation for this lab")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("run", help="frozen run over a manifest split")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--lab", help="use this lab's calibrated models")
    p.add_argument("--split", help="restrict to one split (e.g. Test)")
    p.add_argument("--no-adaptation", action="store_true")
    p.add_argument("--out", help="run output directory "
                   "(default: <paths.workdir>/run)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("evaluate", help="selective-classification report for a run")
    p.add_argument("--run", required=True, help="run output directory")
    p.add_argument("--manifest", required=True, help="manifest with ground truth")
    p.add_argument("--thresholds", required=True, help="thresholds file")
    p.add_argument("--out", help="write report files here instead of stdout")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("profile", help="per-stage timing summary for a run")
    p.add_argument("--run", required=True, help="run output directory")
    p.set_defaults(fn=cmd_profile)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ManifestError, ConfigError, ValueError) as exc:
        # library-level validation failures are data errors
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
