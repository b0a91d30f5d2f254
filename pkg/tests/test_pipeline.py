import numpy as np
import pytest

from wsitriage.config import Config
from wsitriage.manifest import ClassLabel, SlideRecord, Split
from wsitriage.pipeline import (Models, StageTiming, build_run_manifest,
                                load_timings, profile, run_corpus, run_slide,
                                save_run_manifest, save_timings)
from wsitriage.pnm import write_ppm
from wsitriage.synthesis import generate_slide, identity_profile


@pytest.fixture(scope="module")
def config():
    return Config()


def results_equal(a, b):
    if (a.slide_id, a.specimen_id, a.predicted, a.score, a.error) != \
            (b.slide_id, b.specimen_id, b.predicted, b.score, b.error):
        return False
    if (a.matrix is None) != (b.matrix is None):
        return False
    return a.matrix is None or np.array_equal(a.matrix, b.matrix)


class TestRunSlide:
    def test_blank_slide_noroi_with_zero_classify_time(self, tmp_path,
                                                       pipeline_models, config):
        profile_blank = identity_profile(artifact_rates={"blank": 1.0})
        slide = generate_slide(ClassLabel.OTHER, profile_blank, 1)
        path = str(tmp_path / "blank.ppm")
        write_ppm(path, slide.raster)
        record = SlideRecord("blank", "sp", "reference", ClassLabel.OTHER, path)
        result, timing = run_slide(record, pipeline_models, config, 0)
        assert not result.classified
        assert result.error is None
        assert timing.classify_ms == 0.0
        assert timing.score_ms == 0.0

    def test_lesion_slide_classified_correctly(self, tmp_path, pipeline_models,
                                               config):
        slide = generate_slide(ClassLabel.BASALOID,
                               identity_profile(noise_sigma=1.0), 33)
        path = str(tmp_path / "bas.ppm")
        write_ppm(path, slide.raster)
        record = SlideRecord("bas", "sp", "reference", ClassLabel.BASALOID, path)
        result, timing = run_slide(record, pipeline_models, config, 0)
        assert result.classified
        assert result.predicted is ClassLabel.BASALOID
        assert result.matrix.shape == (30, 4)
        assert timing.total_ms > 0

    def test_unreadable_raster_becomes_error_result(self, pipeline_models, config):
        record = SlideRecord("gone", "sp", "reference", ClassLabel.OTHER,
                             "/nonexistent/path.ppm")
        result, timing = run_slide(record, pipeline_models, config, 0)
        assert result.error is not None
        assert not result.classified
        assert timing.slide_id == "gone"

    def test_deterministic_given_seed(self, tmp_path, pipeline_models, config):
        slide = generate_slide(ClassLabel.MELANOCYTIC,
                               identity_profile(noise_sigma=1.0), 5)
        path = str(tmp_path / "mel.ppm")
        write_ppm(path, slide.raster)
        record = SlideRecord("mel", "sp", "reference", ClassLabel.MELANOCYTIC, path)
        a, _ = run_slide(record, pipeline_models, config, 42)
        b, _ = run_slide(record, pipeline_models, config, 42)
        c, _ = run_slide(record, pipeline_models, config, 43)
        assert results_equal(a, b)
        assert not np.array_equal(a.matrix, c.matrix)   # seed matters


class TestRunCorpus:
    def test_worker_counts_bit_identical(self, small_corpus, pipeline_models,
                                         config):
        runs = [run_corpus(small_corpus, pipeline_models, config, workers=w,
                           global_seed=7) for w in (1, 2)]
        for a, b in zip(runs[0].slide_results, runs[1].slide_results):
            assert results_equal(a, b)

    def test_every_slide_exactly_once_ordered(self, small_corpus,
                                              pipeline_models, config):
        run = run_corpus(small_corpus, pipeline_models, config, workers=2,
                         global_seed=7)
        ids = [r.slide_id for r in run.slide_results]
        assert ids == sorted(r.slide_id for r in small_corpus.records)
        assert len(set(ids)) == len(small_corpus.records)

    def test_split_filter(self, small_corpus, pipeline_models, config):
        run = run_corpus(small_corpus, pipeline_models, config, workers=1,
                         global_seed=7, split=Split.TEST)
        expected = {r.slide_id for r in small_corpus.records_in(Split.TEST)}
        assert {r.slide_id for r in run.slide_results} == expected

    def test_empty_manifest(self, pipeline_models, config):
        from wsitriage.manifest import DatasetManifest
        run = run_corpus(DatasetManifest(records=[]), pipeline_models, config,
                         workers=1)
        assert run.slide_results == []
        assert run.specimens == []
        assert run.throughput_per_hour == 0.0

    def test_specimen_aggregation_present(self, small_corpus, pipeline_models,
                                          config):
        run = run_corpus(small_corpus, pipeline_models, config, workers=2,
                         global_seed=7)
        assert len(run.specimens) == len(small_corpus.specimen_ids())

    def test_failed_slide_recorded_not_fatal(self, small_corpus,
                                             pipeline_models, config, tmp_path):
        from wsitriage.manifest import DatasetManifest
        records = list(small_corpus.records[:3])
        records.append(SlideRecord("zz-missing", "zz", "reference",
                                   ClassLabel.OTHER, "/missing.ppm"))
        manifest = DatasetManifest(records=records)
        run = run_corpus(manifest, pipeline_models, config, workers=2)
        by_id = {r.slide_id: r for r in run.slide_results}
        assert by_id["zz-missing"].error is not None
        assert len(run.slide_results) == 4


class TestProfile:
    def test_single_timing(self):
        t = StageTiming("a", 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 22.0)
        summary = profile([t])
        assert summary.median_total_ms == 22.0
        assert summary.stage_median_ms["segment"][1] == 1.0

    def test_median_of_three(self):
        timings = [StageTiming(f"s{i}", total_ms=v)
                   for i, v in enumerate((10.0, 20.0, 30.0))]
        assert profile(timings).median_total_ms == 20.0

    def test_throughput_from_wall_clock(self):
        timings = [StageTiming(f"s{i}", total_ms=10.0) for i in range(10)]
        summary = profile(timings, wall_ms=2000.0)
        assert summary.throughput_per_hour == pytest.approx(10 / (2.0 / 3600.0))

    def test_noroi_exclusion(self):
        timings = [StageTiming("a", total_ms=10.0),
                   StageTiming("b", total_ms=100.0),
                   StageTiming("c", total_ms=200.0)]
        summary = profile(timings, noroi_slide_ids={"a"})
        assert summary.median_total_classified_ms == 150.0
        assert summary.median_total_ms == 100.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            profile([])

    def test_stage_sums_bounded_by_total(self, small_corpus, pipeline_models,
                                         config):
        run = run_corpus(small_corpus, pipeline_models, config, workers=1,
                         global_seed=3)
        for t in run.timings:
            assert t.stage_sum() <= t.total_ms * 1.05

    def test_timings_round_trip(self, tmp_path):
        timings = [StageTiming("a", 1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 25.0),
                   StageTiming("b", total_ms=1.0)]
        path = tmp_path / "t.csv"
        save_timings(timings, path)
        loaded = load_timings(path)
        assert loaded == sorted(timings, key=lambda t: t.slide_id)


class TestRunManifest:
    def test_build_and_save(self, tmp_path, config):
        model_path = tmp_path / "model.txt"
        model_path.write_text("stub\n")
        rm = build_run_manifest("run1", 7, 4, "manifest.txt",
                                {"classifier": str(model_path)}, config)
        assert rm.model_versions["classifier"]
        out = tmp_path / "run_manifest.txt"
        save_run_manifest(rm, out, wall_ms=123.0)
        text = out.read_text()
        assert "global_seed=7" in text
        assert "worker_count=4" in text
        assert "wall_ms=123.0" in text
        assert "confidence.T=30" in text
