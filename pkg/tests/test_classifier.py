import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsitriage.classifier import (NetParams, StochasticMask, TrainConfig,
                                  accuracy, draw_mask, featurize, fine_tune,
                                  init_params, load_params, loss_and_grad,
                                  one_hot, pool, predict, predict_class,
                                  save_params, train)
from wsitriage.tiling import Tile


def rand_tile(seed):
    rng = np.random.default_rng(seed)
    return Tile("s", (0, 0), rng.integers(0, 256, (128, 128, 3), dtype=np.uint8), 1.0)


def separable_embeddings(n_per_class=30, seed=0):
    """Four well-separated gaussian clusters in feature space."""
    rng = np.random.default_rng(seed)
    centers = rng.random((4, 64)) * 0.5
    xs, ys = [], []
    for c in range(4):
        xs.append(centers[c] + rng.normal(0, 0.01, size=(n_per_class, 64)))
        ys.extend([c] * n_per_class)
    return np.concatenate(xs), np.array(ys)


class TestFeaturize:
    def test_uniform_gray_tile_gradient_in_lowest_bin(self):
        pixels = np.full((128, 128, 3), 90, dtype=np.uint8)
        vec = featurize(Tile("s", (0, 0), pixels, 1.0))
        assert vec[48] == 1.0
        assert np.all(vec[49:] == 0.0)

    def test_identical_tiles_identical_vectors(self):
        a = featurize(rand_tile(4))
        b = featurize(rand_tile(4))
        assert np.array_equal(a, b)

    def test_histogram_groups_sum_to_one(self):
        vec = featurize(rand_tile(9))
        for start in (0, 16, 32, 48):
            assert abs(vec[start:start + 16].sum() - 1.0) < 1e-12

    def test_no_tissue_uniform_fallback(self):
        glass = np.full((128, 128, 3), 255, dtype=np.uint8)
        vec = featurize(Tile("s", (0, 0), glass, 0.0))
        assert np.all(vec[:48] == 1.0 / 16)

    def test_all_finite(self):
        vec = featurize(rand_tile(17))
        assert np.all(np.isfinite(vec))
        assert len(vec) == 64


class TestPool:
    def test_single_vector_identity(self):
        v = np.arange(64.0)
        assert np.array_equal(pool([v]), v)

    def test_duplicate_is_identity(self):
        v = np.random.default_rng(0).random(64)
        assert np.allclose(pool([v, v]), v, atol=0)

    def test_matches_independent_mean(self):
        rng = np.random.default_rng(1)
        vs = [rng.random(64) for _ in range(5)]
        expected = sum(vs) / 5
        assert np.all(np.abs(pool(vs) - expected) < 1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pool([])

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 1000))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        vs = [rng.random(64) for _ in range(6)]
        shuffled = [vs[i] for i in rng.permutation(6)]
        assert np.allclose(pool(vs), pool(shuffled), atol=1e-15)


class TestPredict:
    def test_zero_params_give_half(self):
        params = NetParams(np.zeros((64, 32)), np.zeros(32), np.zeros((32, 4)),
                           np.zeros(4))
        out = predict(np.random.default_rng(0).random(64), params)
        assert np.allclose(out, 0.5, atol=0)

    def test_full_keep_mask_equals_no_mask(self):
        params = init_params(3)
        emb = np.random.default_rng(4).random(64)
        mask = StochasticMask(keep=np.ones(32, dtype=bool), keep_prob=1.0)
        assert np.array_equal(predict(emb, params, mask), predict(emb, params))

    def test_matches_independent_forward_pass(self):
        # second implementation written from scratch with explicit loops
        rng = np.random.default_rng(8)
        params = init_params(8)
        emb = rng.random(64)
        mask = draw_mask(rng, 0.5)

        hidden = np.empty(32)
        for j in range(32):
            acc = params.b1[j]
            for i in range(64):
                acc += emb[i] * params.w1[i, j]
            hidden[j] = np.tanh(acc)
        hidden = hidden * mask.keep / mask.keep_prob
        out = np.empty(4)
        for c in range(4):
            acc = params.b2[c]
            for j in range(32):
                acc += hidden[j] * params.w2[j, c]
            out[c] = 1.0 / (1.0 + np.exp(-acc))

        got = predict(emb, params, mask)
        assert np.all(np.abs(got - out) < 1e-12)

    def test_outputs_in_open_interval(self):
        params = init_params(1)
        out = predict(np.random.default_rng(2).random(64) * 10, params)
        assert np.all((out > 0) & (out < 1))

    def test_argmax_tie_breaks_canonically(self):
        params = NetParams(np.zeros((64, 32)), np.zeros(32), np.zeros((32, 4)),
                           np.zeros(4))
        assert predict_class(np.zeros(64), params) == 0


class TestGradients:
    def test_analytic_matches_central_differences(self):
        rng = np.random.default_rng(11)
        for instance in range(3):
            params = init_params(instance)
            x = rng.random((6, 64))
            y = one_hot(rng.integers(0, 4, size=6))
            scale = (rng.random((6, 32)) < 0.5) / 0.5
            _, grads = loss_and_grad(params, x, y, scale)
            arrays = {"w1": params.w1, "b1": params.b1,
                      "w2": params.w2, "b2": params.b2}
            for _ in range(5):
                name = ["w1", "b1", "w2", "b2"][rng.integers(0, 4)]
                arr = arrays[name]
                idx = tuple(rng.integers(0, s) for s in arr.shape)
                eps = 1e-6
                arr[idx] += eps
                up, _ = loss_and_grad(params, x, y, scale)
                arr[idx] -= 2 * eps
                down, _ = loss_and_grad(params, x, y, scale)
                arr[idx] += eps
                fd = (up - down) / (2 * eps)
                analytic = grads[name][idx]
                denom = max(abs(fd), abs(analytic), 1e-8)
                assert abs(fd - analytic) / denom < 1e-4


class TestTrain:
    def test_separable_data_high_accuracy(self):
        x, y = separable_embeddings()
        params = train(x, y, TrainConfig(seed=1))
        assert accuracy(params, x, y) >= 0.95

    def test_zero_epochs_returns_init(self):
        x, y = separable_embeddings(5)
        params = train(x, y, TrainConfig(epochs=0, seed=7))
        init = init_params(7)
        assert np.array_equal(params.w1, init.w1)
        assert np.array_equal(params.b2, init.b2)

    def test_missing_class_warns(self):
        x, y = separable_embeddings(4)
        keep = y != 2
        with pytest.warns(UserWarning, match="missing"):
            train(x[keep], y[keep], TrainConfig(epochs=1))

    def test_deterministic(self):
        x, y = separable_embeddings(10)
        a = train(x, y, TrainConfig(epochs=5, seed=3))
        b = train(x, y, TrainConfig(epochs=5, seed=3))
        assert np.array_equal(a.w1, b.w1) and np.array_equal(a.w2, b.w2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            train(np.empty((0, 64)), [], TrainConfig())


class TestFineTune:
    def test_zero_epochs_identity(self):
        x, y = separable_embeddings(5)
        base = train(x, y, TrainConfig(epochs=3, seed=2))
        tuned = fine_tune(base, x, y, TrainConfig(finetune_epochs=0))
        assert np.array_equal(tuned.w1, base.w1)
        assert np.array_equal(tuned.b1, base.b1)

    def test_same_distribution_no_degradation(self):
        x, y = separable_embeddings(30, seed=5)
        xv, yv = separable_embeddings(20, seed=5)   # same centers, same seed stream
        base = train(x, y, TrainConfig(seed=4))
        before = accuracy(base, xv, yv)
        tuned = fine_tune(base, x, y, TrainConfig(seed=4))
        after = accuracy(tuned, xv, yv)
        assert after >= before - 0.02


class TestPersistence:
    def test_round_trip_exact(self, tmp_path):
        params = train(*separable_embeddings(8), TrainConfig(epochs=3, seed=9))
        path = tmp_path / "net.txt"
        save_params(params, path)
        loaded = load_params(path)
        for name in ("w1", "b1", "w2", "b2"):
            assert np.array_equal(getattr(loaded, name), getattr(params, name))

    def test_bad_file(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("nope\n")
        with pytest.raises(ValueError):
            load_params(path)
