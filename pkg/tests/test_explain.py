"""Explanation-map tests: hand-derived CAM weights, a leaf-graph gradient
oracle for the extraction plumbing, RISE base cases, and overlap targeting."""

import numpy as np
import pytest

from attn_tutor import explain as E
from attn_tutor import model as M
from attn_tutor import tensor as T
from attn_tutor.tensor import Tensor, backward


def tiny_config():
    return M.VqaModelConfig(
        image_size=8, region_grid=2, feature_dim=4, question_vocab=6,
        answer_classes=3, recurrent_hidden=4,
    )


def tiny_batch(rng, config, b):
    images = rng.random((b, config.image_size, config.image_size, 3))
    questions = rng.integers(0, config.question_vocab, size=(b, 2))
    return images, questions


class TestExplanationMap:
    def test_negative_mass_rejected(self):
        bad = np.array([[0.5, 0.6], [-0.1, 0.0]])
        with pytest.raises(ValueError, match="negative"):
            E.ExplanationMap(grid=bad, source="gradcam")

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError, match="sums to"):
            E.ExplanationMap(grid=np.full((2, 2), 0.3), source="rise")

    def test_unknown_source_rejected(self):
        with pytest.raises(ValueError, match="source"):
            E.ExplanationMap(grid=np.full((2, 2), 0.25), source="lime")


class TestGradCam:
    def test_mean_logit_hand_case(self):
        # If the logit is the spatial mean of a single channel, every
        # gradient entry is 1/(E*E) and the map is relu(A) normalized.
        rng = np.random.default_rng(0)
        act = rng.normal(size=(1, 4, 4, 1))
        grad = np.full((1, 4, 4, 1), 1.0 / 16.0)
        got = E._cam_from_activations(act, grad, 4)[0]
        want = np.maximum(act[0, :, :, 0], 0.0)
        np.testing.assert_allclose(got, want / want.sum(), atol=1e-15)

    def test_matches_leaf_graph_gradient(self):
        # Rebuild the head with the conv activation as a leaf tensor; its
        # gradient must agree with what the batched extraction captured.
        config = tiny_config()
        params = M.init_params(config, 1)
        rng = np.random.default_rng(1)
        images, questions = tiny_batch(rng, config, 3)
        labels = np.array([0, 2, 1])
        got = E.grad_cam_batch(config, params, images, questions, labels)

        bundle = M.forward(config, params, images, questions)
        want = np.empty_like(got)
        for i in range(3):
            leaf = Tensor(bundle.conv_act.data[i:i + 1], requires_grad=True)
            g_i = M._region_pool(leaf, config.region_grid)
            g_q = Tensor(bundle.g_q.data[i:i + 1])
            _, g_f = M.attend(config, params, g_i, g_q)
            logits = M.answer_logits(params, g_f)
            onehot = np.zeros((1, config.answer_classes))
            onehot[0, labels[i]] = 1.0
            backward(T.tsum(logits * Tensor(onehot)))
            want[i] = E._cam_from_activations(leaf.data, leaf.grad, config.region_grid)[0]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_zeroed_encoder_falls_back_to_uniform(self):
        config = tiny_config()
        params = M.init_params(config, 2)
        for name in ("conv3.w", "conv3.b"):
            params[name] = Tensor(np.zeros_like(params[name].data), requires_grad=True)
        rng = np.random.default_rng(2)
        images, questions = tiny_batch(rng, config, 2)
        maps = E.grad_cam_batch(config, params, images, questions, [0, 1])
        np.testing.assert_array_equal(maps, np.full_like(maps, 1.0 / config.cells))

    def test_output_on_simplex(self):
        config = tiny_config()
        params = M.init_params(config, 3)
        rng = np.random.default_rng(3)
        images, questions = tiny_batch(rng, config, 4)
        maps = E.grad_cam_batch(config, params, images, questions, [0, 1, 2, 0])
        assert maps.min() >= 0.0
        np.testing.assert_allclose(maps.sum(axis=(1, 2)), 1.0, atol=1e-9)

    def test_parameter_gradients_untouched(self):
        config = tiny_config()
        params = M.init_params(config, 4)
        sentinel = np.full_like(params["cls.w"].data, 7.0)
        params["cls.w"].grad = sentinel
        rng = np.random.default_rng(4)
        images, questions = tiny_batch(rng, config, 2)
        E.grad_cam_batch(config, params, images, questions, [1, 1])
        assert params["cls.w"].grad is sentinel
        np.testing.assert_array_equal(sentinel, 7.0)
        assert all(
            params[n].grad is None for n in params if n != "cls.w"
        )

    def test_class_out_of_range_rejected(self):
        config = tiny_config()
        params = M.init_params(config, 5)
        rng = np.random.default_rng(5)
        images, questions = tiny_batch(rng, config, 1)
        with pytest.raises(ValueError, match="range"):
            E.grad_cam_batch(config, params, images, questions, [config.answer_classes])

    def test_single_sample_wrapper(self):
        from attn_tutor.data import DatasetSpec, generate

        ds = generate(DatasetSpec(n_samples=1, seed=11))
        config = M.VqaModelConfig()
        params = M.init_params(config, 6)
        emap = E.grad_cam(config, params, ds.samples[0], ds.samples[0].answer)
        assert emap.source == "gradcam"
        assert emap.grid.shape == (7, 7)


class TestRise:
    def test_fixed_seed_reproducible(self):
        config = tiny_config()
        params = M.init_params(config, 7)
        rng = np.random.default_rng(7)
        images, questions = tiny_batch(rng, config, 1)
        sample = _fake_sample(images[0], questions[0])
        a = E.rise(config, params, sample, 0, n_masks=64, rng_seed=5)
        b = E.rise(config, params, sample, 0, n_masks=64, rng_seed=5)
        np.testing.assert_array_equal(a.grid, b.grid)

    def test_single_mask_base_case(self):
        config = tiny_config()
        params = M.init_params(config, 8)
        rng = np.random.default_rng(8)
        images, questions = tiny_batch(rng, config, 1)
        sample = _fake_sample(images[0], questions[0])
        got = E.rise(config, params, sample, 1, n_masks=1, keep_prob=0.5, rng_seed=9)
        mask = (np.random.default_rng(9).random((1, 1, 1)) < 0.5).astype(float)
        up = E._upsample_bilinear(mask, config.image_size)
        pooled = E._pool_maps_to_grid(up, config.region_grid)[0]
        if pooled.sum() > 0:
            np.testing.assert_allclose(got.grid, pooled / pooled.sum(), atol=1e-12)
        else:
            assert got.degenerate

    def test_constant_model_weighting_cancels(self):
        # With all parameters zero the class probabilities are constant, so
        # the map must equal the plain mask average, pooled and normalized.
        config = tiny_config()
        params = {
            name: Tensor(np.zeros_like(t.data), requires_grad=True)
            for name, t in M.init_params(config, 9).items()
        }
        rng = np.random.default_rng(10)
        images, questions = tiny_batch(rng, config, 1)
        sample = _fake_sample(images[0], questions[0])
        got = E.rise(config, params, sample, 0, n_masks=128, keep_prob=0.5, rng_seed=11)
        masks = (np.random.default_rng(11).random((128, 1, 1)) < 0.5).astype(float)
        up = E._upsample_bilinear(masks, config.image_size)
        pooled = E._pool_maps_to_grid(up.mean(axis=0)[None], config.region_grid)[0]
        np.testing.assert_allclose(got.grid, pooled / pooled.sum(), atol=1e-12)

    def test_monte_carlo_self_consistency(self):
        config = tiny_config()
        params = M.init_params(config, 12)
        rng = np.random.default_rng(12)
        images, questions = tiny_batch(rng, config, 1)
        sample = _fake_sample(images[0], questions[0])
        a = E.rise(config, params, sample, 0, n_masks=4096, rng_seed=1)
        b = E.rise(config, params, sample, 0, n_masks=4096, rng_seed=2)
        assert np.abs(a.grid - b.grid).sum() < 0.02

    def test_degenerate_masks_flag_uniform(self):
        config = tiny_config()
        params = M.init_params(config, 13)
        rng = np.random.default_rng(13)
        images, questions = tiny_batch(rng, config, 1)
        sample = _fake_sample(images[0], questions[0])
        emap = E.rise(config, params, sample, 0, n_masks=8, keep_prob=1e-12, rng_seed=3)
        assert emap.degenerate
        np.testing.assert_array_equal(emap.grid, np.full((2, 2), 0.25))

    def test_argument_validation(self):
        config = tiny_config()
        params = M.init_params(config, 14)
        rng = np.random.default_rng(14)
        images, questions = tiny_batch(rng, config, 1)
        sample = _fake_sample(images[0], questions[0])
        with pytest.raises(ValueError, match="n_masks"):
            E.rise(config, params, sample, 0, n_masks=0)
        with pytest.raises(ValueError, match="keep_prob"):
            E.rise(config, params, sample, 0, keep_prob=1.0)
        with pytest.raises(ValueError, match="range"):
            E.rise(config, params, sample, config.answer_classes)


class TestRandomExplanation:
    def gt(self):
        g = np.zeros((7, 7))
        g[2, 3] = 0.5
        g[4, 4] = 0.5
        return g

    def test_target_one_returns_gt(self):
        emap = E.random_explanation(self.gt(), 1.0, rng_seed=0)
        np.testing.assert_array_equal(emap.grid, self.gt())

    def test_seven_percent_window(self):
        for seed in range(5):
            emap = E.random_explanation(self.gt(), 0.07, rng_seed=seed)
            got = np.minimum(emap.grid, self.gt()).sum()
            assert 0.05 <= got <= 0.09

    def test_twenty_percent_window(self):
        for seed in range(5):
            emap = E.random_explanation(self.gt(), 0.20, rng_seed=seed)
            got = np.minimum(emap.grid, self.gt()).sum()
            assert 0.18 <= got <= 0.22

    def test_deterministic_per_seed(self):
        a = E.random_explanation(self.gt(), 0.2, rng_seed=4)
        b = E.random_explanation(self.gt(), 0.2, rng_seed=4)
        np.testing.assert_array_equal(a.grid, b.grid)

    def test_result_on_simplex(self):
        emap = E.random_explanation(self.gt(), 0.5, rng_seed=5)
        assert emap.grid.min() >= 0.0
        assert abs(emap.grid.sum() - 1.0) <= 1e-9

    def test_unattainable_target_names_range(self):
        uniform = np.full((7, 7), 1.0 / 49.0)
        with pytest.raises(ValueError, match="achievable range"):
            E.random_explanation(uniform, 0.0, rng_seed=6)

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            E.random_explanation(self.gt(), 1.5)
        with pytest.raises(ValueError, match="simplex"):
            E.random_explanation(np.full((7, 7), 1.0), 0.5)


class TestMapCsv:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(15)
        grid = rng.random((7, 7))
        grid /= grid.sum()
        path = tmp_path / "map.csv"
        E.write_map_csv(path, grid)
        np.testing.assert_array_equal(E.read_map_csv(path), grid)

    def test_layout_is_row_major_lines(self, tmp_path):
        grid = np.array([[0.25, 0.25], [0.25, 0.25]])
        path = tmp_path / "map.csv"
        E.write_map_csv(path, grid)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert all(len(line.split(",")) == 2 for line in lines)


def _fake_sample(image, question):
    from attn_tutor.data import VqaSample

    g = np.zeros((2, 2))
    g[0, 0] = 1.0
    return VqaSample(image=image, question=question, answer=0, gt_attention=g)
