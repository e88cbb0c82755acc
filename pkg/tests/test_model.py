"""Model component tests: encoders, attention, classifier, checkpoints."""

import math

import numpy as np
import pytest

from attn_tutor import model as m
from attn_tutor import tensor as T
from attn_tutor.tensor import ShapeError, Tensor, backward, grad_check


def tiny_config():
    return m.VqaModelConfig(
        image_size=8,
        region_grid=2,
        feature_dim=4,
        question_vocab=6,
        answer_classes=3,
        recurrent_hidden=4,
    )


def zeroed(params, prefixes):
    out = dict(params)
    for name, t in params.items():
        if any(name.startswith(p) for p in prefixes):
            out[name] = Tensor(np.zeros_like(t.data), requires_grad=True)
    return out


class TestEncodeImage:
    def test_zero_image_zero_params_gives_zero_features(self):
        cfg = tiny_config()
        params = zeroed(m.init_params(cfg, 0), ("conv",))
        g_i, conv_act = m.encode_image(cfg, params, np.zeros((2, 8, 8, 3)))
        assert np.all(g_i.data == 0.0)
        assert np.all(conv_act.data == 0.0)

    def test_default_shapes(self):
        cfg = m.VqaModelConfig()
        params = m.init_params(cfg, 1)
        rng = np.random.default_rng(0)
        g_i, conv_act = m.encode_image(cfg, params, rng.random((2, 28, 28, 3)))
        assert g_i.shape == (2, 7, 7, 32)
        assert conv_act.shape == (2, 7, 7, 32)

    def test_adaptive_pooling_from_32px(self):
        cfg = m.VqaModelConfig(image_size=32, region_grid=7, feature_dim=8, recurrent_hidden=8)
        params = m.init_params(cfg, 2)
        rng = np.random.default_rng(1)
        g_i, conv_act = m.encode_image(cfg, params, rng.random((1, 32, 32, 3)))
        assert conv_act.shape == (1, 8, 8, 8)
        assert g_i.shape == (1, 7, 7, 8)
        # oracle: contract both spatial axes against the averaging matrix
        pool = m._pool_matrix(8, 7)
        want = np.einsum("ir,js,brsc->bijc", pool, pool, conv_act.data)
        np.testing.assert_allclose(g_i.data, want, atol=1e-12)

    def test_bitwise_deterministic(self):
        cfg = tiny_config()
        img = np.random.default_rng(5).random((1, 8, 8, 3))
        a = m.encode_image(cfg, m.init_params(cfg, 9), img)[0].data
        b = m.encode_image(cfg, m.init_params(cfg, 9), img)[0].data
        assert np.array_equal(a, b)

    def test_wrong_size_rejected(self):
        cfg = tiny_config()
        params = m.init_params(cfg, 0)
        with pytest.raises(ShapeError):
            m.encode_image(cfg, params, np.zeros((1, 12, 12, 3)))


class TestEncodeQuestion:
    def test_single_token_shape(self):
        cfg = tiny_config()
        params = m.init_params(cfg, 3)
        g_q = m.encode_question(cfg, params, np.array([[0], [5], [2]]))
        assert g_q.shape == (3, 4)

    def test_zero_params_zero_state(self):
        cfg = tiny_config()
        params = zeroed(m.init_params(cfg, 3), ("lstm", "embed"))
        g_q = m.encode_question(cfg, params, np.array([[1, 2, 3]]))
        assert np.all(g_q.data == 0.0)

    def test_order_sensitivity(self):
        cfg = tiny_config()
        params = m.init_params(cfg, 4)
        a = m.encode_question(cfg, params, np.array([[0, 1, 2]])).data
        b = m.encode_question(cfg, params, np.array([[2, 1, 0]])).data
        assert not np.allclose(a, b)

    def test_bad_tokens_rejected(self):
        cfg = tiny_config()
        params = m.init_params(cfg, 0)
        with pytest.raises(ValueError):
            m.encode_question(cfg, params, np.zeros((2, 0), dtype=int))
        with pytest.raises(ValueError):
            m.encode_question(cfg, params, np.array([[0, 6]]))
        with pytest.raises(ValueError):
            m.encode_question(cfg, params, np.array([[-1, 0]]))


class TestAttend:
    def test_identical_region_features_uniform_alpha(self):
        cfg = tiny_config()
        params = m.init_params(cfg, 5)
        g_i = Tensor(np.tile(np.array([0.3, -0.2, 0.9, 0.1]), (1, 2, 2, 1)))
        g_q = Tensor(np.random.default_rng(2).normal(size=(1, 4)))
        alpha, g_f = m.attend(cfg, params, g_i, g_q)
        np.testing.assert_array_equal(alpha.data, np.full((1, 4), 0.25))

    def test_hand_computed_two_by_two(self):
        cfg = m.VqaModelConfig(
            image_size=8, region_grid=2, feature_dim=2,
            question_vocab=6, answer_classes=3, recurrent_hidden=2,
        )
        params = m.init_params(cfg, 0)
        params["attn.wi"] = Tensor(np.eye(2))
        params["attn.wq"] = Tensor(np.zeros((2, 2)))
        params["attn.v"] = Tensor(np.array([[1.0], [0.0]]))
        cells = np.array([[0.5, 9.0], [-0.3, 9.0], [1.2, 9.0], [0.0, 9.0]])
        g_i = Tensor(cells.reshape(1, 2, 2, 2))
        g_q = Tensor(np.zeros((1, 2)))
        alpha, g_f = m.attend(cfg, params, g_i, g_q)
        scores = np.tanh(cells[:, 0])
        want = np.exp(scores - scores.max())
        want /= want.sum()
        np.testing.assert_allclose(alpha.data[0], want, atol=1e-12)
        np.testing.assert_allclose(g_f.data[0], want @ cells, atol=1e-12)

    def test_alpha_rows_on_simplex(self):
        cfg = tiny_config()
        params = m.init_params(cfg, 6)
        rng = np.random.default_rng(3)
        g_i = Tensor(rng.normal(size=(5, 2, 2, 4)))
        g_q = Tensor(rng.normal(size=(5, 4)))
        alpha, _ = m.attend(cfg, params, g_i, g_q)
        assert alpha.data.min() >= 0.0
        np.testing.assert_allclose(alpha.data.sum(axis=1), 1.0, atol=1e-9)


class TestClassify:
    def test_zero_logits_uniform(self):
        cfg = tiny_config()
        params = zeroed(m.init_params(cfg, 0), ("cls",))
        logp = m.classify(params, Tensor(np.random.default_rng(4).normal(size=(2, 4))))
        np.testing.assert_allclose(logp.data, math.log(1 / 3), atol=1e-12)

    def test_cross_entropy_at_uniform_is_log_classes(self):
        cfg = m.VqaModelConfig(
            image_size=8, region_grid=2, feature_dim=4,
            question_vocab=6, answer_classes=4, recurrent_hidden=4,
        )
        params = zeroed(m.init_params(cfg, 0), ("cls",))
        logp = m.classify(params, Tensor(np.ones((3, 4))))
        ce = m.cross_entropy(logp, np.array([0, 1, 3]))
        assert ce.item() == pytest.approx(math.log(4), abs=1e-12)

    def test_argmax_matches_favored_class(self):
        cfg = tiny_config()
        params = zeroed(m.init_params(cfg, 0), ("cls",))
        params["cls.b"] = Tensor(np.array([0.0, 3.0, 0.0]))
        logp = m.classify(params, Tensor(np.zeros((1, 4))))
        assert int(np.argmax(logp.data)) == 1

    def test_label_batch_mismatch(self):
        logp = Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeError):
            m.cross_entropy(logp, np.array([0, 1, 2]))


class TestEndToEndGradients:
    def test_classification_loss_passes_grad_check(self):
        cfg = tiny_config()
        params = m.init_params(cfg, 7)
        rng = np.random.default_rng(8)
        images = rng.random((2, 8, 8, 3))
        questions = np.array([[0, 3], [2, 5]])
        labels = np.array([0, 2])

        def loss_for(name):
            def f(x):
                swapped = dict(params)
                swapped[name] = x
                bundle = m.forward(cfg, swapped, images, questions)
                return m.cross_entropy(m.classify(swapped, bundle.g_f), labels)

            return f

        checked = (
            "conv1.w", "conv2.b", "conv3.w", "embed.w",
            "lstm.wxi", "lstm.whf", "lstm.bg", "attn.wi",
            "attn.v", "cls.w", "cls.b",
        )
        for name in checked:
            assert grad_check(loss_for(name), params[name]) < 1e-4, name

    def test_alpha_depends_on_conv_parameters(self):
        cfg = tiny_config()
        params = m.init_params(cfg, 7)
        rng = np.random.default_rng(8)
        images = rng.random((2, 8, 8, 3))
        questions = np.array([[0, 3], [2, 5]])
        bundle = m.forward(cfg, params, images, questions)
        probe = T.tsum(T.square(bundle.alpha))
        backward(probe)
        assert params["conv1.w"].grad is not None
        assert float(np.abs(params["conv1.w"].grad).max()) > 0.0


class TestCheckpoint:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        arrays = {
            "conv1.w": rng.normal(size=(3, 3, 3, 4)),
            "cls.b": rng.normal(size=(5,)),
            "opt.conv1.w": rng.normal(size=(3, 3, 3, 4)),
        }
        path = tmp_path / "state.atck"
        m.save_checkpoint(path, arrays)
        back = m.load_checkpoint(path)
        assert sorted(back) == sorted(arrays)
        for k in arrays:
            assert np.array_equal(back[k], arrays[k])

    def test_magic_and_name_sorted_bytes(self, tmp_path):
        a = {"b.x": np.ones(2), "a.y": np.zeros(3)}
        b = {"a.y": np.zeros(3), "b.x": np.ones(2)}
        pa, pb = tmp_path / "a.atck", tmp_path / "b.atck"
        m.save_checkpoint(pa, a)
        m.save_checkpoint(pb, b)
        raw = pa.read_bytes()
        assert raw[:5] == b"ATCK1"
        assert raw == pb.read_bytes()

    def test_accepts_tensors(self, tmp_path):
        path = tmp_path / "t.atck"
        m.save_checkpoint(path, {"w": Tensor(np.arange(6.0).reshape(2, 3))})
        assert np.array_equal(m.load_checkpoint(path)["w"], np.arange(6.0).reshape(2, 3))

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.atck"
        path.write_bytes(b"WRONG" + b"\x00" * 16)
        with pytest.raises(m.CheckpointError, match="magic"):
            m.load_checkpoint(path)

    def test_truncation_names_offset(self, tmp_path):
        path = tmp_path / "t.atck"
        m.save_checkpoint(path, {"w": np.arange(20.0)})
        blob = path.read_bytes()
        cut = tmp_path / "cut.atck"
        cut.write_bytes(blob[: len(blob) - 8])
        with pytest.raises(m.CheckpointError, match=r"byte \d+"):
            m.load_checkpoint(cut)


class TestConfigValidation:
    def test_indivisible_image_size(self):
        with pytest.raises(ValueError):
            m.VqaModelConfig(image_size=30)

    def test_extent_smaller_than_grid(self):
        with pytest.raises(ValueError):
            m.VqaModelConfig(image_size=8, region_grid=7)

    def test_hidden_must_match_feature_dim(self):
        with pytest.raises(ValueError):
            m.VqaModelConfig(feature_dim=32, recurrent_hidden=16)
