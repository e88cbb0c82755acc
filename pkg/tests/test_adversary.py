"""Discriminator and adversarial-loss tests with closed-form anchors."""

import math

import numpy as np
import pytest

from attn_tutor import adversary as adv
from attn_tutor import tensor as T
from attn_tutor.tensor import Tensor, backward, grad_check


def zero_params(params, prefix):
    out = dict(params)
    for name, t in params.items():
        if name.startswith(prefix):
            out[name] = Tensor(np.zeros_like(t.data), requires_grad=True)
    return out


def random_simplex_rows(rng, b, k):
    m = rng.random((b, k))
    return m / m.sum(axis=1, keepdims=True)


class TestDiscriminators:
    def test_zero_final_layer_outputs_half(self):
        params = adv.init_discriminator_params(4, 0)
        params["dg.lin.w"] = Tensor(np.zeros_like(params["dg.lin.w"].data), requires_grad=True)
        params["dg.lin.b"] = Tensor(np.zeros(1), requires_grad=True)
        rng = np.random.default_rng(0)
        maps = Tensor(rng.random((3, 4, 4)))
        cond = Tensor(rng.random((3, 4, 4)))
        out = adv.discriminate_global(maps, cond, params)
        np.testing.assert_array_equal(out.data, np.full(3, 0.5))

    def test_zero_pixel_weights_output_half_everywhere(self):
        params = zero_params(adv.init_discriminator_params(4, 0), "dp.")
        rng = np.random.default_rng(1)
        out = adv.discriminate_pixel(Tensor(rng.random((2, 4, 4))), Tensor(rng.random((2, 4, 4))), params)
        np.testing.assert_array_equal(out.data, np.full((2, 4, 4), 0.5))

    def test_outputs_in_unit_interval(self):
        params = adv.init_discriminator_params(5, 2)
        rng = np.random.default_rng(2)
        maps = Tensor(rng.random((4, 5, 5)))
        cond = Tensor(rng.random((4, 5, 5)))
        g = adv.discriminate_global(maps, cond, params)
        p = adv.discriminate_pixel(maps, cond, params)
        for out in (g.data, p.data):
            assert out.min() > 0.0 and out.max() < 1.0
        assert g.shape == (4,)
        assert p.shape == (4, 5, 5)

    def test_conditioning_changes_scores(self):
        params = adv.init_discriminator_params(4, 3)
        rng = np.random.default_rng(3)
        same_map = Tensor(np.tile(rng.random((1, 4, 4)), (2, 1, 1)))
        conds = Tensor(rng.random((2, 4, 4)))
        out = adv.discriminate_global(same_map, conds, params).data
        assert abs(out[0] - out[1]) > 1e-8

    def test_pixel_discriminator_is_translation_equivariant(self):
        params = adv.init_discriminator_params(4, 4)
        rng = np.random.default_rng(4)
        maps = rng.random((1, 4, 4))
        cond = rng.random((1, 4, 4))
        base = adv.discriminate_pixel(Tensor(maps), Tensor(cond), params).data
        rolled = adv.discriminate_pixel(
            Tensor(np.roll(maps, 1, axis=2)), Tensor(np.roll(cond, 1, axis=2)), params
        ).data
        np.testing.assert_allclose(rolled, np.roll(base, 1, axis=2), atol=1e-12)

    def test_condition_summary_is_detached(self):
        g_i = Tensor(np.random.default_rng(5).random((2, 4, 4, 8)), requires_grad=True)
        cond = adv.summarize_condition(g_i)
        assert not cond.requires_grad
        np.testing.assert_allclose(cond.data, g_i.data.mean(axis=-1))


class TestMinimaxLosses:
    def test_half_everywhere_gives_two_log_two(self):
        half = Tensor(np.full(6, 0.5))
        report = adv.minimax_losses(half, half)
        assert report.d_loss.item() == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_perfect_discriminator_at_clamp_boundary(self):
        ones = Tensor(np.ones(4))
        zeros = Tensor(np.zeros(4))
        report = adv.minimax_losses(ones, zeros)
        assert 0.0 < report.d_loss.item() < 1e-6

    def test_pixel_grid_of_identical_cells_matches_scalar_loss(self):
        real_grid = Tensor(np.full((3, 4, 4), 0.7))
        fake_grid = Tensor(np.full((3, 4, 4), 0.3))
        real_scalar = Tensor(np.full(3, 0.7))
        fake_scalar = Tensor(np.full(3, 0.3))
        grid_loss = adv.minimax_losses(real_grid, fake_grid).d_loss.item()
        scalar_loss = adv.minimax_losses(real_scalar, fake_scalar).d_loss.item()
        assert grid_loss == pytest.approx(scalar_loss, abs=1e-12)

    def test_saturating_form_is_exactly_zero_sum(self):
        rng = np.random.default_rng(6)
        real = Tensor(rng.uniform(0.1, 0.9, size=5))
        fake = Tensor(rng.uniform(0.1, 0.9, size=5))
        report = adv.minimax_losses(real, fake, saturating=True)
        assert report.g_loss.item() == -report.d_loss.item()

    def test_non_saturating_default_differs_from_negated_d_loss(self):
        rng = np.random.default_rng(7)
        real = Tensor(rng.uniform(0.2, 0.8, size=5))
        fake = Tensor(rng.uniform(0.2, 0.8, size=5))
        report = adv.minimax_losses(real, fake)
        assert report.g_loss.item() != pytest.approx(-report.d_loss.item(), abs=1e-9)

    def test_stabilizer_terms_filled_when_maps_given(self):
        rng = np.random.default_rng(8)
        alpha = Tensor(random_simplex_rows(rng, 4, 9))
        mu = Tensor(random_simplex_rows(rng, 4, 9))
        probs = Tensor(rng.uniform(0.3, 0.7, size=4))
        report = adv.minimax_losses(probs, probs, alpha=alpha, mu=mu)
        assert report.js_term.item() > 0.0
        assert report.chi2_term.item() > 0.0

    def test_non_finite_probabilities_rejected(self):
        bad = Tensor(np.array([0.5, np.nan]))
        with pytest.raises(ValueError, match="finite"):
            adv.minimax_losses(bad, Tensor(np.array([0.5, 0.5])))

    def test_discriminator_step_decreases_loss_on_fixed_maps(self):
        grid = 4
        params = adv.init_discriminator_params(grid, 9)
        rng = np.random.default_rng(9)
        mu = Tensor(random_simplex_rows(rng, 8, grid * grid).reshape(8, grid, grid))
        alpha = Tensor(random_simplex_rows(rng, 8, grid * grid).reshape(8, grid, grid))
        cond = Tensor(rng.random((8, grid, grid)))

        def d_loss_value():
            real = adv.discriminate_pixel(mu, cond, params)
            fake = adv.discriminate_pixel(alpha, cond, params)
            return adv.minimax_losses(real, fake)

        before = d_loss_value()
        backward(before.d_loss)
        for name, t in params.items():
            if name.startswith("dp.") and t.grad is not None:
                t.data -= 1e-3 * t.grad
                t.zero_grad()
        after = d_loss_value()
        assert after.d_loss.item() < before.d_loss.item()


class TestJsDivergence:
    def test_identical_maps_zero(self):
        p = Tensor(np.array([0.25, 0.25, 0.5]))
        assert adv.js_divergence(p, p).item() == 0.0

    def test_disjoint_supports_log_two(self):
        p = np.array([1.0, 0.0])
        q = np.array([0.0, 1.0])
        assert adv.js_divergence(p, q).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            p = random_simplex_rows(rng, 1, 8)[0]
            q = random_simplex_rows(rng, 1, 8)[0]
            assert adv.js_divergence(p, q).item() == adv.js_divergence(q, p).item()

    def test_range_and_separation(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = random_simplex_rows(rng, 1, 6)[0]
            q = random_simplex_rows(rng, 1, 6)[0]
            v = adv.js_divergence(p, q).item()
            assert 0.0 <= v <= math.log(2) + 1e-12
            if not np.allclose(p, q, atol=1e-12):
                assert v > 0.0

    def test_batched_mean(self):
        p = np.array([[1.0, 0.0], [0.5, 0.5]])
        q = np.array([[0.0, 1.0], [0.5, 0.5]])
        want = 0.5 * (math.log(2) + 0.0)
        assert adv.js_divergence(p, q).item() == pytest.approx(want, abs=1e-15)

    def test_differentiable_through_first_argument(self):
        rng = np.random.default_rng(12)
        q = Tensor(random_simplex_rows(rng, 2, 5))

        def f(x):
            sm = T.softmax(x)
            return adv.js_divergence(sm, q)

        assert grad_check(f, Tensor(rng.normal(size=(2, 5)))) < 1e-4

    def test_non_simplex_rejected(self):
        with pytest.raises(ValueError, match="simplex"):
            adv.js_divergence(np.array([0.9, 0.3]), np.array([0.5, 0.5]))


class TestPearsonChi2:
    def test_identical_zero(self):
        p = np.array([0.3, 0.7])
        assert adv.pearson_chi2(p, p).item() == 0.0

    def test_single_cell_always_zero(self):
        one = np.array([1.0])
        assert adv.pearson_chi2(one, one).item() == 0.0

    def test_two_cell_hand_value(self):
        p = np.array([1.0, 0.0])
        q = np.array([0.5, 0.5])
        assert adv.pearson_chi2(p, q).item() == pytest.approx(1.0, abs=1e-15)

    def test_nonnegative_and_zero_iff_equal(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            p = random_simplex_rows(rng, 1, 6)[0]
            q = random_simplex_rows(rng, 1, 6)[0]
            v = adv.pearson_chi2(p, q).item()
            assert v >= 0.0
            if not np.allclose(p, q, atol=1e-12):
                assert v > 0.0

    def test_differentiable_through_first_argument(self):
        rng = np.random.default_rng(14)
        q = Tensor(random_simplex_rows(rng, 2, 5))

        def f(x):
            sm = T.softmax(x)
            return adv.pearson_chi2(sm, q)

        assert grad_check(f, Tensor(rng.normal(size=(2, 5)))) < 1e-4


class TestGanGradients:
    def test_generator_loss_differentiable_through_fake_maps(self):
        grid = 3
        params = adv.init_discriminator_params(grid, 15)
        rng = np.random.default_rng(15)
        cond = Tensor(rng.random((2, grid, grid)))
        mu = Tensor(random_simplex_rows(rng, 2, grid * grid))

        def f(x):
            alpha = T.softmax(x)
            grid_alpha = T.reshape(alpha, (2, grid, grid))
            fake = adv.discriminate_pixel(grid_alpha, cond, params)
            real = adv.discriminate_pixel(T.reshape(mu, (2, grid, grid)), cond, params)
            report = adv.minimax_losses(real, fake, alpha=alpha, mu=mu)
            return report.g_loss + report.js_term + report.chi2_term

        assert grad_check(f, Tensor(rng.normal(size=(2, grid * grid)))) < 1e-4

    def test_discriminator_loss_differentiable_through_params(self):
        grid = 3
        params = adv.init_discriminator_params(grid, 16)
        rng = np.random.default_rng(16)
        cond = Tensor(rng.random((2, grid, grid)))
        mu = Tensor(random_simplex_rows(rng, 2, grid * grid).reshape(2, grid, grid))
        alpha = Tensor(random_simplex_rows(rng, 2, grid * grid).reshape(2, grid, grid))

        def loss_for(name):
            def f(x):
                swapped = dict(params)
                swapped[name] = x
                real = adv.discriminate_pixel(mu, cond, swapped)
                fake = adv.discriminate_pixel(alpha, cond, swapped)
                return adv.minimax_losses(real, fake).d_loss

            return f

        for name in ("dp.conv1.w", "dp.conv1.b", "dp.conv2.w", "dp.conv2.b"):
            assert grad_check(loss_for(name), params[name]) < 1e-4, name
