import numpy as np
import pytest

from slpt.diffcore import NumericalError, Tensor, backward, gradcheck, precision
from slpt.diffcore.gradcheck import check_registered_op
from slpt.diffcore.ops import fixed_readout, sum_, mul
from slpt.rasterizer import (
    bin_tiles, composite_reference, depth_order, rasterize, set_workers,
    validate_conics,
)


def random_scene(seed, n_splats=64, size=32, channels=5):
    """Well-conditioned random splat scene plus its payload and background."""
    rng = np.random.default_rng(seed)
    mean2d = rng.uniform(0.0, size, (n_splats, 2))
    cov_a = rng.uniform(0.5, 5.0, n_splats)
    cov_c = rng.uniform(0.5, 5.0, n_splats)
    cov_b = rng.uniform(-0.5, 0.5, n_splats) * np.sqrt(cov_a * cov_c)
    det = cov_a * cov_c - cov_b ** 2
    conic = np.stack([cov_c / det, -cov_b / det, cov_a / det], axis=1)
    opacity = rng.uniform(0.05, 0.99, n_splats)
    payload = rng.uniform(-1.0, 1.0, (n_splats, channels))
    depth = rng.uniform(0.3, 5.0, n_splats)
    lam = 0.5 * (cov_a + cov_c) + np.sqrt(0.25 * (cov_a - cov_c) ** 2 + cov_b ** 2)
    radius = 3.0 * np.sqrt(lam)
    background = rng.uniform(0.0, 1.0, channels)
    return mean2d, conic, opacity, payload, depth, radius, background


def run_tiled(scene, size=32, tile_size=16):
    mean2d, conic, opacity, payload, depth, radius, background = scene
    maps, alpha = rasterize(Tensor(mean2d), Tensor(conic), Tensor(opacity),
                            Tensor(payload), depth, radius, size, size,
                            background, tile_size=tile_size)
    return maps.data, alpha.data


class TestForward:
    def test_empty_scene_is_background(self):
        maps, alpha = rasterize(
            Tensor(np.zeros((0, 2))), Tensor(np.zeros((0, 3))),
            Tensor(np.zeros((0,))), Tensor(np.zeros((0, 2))),
            np.zeros(0), np.zeros(0), 8, 8, np.array([0.3, 0.7]))
        assert np.all(maps.data == np.array([0.3, 0.7]))
        assert np.all(alpha.data == 0.0)

    def test_single_opaque_splat_clamps(self):
        # Direct evaluation at the covered pixel: alpha clamps at 0.99, so
        # the output is 0.99*payload + 0.01*background and depth 0.99*d.
        bg = np.array([0.5, 0.5, 0.0])
        payload = np.array([[2.0, -1.0, 3.0]])  # last channel acts as depth
        maps, alpha = rasterize(
            Tensor([[8.5, 8.5]]), Tensor([[0.25, 0.0, 0.25]]), Tensor([[1.0]]),
            Tensor(payload), np.array([3.0]), np.array([10.0]), 16, 16, bg)
        np.testing.assert_allclose(maps.data[8, 8],
                                   0.99 * payload[0] + 0.01 * bg, atol=1e-12)
        assert alpha.data[8, 8] == pytest.approx(0.99)

    def test_two_splat_compositing(self):
        # Brute-force front-to-back: w1 = 0.5, w2 = 0.5*0.5, residual 0.25.
        maps, _ = rasterize(
            Tensor([[8.5, 8.5], [8.5, 8.5]]), Tensor([[0.25, 0, 0.25]] * 2),
            Tensor([[0.5], [0.5]]), Tensor([[1.0], [2.0]]),
            np.array([1.0, 2.0]), np.array([10.0, 10.0]), 16, 16,
            np.array([4.0]))
        assert maps.data[8, 8, 0] == pytest.approx(0.5 * 1 + 0.25 * 2 + 0.25 * 4)

    def test_non_positive_definite_conic_named(self):
        with pytest.raises(NumericalError, match="splat 1"):
            rasterize(Tensor([[4.0, 4.0], [5.0, 5.0]]),
                      Tensor([[0.5, 0.0, 0.5], [1.0, 2.0, 1.0]]),
                      Tensor([[0.5], [0.5]]), Tensor([[1.0], [1.0]]),
                      np.array([1.0, 2.0]), np.array([5.0, 5.0]), 16, 16)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_reference_compositor(self, seed):
        scene = random_scene(seed)
        maps_t, alpha_t = run_tiled(scene)
        maps_o, alpha_o = composite_reference(*scene[:2], scene[2], scene[3],
                                              scene[4], scene[5], 32, 32, scene[6])
        np.testing.assert_allclose(maps_t, maps_o, atol=1e-6)
        np.testing.assert_allclose(alpha_t, alpha_o, atol=1e-6)

    @pytest.mark.parametrize("seed", range(5))
    def test_compositing_weights_conserve(self, seed):
        # With unit payload and zero background, map + transmittance == 1.
        mean2d, conic, opacity, _, depth, radius, _ = random_scene(seed)
        ones = np.ones((mean2d.shape[0], 1))
        maps, alpha = rasterize(Tensor(mean2d), Tensor(conic), Tensor(opacity),
                                Tensor(ones), depth, radius, 32, 32)
        total = maps.data[:, :, 0] + (1.0 - alpha.data)
        np.testing.assert_allclose(total, 1.0, atol=1e-7)

    def test_invariant_to_input_order(self):
        scene = random_scene(123)
        maps_a, alpha_a = run_tiled(scene)
        perm = np.random.default_rng(5).permutation(scene[0].shape[0])
        shuffled = (scene[0][perm], scene[1][perm], scene[2][perm],
                    scene[3][perm], scene[4][perm], scene[5][perm], scene[6])
        maps_b, alpha_b = run_tiled(shuffled)
        np.testing.assert_allclose(maps_a, maps_b, atol=1e-12)
        np.testing.assert_allclose(alpha_a, alpha_b, atol=1e-12)

    def test_equal_depth_ties_broken_by_index(self):
        order = depth_order(np.array([2.0, 1.0, 2.0, 1.0]))
        np.testing.assert_array_equal(order, [1, 3, 0, 2])

    def test_resolution_doubling_preserves_weight_mass(self):
        # Per-splat integrated weight (pixel-area normalized) should move
        # by < 5% when the render resolution doubles.
        rng = np.random.default_rng(9)
        n = 6
        mean2d = rng.uniform(8.0, 24.0, (n, 2))
        sig = rng.uniform(1.5, 3.0, n)
        conic = np.stack([1 / sig ** 2, np.zeros(n), 1 / sig ** 2], axis=1)
        opacity = rng.uniform(0.3, 0.8, n)
        depth = rng.uniform(1.0, 2.0, n)
        radius = 3.0 * sig
        payload = np.eye(n)  # channel s collects splat s's weight

        maps1, _ = rasterize(Tensor(mean2d), Tensor(conic), Tensor(opacity),
                             Tensor(payload), depth, radius, 32, 32)
        maps2, _ = rasterize(Tensor(mean2d * 2), Tensor(conic / 4),
                             Tensor(opacity), Tensor(payload), depth,
                             radius * 2, 64, 64)
        mass1 = maps1.data.sum(axis=(0, 1))
        mass2 = maps2.data.sum(axis=(0, 1)) / 4.0
        np.testing.assert_allclose(mass2, mass1, rtol=0.05)


class TestBinning:
    def test_corner_splats_land_in_their_tiles(self):
        mean2d = np.array([[1.0, 1.0], [31.0, 1.0], [1.0, 31.0], [31.0, 31.0]])
        radius = np.full(4, 2.0)
        depth = np.arange(4, dtype=float)
        starts, ids, tiles_x, tiles_y = bin_tiles(mean2d, radius, depth, 32, 32, 16)
        assert (tiles_x, tiles_y) == (2, 2)
        per_tile = [list(ids[starts[t]:starts[t + 1]]) for t in range(4)]
        assert per_tile == [[0], [1], [2], [3]]

    def test_spanning_splat_listed_once_per_tile(self):
        mean2d = np.array([[16.0, 16.0]])
        starts, ids, _, _ = bin_tiles(mean2d, np.array([6.0]),
                                      np.array([1.0]), 32, 32, 16)
        assert len(ids) == 4 and set(ids) == {0}

    def test_per_tile_lists_sorted_by_depth_then_index(self):
        mean2d = np.tile([[8.0, 8.0]], (3, 1))
        depth = np.array([2.0, 1.0, 2.0])
        starts, ids, _, _ = bin_tiles(mean2d, np.full(3, 2.0), depth, 16, 16, 16)
        np.testing.assert_array_equal(ids, [1, 0, 2])

    def test_conic_validation(self):
        validate_conics(np.array([[1.0, 0.2, 1.0]]))
        with pytest.raises(NumericalError, match="splat 0"):
            validate_conics(np.array([[-1.0, 0.0, 1.0]]))


class TestBackward:
    def test_payload_gradient_is_alpha_weight(self):
        # Single splat: d(out[p])/d(payload) equals the compositing weight
        # alpha*T = alpha at that pixel.
        mu = Tensor([[8.5, 8.5]])
        conic = Tensor([[0.25, 0.0, 0.25]])
        opac = Tensor([[0.6]])
        payload = Tensor([[1.5]], requires_grad=True)
        maps, _ = rasterize(mu, conic, opac, payload, np.array([1.0]),
                            np.array([9.0]), 16, 16)
        w88 = maps.data[8, 8, 0] / 1.5
        pick = np.zeros((16, 16, 1))
        pick[8, 8, 0] = 1.0
        backward(sum_(mul(maps, Tensor(pick))))
        assert payload.grad[0, 0] == pytest.approx(w88, abs=1e-12)
        assert w88 == pytest.approx(0.6)  # alpha at the center, T = 1

    def test_fully_occluded_splat_gets_zero_gradients(self):
        # Three near-flat front splats at the 0.99 alpha clamp drive the
        # transmittance to 1e-6 < stop threshold across the whole image, so
        # the small back splat is never reached and gets exactly zero grads.
        mu = Tensor(np.tile([[8.5, 8.5]], (4, 1)))
        mu.requires_grad = True
        conic_rows = [[1e-4, 0.0, 1e-4]] * 3 + [[4.0, 0.0, 4.0]]
        conic = Tensor(np.array(conic_rows), requires_grad=True)
        opac = Tensor([[1.0]] * 3 + [[0.7]], requires_grad=True)
        payload = Tensor([[1.0]] * 4, requires_grad=True)
        maps, alpha = rasterize(mu, conic, opac, payload,
                                np.array([1.0, 2.0, 3.0, 4.0]),
                                np.array([500.0, 500.0, 500.0, 2.0]), 16, 16)
        rng = np.random.default_rng(0)
        ro = fixed_readout(rng)
        backward(ro(maps))
        assert np.all(payload.grad[3] == 0.0)
        assert np.all(opac.grad[3] == 0.0)
        assert np.all(conic.grad[3] == 0.0)
        assert np.all(mu.grad[3] == 0.0)
        assert np.any(payload.grad[0] != 0.0)

    def test_gradcheck_random_scene(self):
        # 8-splat 16x16 scene against central differences (registered op
        # sampler draws exactly this configuration).
        assert check_registered_op("rasterize", seed=3) < 1e-4

    def test_gradcheck_second_seed(self):
        assert check_registered_op("rasterize", seed=11) < 1e-4


class TestDeterminism:
    def test_bit_identical_across_worker_counts(self):
        scene = random_scene(7, n_splats=48)
        results = []
        for workers in (1, 2, 8):
            set_workers(workers)
            mean2d, conic, opacity, payload, depth, radius, background = scene
            m = Tensor(mean2d, requires_grad=True)
            c = Tensor(conic, requires_grad=True)
            o = Tensor(opacity, requires_grad=True)
            p = Tensor(payload, requires_grad=True)
            maps, alpha = rasterize(m, c, o, p, depth, radius, 32, 32, background)
            rng = np.random.default_rng(1)
            ro = fixed_readout(rng)
            backward(ro(maps))
            results.append((maps.data.copy(), alpha.data.copy(), m.grad.copy(),
                            c.grad.copy(), o.grad.copy(), p.grad.copy()))
        set_workers(2)
        base = results[0]
        for other in results[1:]:
            for a, b in zip(base, other):
                np.testing.assert_array_equal(a, b)

    def test_float32_matches_reference_loosely(self):
        scene = random_scene(21)
        with precision(np.float32):
            maps_t, alpha_t = run_tiled(scene)
        maps_o, alpha_o = composite_reference(*scene[:2], scene[2], scene[3],
                                              scene[4], scene[5], 32, 32, scene[6])
        np.testing.assert_allclose(maps_t, maps_o, atol=1e-4)
        np.testing.assert_allclose(alpha_t, alpha_o, atol=1e-4)
