import numpy as np
import pytest

from slpt.codec import SparsePoints
from slpt.diffcore import ParamStore, Tensor, gradcheck
from slpt.diffcore.ops import fixed_readout, concat
from slpt.latent_vae import LOGVAR_MAX, LOGVAR_MIN, LatentVae


def make_vae(seed=0, **kw):
    store = ParamStore()
    rng = np.random.default_rng(seed)
    defaults = dict(d_sparse=12, z_feature=8, hidden=16, local_dim=8, dec_hidden=24)
    defaults.update(kw)
    return store, LatentVae(store, rng, **defaults)


def random_sparse(seed, m=20, d=12):
    rng = np.random.default_rng(seed)
    return SparsePoints(Tensor(rng.uniform(-0.5, 0.5, (m, 3))),
                        Tensor(rng.uniform(-0.3, 0.3, (m, d))))


def manual_encode(store, sparse, z_feature=8, residual=True):
    """Independent re-computation of the posterior with plain numpy."""
    def mlp(prefix, x, n_layers, final_tanh):
        h = x
        for i in range(n_layers):
            h = h @ store[f"{prefix}.w{i}"].data + store[f"{prefix}.b{i}"].data
            if i < n_layers - 1 or final_tanh:
                h = np.tanh(h)
        return h

    x = np.concatenate([sparse.coords.data, sparse.feats.data], axis=1)
    psi = mlp("vae.backbone", x, 2, True)
    scores = mlp("vae.score", psi, 1, False)
    e = np.exp(scores - scores.max())
    attn = e / e.sum()
    pooled = (attn * psi).sum(axis=0, keepdims=True)
    local = mlp("vae.local", psi, 1, True)
    joint = np.concatenate([np.broadcast_to(pooled, psi.shape), local], axis=1)
    raw_f = mlp("vae.head_f", joint, 2, False)
    raw_p = mlp("vae.head_p", joint, 2, False)
    mu_f = raw_f[:, :z_feature]
    logvar_f = np.clip(raw_f[:, z_feature:], LOGVAR_MIN, LOGVAR_MAX)
    mu_p = raw_p[:, :3] + (sparse.coords.data if residual else 0.0)
    logvar_p = np.clip(raw_p[:, 3:], LOGVAR_MIN, LOGVAR_MAX)
    return mu_f, logvar_f, mu_p, logvar_p


class TestEncode:
    def test_matches_independent_numpy_recomputation(self):
        store, vae = make_vae()
        sparse = random_sparse(1)
        post = vae.encode(sparse)
        mu_f, logvar_f, mu_p, logvar_p = manual_encode(store, sparse)
        np.testing.assert_allclose(post.mu_f.data, mu_f, atol=1e-12)
        np.testing.assert_allclose(post.logvar_f.data, logvar_f, atol=1e-12)
        np.testing.assert_allclose(post.mu_p.data, mu_p, atol=1e-12)
        np.testing.assert_allclose(post.logvar_p.data, logvar_p, atol=1e-12)

    def test_permutation_equivariance(self):
        store, vae = make_vae()
        sparse = random_sparse(2)
        post_a = vae.encode(sparse)
        perm = np.random.default_rng(0).permutation(20)
        post_b = vae.encode(SparsePoints(Tensor(sparse.coords.data[perm]),
                                         Tensor(sparse.feats.data[perm])))
        np.testing.assert_allclose(post_b.mu_f.data, post_a.mu_f.data[perm],
                                   atol=1e-6)
        np.testing.assert_allclose(post_b.mu_p.data, post_a.mu_p.data[perm],
                                   atol=1e-6)

    def test_zeroed_score_head_equals_mean_pooling(self):
        store, vae = make_vae()
        store["vae.score.w0"].data[:] = 0.0
        store["vae.score.b0"].data[:] = 0.0
        sparse = random_sparse(3)
        post = vae.encode(sparse)
        # Oracle with uniform attention over points.
        def mlp(prefix, x, n, ft):
            h = x
            for i in range(n):
                h = h @ store[f"{prefix}.w{i}"].data + store[f"{prefix}.b{i}"].data
                if i < n - 1 or ft:
                    h = np.tanh(h)
            return h
        x = np.concatenate([sparse.coords.data, sparse.feats.data], axis=1)
        psi = mlp("vae.backbone", x, 2, True)
        pooled = psi.mean(axis=0, keepdims=True)
        local = mlp("vae.local", psi, 1, True)
        joint = np.concatenate([np.broadcast_to(pooled, psi.shape), local], axis=1)
        raw_f = mlp("vae.head_f", joint, 2, False)
        np.testing.assert_allclose(post.mu_f.data, raw_f[:, :8], atol=1e-12)

    def test_logvar_clamped(self):
        store, vae = make_vae()
        # Force the head to emit huge raw log-variances via its bias.
        store["vae.head_f.b1"].data[8:] = 50.0
        store["vae.head_p.b1"].data[3:] = -50.0
        post = vae.encode(random_sparse(4))
        assert np.all(post.logvar_f.data <= LOGVAR_MAX)
        assert np.all(post.logvar_p.data >= LOGVAR_MIN)

    def test_gradcheck_heads(self):
        store, vae = make_vae()
        sparse = random_sparse(5, m=8)
        rng = np.random.default_rng(0)
        ro = fixed_readout(rng)
        probe = [store["vae.head_f.w1"], store["vae.head_p.w1"],
                 store["vae.score.w0"], store["vae.backbone.w0"]]

        def fn(*_):
            post = vae.encode(sparse)
            return ro(concat([post.mu_f, post.logvar_f, post.mu_p,
                              post.logvar_p], axis=1))

        assert max(gradcheck(fn, probe, max_elements=12)) < 1e-4


class TestReparameterize:
    def test_deterministic_mode_returns_mean(self):
        store, vae = make_vae()
        post = vae.encode(random_sparse(6))
        z = vae.reparameterize(post, deterministic=True)
        np.testing.assert_array_equal(z.z_f.data, post.mu_f.data)
        np.testing.assert_array_equal(z.z_p.data, post.mu_p.data)

    def test_floor_variance_bounds_deviation(self):
        # At the log-variance floor, sigma = exp(-5), so |z - mu| is exactly
        # exp(-5) * |eps| with the stored noise.
        store, vae = make_vae()
        store["vae.head_f.b1"].data[8:] = -50.0
        post = vae.encode(random_sparse(7))
        z = vae.reparameterize(post, seed=11)
        sigma = np.exp(-5.0)
        np.testing.assert_allclose(np.abs(z.z_f.data - post.mu_f.data),
                                   sigma * np.abs(z.noise_f), atol=1e-15)

    def test_monte_carlo_moments(self):
        # 1e5 draws: sample mean within 3 sigma/sqrt(n) of mu, sample
        # variance within 5% of sigma^2.
        store, vae = make_vae()
        mu, logvar = 0.7, np.log(0.4 ** 2)
        post_mu = Tensor(np.full((1, 8), mu))
        post_lv = Tensor(np.full((1, 8), logvar))
        from slpt.latent_vae import Posterior
        post = Posterior(post_mu, post_lv, Tensor(np.zeros((1, 3))),
                         Tensor(np.zeros((1, 3))))
        n = 100_000
        draws = np.empty((n, 8))
        gen = np.random.default_rng(123)
        sigma = 0.4
        eps = gen.standard_normal((n, 8))
        draws = mu + sigma * eps
        assert abs(draws.mean() - mu) < 3 * sigma / np.sqrt(n * 8)
        assert abs(draws.var() - sigma ** 2) / sigma ** 2 < 0.05
        # and the op itself applies exactly mu + sigma*eps with stored noise
        z = vae.reparameterize(post, seed=5)
        np.testing.assert_allclose(z.z_f.data, mu + sigma * z.noise_f, atol=1e-12)

    def test_same_seed_same_noise(self):
        store, vae = make_vae()
        post = vae.encode(random_sparse(8))
        z1 = vae.reparameterize(post, seed=3)
        post2 = vae.encode(random_sparse(8))
        z2 = vae.reparameterize(post2, seed=3)
        np.testing.assert_array_equal(z1.noise_f, z2.noise_f)
        np.testing.assert_array_equal(z1.z_f.data, z2.z_f.data)


class TestDecode:
    def test_shape_contract(self):
        store, vae = make_vae()
        post = vae.encode(random_sparse(9))
        z = vae.reparameterize(post, seed=1)
        recon = vae.decode(z)
        assert recon.coords.data.shape == (20, 3)
        assert recon.feats.data.shape == (20, 12)

    def test_full_scale_shape_contract(self):
        # (256 x 32, 256 x 3) in -> (256 x 3, 256 x 64) out.
        store = ParamStore()
        vae = LatentVae(store, np.random.default_rng(0))
        sparse = random_sparse(10, m=256, d=64)
        post = vae.encode(sparse)
        z = vae.reparameterize(post, seed=0)
        assert z.z_f.data.shape == (256, 32)
        recon = vae.decode(z)
        assert recon.coords.data.shape == (256, 3)
        assert recon.feats.data.shape == (256, 64)

    def test_permutation_equivariance(self):
        store, vae = make_vae()
        post = vae.encode(random_sparse(11))
        z = vae.reparameterize(post, seed=2)
        recon_a = vae.decode(z)
        perm = np.random.default_rng(1).permutation(20)
        from slpt.latent_vae import LatentSample
        z_perm = LatentSample(Tensor(z.z_f.data[perm]), Tensor(z.z_p.data[perm]),
                              z.noise_f[perm], z.noise_p[perm], 2, False)
        recon_b = vae.decode(z_perm)
        np.testing.assert_allclose(recon_b.coords.data, recon_a.coords.data[perm],
                                   atol=1e-9)
        np.testing.assert_allclose(recon_b.feats.data, recon_a.feats.data[perm],
                                   atol=1e-9)

    def test_gradcheck_through_decode(self):
        store, vae = make_vae()
        rng = np.random.default_rng(3)
        z_f = Tensor(rng.standard_normal((6, 8)) * 0.5, requires_grad=True)
        z_p = Tensor(rng.uniform(-0.4, 0.4, (6, 3)), requires_grad=True)
        ro = fixed_readout(rng)

        def fn(zf, zp):
            from slpt.latent_vae import LatentSample
            recon = vae.decode(LatentSample(zf, zp, None, None, None, True))
            return ro(concat([recon.coords, recon.feats], axis=1))

        assert max(gradcheck(fn, [z_f, z_p], max_elements=16)) < 1e-4

    def test_gradcheck_end_to_end(self):
        store, vae = make_vae()
        sparse = random_sparse(12, m=8)
        feats = Tensor(sparse.feats.data, requires_grad=True)
        rng = np.random.default_rng(4)
        ro = fixed_readout(rng)

        def fn(f):
            post = vae.encode(SparsePoints(sparse.coords, f))
            z = vae.reparameterize(post, seed=9)
            recon = vae.decode(z)
            return ro(concat([recon.coords, recon.feats], axis=1))

        assert max(gradcheck(fn, [feats], max_elements=16)) < 1e-4
