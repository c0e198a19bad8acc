"""Point-wise latent VAE over the sparse feature points.

A shared per-point backbone feeds an attention-pooled global descriptor
and per-point local descriptors; two heads predict Gaussian posterior
parameters for the features and for the coordinates of every latent
point.  Sampling uses the reparameterization trick with stored noise so
runs are reproducible; a deterministic mode takes the posterior mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import Mlp, SparsePoints
from .diffcore import ParamStore, Tensor, as_tensor, default_dtype
from .diffcore.ops import (
    add, broadcast_to, clamp, concat, exp, mean, mul, narrow, reshape, scale,
    softmax, sum_,
)

LOGVAR_MIN = -10.0
LOGVAR_MAX = 4.0


@dataclass
class Posterior:
    """Per-point Gaussian posterior parameters (log-variance clamped)."""
    mu_f: Tensor       # (M, Zf)
    logvar_f: Tensor   # (M, Zf)
    mu_p: Tensor       # (M, 3)
    logvar_p: Tensor   # (M, 3)


@dataclass
class LatentSample:
    z_f: Tensor
    z_p: Tensor
    noise_f: np.ndarray
    noise_p: np.ndarray
    seed: int | None
    deterministic: bool


class LatentVae:
    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 d_sparse: int = 64, z_feature: int = 32, hidden: int = 64,
                 local_dim: int = 32, dec_hidden: int = 128,
                 residual_coord_mean: bool = True, head_gain: float = 1.0,
                 logvar_init_f: float = 3.0, logvar_init_p: float = -8.0,
                 prefix: str = "vae"):
        self.z_feature = z_feature
        self.d_sparse = d_sparse
        self.residual_coord_mean = residual_coord_mean
        self.backbone = Mlp(store, f"{prefix}.backbone", [3 + d_sparse, hidden, hidden],
                            rng, final_tanh=True)
        self.score = Mlp(store, f"{prefix}.score", [hidden, 1], rng)
        self.local = Mlp(store, f"{prefix}.local", [hidden, local_dim], rng,
                         final_tanh=True)
        joint = hidden + local_dim
        # Feature variances start broad (the posterior tightens toward the
        # prior as reconstruction organizes); coordinate variances start
        # narrow so latent positions track geometry from the first steps.
        bias_f = np.concatenate([np.zeros(z_feature),
                                 np.full(z_feature, logvar_init_f)])
        bias_p = np.concatenate([np.zeros(3), np.full(3, logvar_init_p)])
        self.head_f = Mlp(store, f"{prefix}.head_f", [joint, hidden, 2 * z_feature],
                          rng, final_gain=head_gain, final_bias=bias_f)
        self.head_p = Mlp(store, f"{prefix}.head_p", [joint, hidden, 6], rng,
                          final_gain=head_gain, final_bias=bias_p)
        self.dec_global = Mlp(store, f"{prefix}.dec_global", [z_feature + 3, local_dim],
                              rng, final_tanh=True)
        self.decoder = Mlp(store, f"{prefix}.decoder",
                           [z_feature + 3 + local_dim, dec_hidden, dec_hidden,
                            3 + d_sparse], rng)

    def encode(self, sparse: SparsePoints) -> Posterior:
        m = sparse.count
        x = concat([sparse.coords, sparse.feats], axis=1)
        psi = self.backbone(x)
        attn = softmax(self.score(psi), axis=0)                 # (M, 1)
        pooled = sum_(mul(attn, psi), axis=0, keepdims=True)    # (1, H)
        joint = concat([broadcast_to(pooled, (m, psi.data.shape[1])),
                        self.local(psi)], axis=1)

        raw_f = self.head_f(joint)
        mu_f = narrow(raw_f, 1, 0, self.z_feature)
        logvar_f = clamp(narrow(raw_f, 1, self.z_feature, self.z_feature),
                         LOGVAR_MIN, LOGVAR_MAX)
        raw_p = self.head_p(joint)
        delta_p = narrow(raw_p, 1, 0, 3)
        mu_p = add(sparse.coords, delta_p) if self.residual_coord_mean else delta_p
        logvar_p = clamp(narrow(raw_p, 1, 3, 3), LOGVAR_MIN, LOGVAR_MAX)
        return Posterior(mu_f, logvar_f, mu_p, logvar_p)

    def reparameterize(self, post: Posterior, seed: int | None = None,
                       deterministic: bool = False) -> LatentSample:
        """z = mu + exp(logvar/2) * eps with seeded standard-normal noise;
        deterministic mode takes eps = 0."""
        m = post.mu_f.data.shape[0]
        zf_dim = post.mu_f.data.shape[1]
        if deterministic:
            eps_f = np.zeros((m, zf_dim))
            eps_p = np.zeros((m, 3))
        else:
            gen = np.random.default_rng(seed)
            eps_f = gen.standard_normal((m, zf_dim))
            eps_p = gen.standard_normal((m, 3))
        dt = default_dtype()
        z_f = add(post.mu_f, mul(exp(scale(post.logvar_f, 0.5)), Tensor(eps_f, dtype=dt)))
        z_p = add(post.mu_p, mul(exp(scale(post.logvar_p, 0.5)), Tensor(eps_p, dtype=dt)))
        return LatentSample(z_f, z_p, eps_f, eps_p, seed, deterministic)

    def decode(self, z: LatentSample) -> SparsePoints:
        """Latent sample -> reconstructed sparse points.

        Each point decodes from its own (z_f, z_p) plus a mean-pooled global
        summary; coordinates come out as a residual on z_p.
        """
        u = concat([z.z_f, z.z_p], axis=1)
        m = u.data.shape[0]
        g = mean(self.dec_global(u), axis=0, keepdims=True)
        out = self.decoder(concat([u, broadcast_to(g, (m, g.data.shape[1]))], axis=1))
        coords = add(z.z_p, narrow(out, 1, 0, 3))
        feats = narrow(out, 1, 3, self.d_sparse)
        return SparsePoints(coords, feats)
