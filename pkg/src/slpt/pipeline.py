"""End-to-end model: encode, latent VAE, decode, heads, render, losses.

One Pipeline owns the parameter store contents for a given config.  A
forward pass builds the full differentiable graph for a batch of views;
`training_loss` attaches the annealed objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import EncodePlan, PointCodec, SparsePoints
from .config import TrainingConfig
from .diffcore import ParamStore, Tensor, default_dtype
from .diffcore.ops import concat, gather_rows
from .geometry import CameraModel, project_gaussians
from .heads import Projectors, ReconstructionHead, SplatHead, SplatPrediction
from .latent_vae import LatentSample, LatentVae, Posterior
from .losses import (
    LossBreakdown, LossWeights, anneal, kl_loss, recon_loss, render_loss,
    total_loss, vae_loss,
)
from .rasterizer import rasterize


@dataclass
class Scene:
    """A point cloud plus the static grouping plan for it."""
    coords: np.ndarray
    colors: np.ndarray
    plan: EncodePlan


@dataclass
class ViewRender:
    rgb: Tensor
    sem: Tensor
    depth: Tensor
    feature: Tensor
    alpha: Tensor


@dataclass
class ForwardState:
    sparse: SparsePoints
    posterior: Posterior | None
    latent: LatentSample | None
    sparse_recon: SparsePoints | None
    dense_feats: Tensor
    splats: SplatPrediction
    recon_coords: Tensor
    recon_colors: Tensor
    views: list[ViewRender]


class Pipeline:
    def __init__(self, config: TrainingConfig, store: ParamStore,
                 rng: np.random.Generator):
        self.config = config
        self.store = store
        self.codec = PointCodec(
            store, rng, m_sparse=config.m_sparse, d_sparse=config.d_sparse,
            d_dense=config.d_dense, k_group=config.knn_group, hidden=config.hidden,
            sparse_feat_scale=config.sparse_feat_scale)
        self.vae = None
        if config.latent_vae_enabled:
            self.vae = LatentVae(
                store, rng, d_sparse=config.d_sparse, z_feature=config.z_feature,
                hidden=config.hidden, dec_hidden=config.vae_hidden,
                residual_coord_mean=config.residual_coord_mean,
                head_gain=config.vae_head_gain)
        self.splat_head = SplatHead(
            store, rng, d_dense=config.d_dense, k_feature=config.k_feature,
            hidden=config.hidden, constant_mode=config.constant_splats)
        self.projectors = Projectors(
            store, rng, k_feature=config.k_feature, s_semantic=config.s_semantic)
        self.recon_head = ReconstructionHead(store, rng, d_dense=config.d_dense)
        self.weights = LossWeights(
            beta_rgb=config.beta_rgb, beta_depth=config.beta_depth,
            beta_sem=config.beta_sem, omega_coord=config.omega_coord,
            omega_feat=config.omega_feat, kl_weight=config.kl_weight,
            anneal_floor=config.anneal_floor)

    def prepare_scene(self, coords: np.ndarray, colors: np.ndarray) -> Scene:
        return Scene(np.asarray(coords, dtype=np.float64),
                     np.asarray(colors, dtype=np.float64),
                     self.codec.make_plan(np.asarray(coords, dtype=np.float64)))

    def forward(self, scene: Scene, cams: list[CameraModel],
                sample_seed: int | None = None,
                deterministic: bool = False) -> ForwardState:
        cfg = self.config
        colors = Tensor(scene.colors, dtype=default_dtype())
        sparse, skips = self.codec.encode(scene.coords, colors, scene.plan)

        posterior = latent = sparse_recon = None
        decoder_input = sparse
        if self.vae is not None:
            posterior = self.vae.encode(sparse)
            latent = self.vae.reparameterize(posterior, seed=sample_seed,
                                             deterministic=deterministic)
            sparse_recon = self.vae.decode(latent)
            decoder_input = sparse_recon

        dense = self.codec.decode(decoder_input, skips)
        splats = self.splat_head.predict(dense, scene.coords)
        p_hat, c_hat = self.recon_head(dense, scene.coords)

        views = [self.render_view(splats, cam) for cam in cams]
        return ForwardState(sparse, posterior, latent, sparse_recon, dense,
                            splats, p_hat, c_hat, views)

    def extract_latent(self, scene: Scene, sample_seed: int | None = None,
                       deterministic: bool = False):
        """Downstream representation: encode, posterior, reparameterized sample.

        Returns (LatentSample, Posterior); requires the latent VAE."""
        if self.vae is None:
            raise ValueError("latent extraction requires latent_vae_enabled")
        colors = Tensor(scene.colors, dtype=default_dtype())
        sparse, _ = self.codec.encode(scene.coords, colors, scene.plan)
        posterior = self.vae.encode(sparse)
        latent = self.vae.reparameterize(posterior, seed=sample_seed,
                                         deterministic=deterministic)
        return latent, posterior

    def render_view(self, splats: SplatPrediction, cam: CameraModel) -> ViewRender:
        cfg = self.config
        proj = project_gaussians(
            Tensor(splats.means, dtype=default_dtype()), splats.quat, splats.scale,
            cam, lambda_lowpass=cfg.lambda_lowpass)
        feat = gather_rows(splats.feat, proj.keep)
        opac = gather_rows(splats.opacity, proj.keep)
        payload = concat([feat, proj.depth], axis=1)
        maps, alpha = rasterize(
            proj.mean2d, proj.conic, opac, payload,
            proj.depth.data.reshape(-1), proj.radius,
            cam.width, cam.height, tile_size=cfg.tile_size)
        from .diffcore.ops import narrow, reshape
        k = cfg.k_feature
        feature_map = narrow(maps, 2, 0, k)
        depth_map = reshape(narrow(maps, 2, k, 1), (cam.height, cam.width))
        rgb, sem = self.projectors(feature_map)
        return ViewRender(rgb, sem, depth_map, feature_map, alpha)

    def training_loss(self, state: ForwardState, scene: Scene, gt_views: list[dict],
                      step: int):
        """gt_views[i]: {"rgb": (H,W,3), "depth": (H,W), "sem": (H,W,S)} arrays
        aligned with state.views.  Returns (loss tensor, LossBreakdown)."""
        cfg = self.config
        w_t = anneal(step, cfg.total_steps, cfg.anneal_floor)
        packed = []
        for render, gt in zip(state.views, gt_views):
            mask = (np.asarray(gt["depth"]) > 0.0) & (render.alpha.data > cfg.alpha_mask_floor)
            packed.append({
                "rgb": render.rgb, "gt_rgb": gt["rgb"],
                "depth": render.depth, "gt_depth": gt["depth"],
                "sem": render.sem, "gt_sem": gt["sem"],
                "depth_mask": mask,
            })
        l_render, l_rgb, l_depth, l_sem, depth_warn = render_loss(packed, self.weights)
        l_recon = recon_loss(state.recon_coords, state.recon_colors,
                             scene.coords, scene.colors)
        l_vae_t = l_kl_t = None
        if self.vae is not None:
            l_vae_t = vae_loss(state.sparse_recon.coords, state.sparse_recon.feats,
                               state.sparse.coords.data, state.sparse.feats,
                               self.weights)
            l_kl_t = kl_loss(state.posterior)
        loss = total_loss(l_render, l_recon, l_vae_t, l_kl_t, w_t,
                          self.weights.kl_weight)
        breakdown = LossBreakdown(
            l_render=l_render.item(), l_render_rgb=l_rgb.item(),
            l_render_depth=l_depth.item(), l_render_sem=l_sem.item(),
            l_recon=l_recon.item(),
            l_vae=l_vae_t.item() if l_vae_t is not None else 0.0,
            l_kl=l_kl_t.item() if l_kl_t is not None else 0.0,
            w_t=w_t, l_total=loss.item(), depth_warning=depth_warn)
        return loss, breakdown


def build_pipeline(config: TrainingConfig):
    """Fresh (store, pipeline) pair seeded from the config."""
    store = ParamStore()
    rng = np.random.default_rng(config.seed)
    return store, Pipeline(config, store, rng)
