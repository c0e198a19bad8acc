"""Loss terms and the annealed total objective.

Conventions (tests depend on them): a vector L1 sums over components and
set losses divide by the point count only; image losses are plain means
over unmasked elements.  The depth term is masked to pixels with valid
ground truth and rendered alpha above a floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, as_tensor
from .diffcore.ops import absval, add, div, mean, mul, scale, sub, sum_

ALPHA_MASK_FLOOR = 0.05


@dataclass
class LossWeights:
    beta_rgb: float = 1.0
    beta_depth: float = 0.2
    beta_sem: float = 0.1
    omega_coord: float = 1.0
    omega_feat: float = 0.1
    kl_weight: float = 1.0
    anneal_floor: float = 0.1


@dataclass
class LossBreakdown:
    """Scalar summaries of one training step (the graph lives elsewhere)."""
    l_render: float = 0.0
    l_render_rgb: float = 0.0
    l_render_depth: float = 0.0
    l_render_sem: float = 0.0
    l_recon: float = 0.0
    l_vae: float = 0.0
    l_kl: float = 0.0
    w_t: float = 1.0
    l_total: float = 0.0
    depth_warning: bool = False

    FIELDS = ("l_render", "l_render_rgb", "l_render_depth", "l_render_sem",
              "l_recon", "l_vae", "l_kl", "w_t", "l_total")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


def elementwise_l1(pred: Tensor, target) -> Tensor:
    """Mean absolute difference over all elements."""
    return mean(absval(sub(pred, as_tensor(target))))


def masked_l1(pred: Tensor, target, mask: np.ndarray) -> Tensor:
    """Mean absolute difference over mask-selected elements; zero if the
    mask is empty.  The mask is a constant: no gradient flows through it."""
    count = float(mask.sum())
    if count == 0.0:
        return scale(sum_(mul(pred, Tensor(np.zeros_like(mask, dtype=float)))), 0.0)
    d = absval(sub(pred, as_tensor(target)))
    return scale(sum_(mul(d, Tensor(mask.astype(float), dtype=pred.dtype))), 1.0 / count)


def vector_l1_mean(pred: Tensor, target) -> Tensor:
    """Mean over rows of the component-summed L1 distance."""
    n = pred.data.shape[0]
    return scale(sum_(absval(sub(pred, as_tensor(target)))), 1.0 / n)


def render_loss(views, weights: LossWeights):
    """Average over views of the weighted RGB / depth / semantic alignment.

    `views` is a list of dicts with keys rgb/depth/sem (tensors), gt_rgb /
    gt_depth / gt_sem (arrays or tensors) and depth_mask (bool array).
    Returns (total, rgb_part, depth_part, sem_part, depth_warning).
    """
    if not views:
        raise ValueError("render_loss needs at least one view")
    inv = 1.0 / len(views)
    rgb_t = depth_t = sem_t = None
    any_valid_depth = False
    for v in views:
        r = elementwise_l1(v["rgb"], v["gt_rgb"])
        s = elementwise_l1(v["sem"], v["gt_sem"])
        mask = np.asarray(v["depth_mask"])
        any_valid_depth = any_valid_depth or bool(mask.any())
        d = masked_l1(v["depth"], v["gt_depth"], mask)
        rgb_t = r if rgb_t is None else add(rgb_t, r)
        depth_t = d if depth_t is None else add(depth_t, d)
        sem_t = s if sem_t is None else add(sem_t, s)
    rgb_t, depth_t, sem_t = (scale(rgb_t, inv), scale(depth_t, inv), scale(sem_t, inv))
    total = add(add(scale(rgb_t, weights.beta_rgb), scale(depth_t, weights.beta_depth)),
                scale(sem_t, weights.beta_sem))
    return total, rgb_t, depth_t, sem_t, not any_valid_depth


def recon_loss(p_hat: Tensor, c_hat: Tensor, coords, colors) -> Tensor:
    """Per-point coordinate + color vector L1, averaged over points."""
    return add(vector_l1_mean(p_hat, coords), vector_l1_mean(c_hat, colors))


def vae_loss(recon_coords: Tensor, recon_feats: Tensor, target_coords, target_feats,
             weights: LossWeights) -> Tensor:
    """Index-aligned L1 between reconstructed and original sparse points."""
    return add(scale(vector_l1_mean(recon_coords, target_coords), weights.omega_coord),
               scale(vector_l1_mean(recon_feats, target_feats), weights.omega_feat))


def kl_term(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean over points of the summed per-dim KL to a standard normal:
    0.5 * (mu^2 + sigma^2 - 1 - log sigma^2)."""
    from .diffcore.ops import exp, square, add_const, neg
    n = mu.data.shape[0]
    inner = sub(add(square(mu), exp(logvar)), add_const(logvar, 1.0))
    return scale(sum_(inner), 0.5 / n)


def kl_loss(posterior) -> Tensor:
    """Feature-posterior KL plus coordinate-posterior KL."""
    return add(kl_term(posterior.mu_f, posterior.logvar_f),
               kl_term(posterior.mu_p, posterior.logvar_p))


def anneal(t: int, total_steps: int, floor: float = 0.1) -> float:
    """Reconstruction weight: linear from 1 at step 0 to `floor` at the
    halfway point, constant afterwards."""
    if total_steps <= 0:
        return floor
    knee = total_steps / 2.0
    frac = min(max(t / knee, 0.0), 1.0)
    return 1.0 - (1.0 - floor) * frac


def total_loss(l_render: Tensor, l_recon: Tensor, l_vae: Tensor | None,
               l_kl: Tensor | None, w_t: float, kl_weight: float = 1.0) -> Tensor:
    out = add(scale(l_render, 1.0 - w_t), scale(l_recon, w_t))
    if l_vae is not None:
        out = add(out, l_vae)
    if l_kl is not None:
        out = add(out, scale(l_kl, kl_weight))
    return out
