"""Prediction heads over the dense feature points.

- splat property head: per-point opacity / scale / rotation / feature,
  with a constant-property mode in which the shape parameters do not
  exist in the graph and only features are predicted;
- pixel projectors decoding rendered feature maps into RGB and semantics;
- reconstruction head regressing each point's own coordinates and color.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import Mlp
from .diffcore import ParamStore, Tensor, default_dtype
from .diffcore.ops import (
    add, broadcast_to, clamp, div, exp, narrow, reshape, sigmoid, sqrt,
    square, sum_,
)

SCALE_MIN = 1e-4
SCALE_MAX = 0.5

# Constant-property mode uses these fixed splat properties.
CONSTANT_OPACITY = 1.0
CONSTANT_SCALE = (0.001, 0.001, 0.001)
CONSTANT_ROTATION = (1.0, 0.0, 0.0, 0.0)


@dataclass
class SplatPrediction:
    """One splat per dense point; means are the points' own coordinates."""
    means: np.ndarray   # (N, 3), fixed scene geometry
    opacity: Tensor     # (N, 1) in (0, 1) (or the constant 1)
    scale: Tensor       # (N, 3) in [SCALE_MIN, SCALE_MAX]
    quat: Tensor        # (N, 4) unit rows
    feat: Tensor        # (N, K)


def normalize_rows(x: Tensor) -> Tensor:
    n = sqrt(sum_(square(x), axis=1, keepdims=True))
    return div(x, broadcast_to(n, x.data.shape))


class SplatHead:
    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 d_dense: int = 64, k_feature: int = 32, hidden: int = 64,
                 constant_mode: bool = False, init_scale: float = 0.02,
                 prefix: str = "splat_head"):
        self.k_feature = k_feature
        self.constant_mode = constant_mode
        self.trunk = Mlp(store, f"{prefix}.trunk", [d_dense, hidden], rng,
                         final_tanh=True)
        self.feat = Mlp(store, f"{prefix}.feat", [hidden, k_feature], rng)
        if not constant_mode:
            # raw layout: opacity logit, 3 log-scales, 4 quaternion components
            bias = np.zeros(8)
            bias[1:4] = math.log(init_scale)
            bias[4] = 1.0
            self.shape = Mlp(store, f"{prefix}.shape", [hidden, 8], rng,
                             final_bias=bias)

    def predict(self, dense_feats: Tensor, coords: np.ndarray) -> SplatPrediction:
        n = coords.shape[0]
        h = self.trunk(dense_feats)
        feat = self.feat(h)
        dt = default_dtype()
        if self.constant_mode:
            return SplatPrediction(
                means=coords,
                opacity=Tensor(np.full((n, 1), CONSTANT_OPACITY), dtype=dt),
                scale=Tensor(np.tile(CONSTANT_SCALE, (n, 1)), dtype=dt),
                quat=Tensor(np.tile(CONSTANT_ROTATION, (n, 1)), dtype=dt),
                feat=feat,
            )
        raw = self.shape(h)
        opacity = sigmoid(narrow(raw, 1, 0, 1))
        scale = exp(clamp(narrow(raw, 1, 1, 3), math.log(SCALE_MIN), math.log(SCALE_MAX)))
        quat = normalize_rows(narrow(raw, 1, 4, 4))
        return SplatPrediction(coords, opacity, scale, quat, feat)


class Projectors:
    """Per-pixel decoders from the rendered feature space: RGB through a
    sigmoid, semantics linear."""

    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 k_feature: int = 32, s_semantic: int = 16, hidden: int = 32,
                 zero_final: bool = False, prefix: str = "proj"):
        self.color = Mlp(store, f"{prefix}.color", [k_feature, hidden, 3], rng,
                         zero_final=zero_final)
        self.semantic = Mlp(store, f"{prefix}.semantic", [k_feature, hidden, s_semantic],
                            rng, zero_final=zero_final)

    def __call__(self, feature_map: Tensor):
        h, w, k = feature_map.data.shape
        flat = reshape(feature_map, (h * w, k))
        rgb = reshape(sigmoid(self.color(flat)), (h, w, 3))
        sem_flat = self.semantic(flat)
        sem = reshape(sem_flat, (h, w, sem_flat.data.shape[1]))
        return rgb, sem


class ReconstructionHead:
    """Regress original coordinates (as a residual) and color per point."""

    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 d_dense: int = 64, hidden: int = 32, zero_final: bool = False,
                 prefix: str = "recon_head"):
        self.mlp = Mlp(store, f"{prefix}.mlp", [d_dense, hidden, 6], rng,
                       zero_final=zero_final)

    def __call__(self, dense_feats: Tensor, coords: np.ndarray):
        out = self.mlp(dense_feats)
        dt = default_dtype()
        p_hat = add(Tensor(coords, dtype=dt), narrow(out, 1, 0, 3))
        c_hat = sigmoid(narrow(out, 1, 3, 3))
        return p_hat, c_hat
