"""Point-cloud encoder/decoder.

Two set-abstraction stages downsample the raw cloud to sparse feature
points (N -> N/4 -> M); two feature-propagation stages upsample latent
points back onto the original coordinates, concatenating skip features
from the matching encoder stage.  Grouping uses relative coordinates
only, so features are invariant to rigid translation of the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import ContractViolation, ParamStore, Tensor, as_tensor, default_dtype
from .diffcore.ops import (
    concat, gather_rows, interpolate_nn3, linear, max_, reshape, tanh,
)

KNN_GROUP = 16


def lexicographic_min_index(coords: np.ndarray) -> int:
    """Index of the lexicographically smallest (x, y, z) row."""
    return int(np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))[0])


def farthest_point_indices(coords: np.ndarray, m: int) -> np.ndarray:
    """Deterministic farthest-point sampling, seeded at the lexicographic
    minimum so the result is independent of input order."""
    n = coords.shape[0]
    if n < m:
        raise ContractViolation(f"cannot sample {m} centers from {n} points")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = lexicographic_min_index(coords)
    dist = np.sum((coords - coords[chosen[0]]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(dist))
        chosen[i] = nxt
        d = np.sum((coords - coords[nxt]) ** 2, axis=1)
        np.minimum(dist, d, out=dist)
    return chosen


def knn_indices(query: np.ndarray, ref: np.ndarray, k: int) -> np.ndarray:
    """(Q, k) indices of the k nearest reference points, stable under ties."""
    d2 = (np.sum(query ** 2, axis=1)[:, None]
          + np.sum(ref ** 2, axis=1)[None, :]
          - 2.0 * query @ ref.T)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float = 1.0):
    lim = gain * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


class Mlp:
    """Shared per-point multilayer map: linear/tanh stack, linear output."""

    def __init__(self, store: ParamStore, prefix: str, sizes: list[int],
                 rng: np.random.Generator, final_tanh: bool = False,
                 zero_final: bool = False, final_bias=None, final_gain: float = 1.0):
        self.weights = []
        self.biases = []
        self.final_tanh = final_tanh
        last = len(sizes) - 2
        for i in range(len(sizes) - 1):
            w = glorot(rng, sizes[i], sizes[i + 1],
                       gain=final_gain if i == last else 1.0)
            b = np.zeros(sizes[i + 1])
            if i == last and zero_final:
                w = np.zeros_like(w)
            if i == last and final_bias is not None:
                b = np.asarray(final_bias, dtype=np.float64).reshape(-1).copy()
            self.weights.append(store.create(f"{prefix}.w{i}", w))
            self.biases.append(store.create(f"{prefix}.b{i}", b))

    def __call__(self, x: Tensor) -> Tensor:
        h = x
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = linear(h, w, b)
            if i < n - 1 or self.final_tanh:
                h = tanh(h)
        return h


@dataclass
class EncodePlan:
    """Static grouping structure for one cloud (coords never change)."""
    centers1_idx: np.ndarray
    centers1: np.ndarray
    group1_idx: np.ndarray
    rel1: np.ndarray
    centers2_idx: np.ndarray
    centers2: np.ndarray
    group2_idx: np.ndarray
    rel2: np.ndarray
    up2_idx: np.ndarray   # 3-NN of each raw point among stage-1 centers


@dataclass
class Skips:
    plan: EncodePlan
    feats1: Tensor          # stage-1 features (N/4, c1)
    raw_colors: Tensor      # input colors (N, 3)
    raw_coords: np.ndarray  # (N, 3)


@dataclass
class SparsePoints:
    """Latent feature points: coordinates plus per-point features."""
    coords: Tensor
    feats: Tensor

    @property
    def count(self) -> int:
        return self.coords.data.shape[0]


class PointCodec:
    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 m_sparse: int = 256, d_sparse: int = 64, d_dense: int = 64,
                 k_group: int = KNN_GROUP, hidden: int = 64, c1: int = 32,
                 sparse_feat_scale: float = 1.0, prefix: str = "codec"):
        self.m_sparse = m_sparse
        self.k_group = k_group
        self.c1 = c1
        self.sparse_feat_scale = sparse_feat_scale
        self.sa1 = Mlp(store, f"{prefix}.sa1", [6, hidden, c1], rng, final_tanh=True)
        self.sa2 = Mlp(store, f"{prefix}.sa2", [3 + c1, hidden, d_sparse], rng,
                       final_tanh=True)
        self.fp1 = Mlp(store, f"{prefix}.fp1", [d_sparse + c1, hidden, hidden], rng,
                       final_tanh=True)
        self.fp2 = Mlp(store, f"{prefix}.fp2", [hidden + 3, hidden, d_dense], rng,
                       final_tanh=True)

    def make_plan(self, coords: np.ndarray) -> EncodePlan:
        n = coords.shape[0]
        if n < self.m_sparse:
            raise ContractViolation(
                f"encode needs at least {self.m_sparse} points, got {n}")
        n1 = max(self.m_sparse, n // 4)
        c1_idx = farthest_point_indices(coords, n1)
        centers1 = coords[c1_idx]
        g1 = knn_indices(centers1, coords, self.k_group)
        rel1 = coords[g1] - centers1[:, None, :]
        c2_idx = farthest_point_indices(centers1, self.m_sparse)
        centers2 = centers1[c2_idx]
        g2 = knn_indices(centers2, centers1, self.k_group)
        rel2 = centers1[g2] - centers2[:, None, :]
        up2 = knn_indices(coords, centers1, 3)
        return EncodePlan(c1_idx, centers1, g1, rel1, c2_idx, centers2, g2, rel2, up2)

    def encode(self, coords: np.ndarray, colors, plan: EncodePlan | None = None):
        """Raw cloud -> (SparsePoints, Skips).  Coordinates pass through FPS
        untouched; features come from grouped relative coords + colors."""
        colors = as_tensor(colors)
        if plan is None:
            plan = self.make_plan(coords)
        k = self.k_group

        feats1 = self._abstraction(self.sa1, plan.rel1, gather_rows(colors, plan.group1_idx))
        feats2 = self._abstraction(self.sa2, plan.rel2, gather_rows(feats1, plan.group2_idx))
        if self.sparse_feat_scale != 1.0:
            from .diffcore.ops import scale as scale_op
            feats2 = scale_op(feats2, self.sparse_feat_scale)

        sparse = SparsePoints(Tensor(plan.centers2, dtype=default_dtype()), feats2)
        skips = Skips(plan, feats1, colors, coords)
        return sparse, skips

    def _abstraction(self, mlp: Mlp, rel: np.ndarray, nbr_feats: Tensor) -> Tensor:
        m, k, _ = rel.shape
        c = nbr_feats.data.shape[-1]
        x = concat([Tensor(rel.reshape(m * k, 3), dtype=nbr_feats.dtype),
                    reshape(nbr_feats, (m * k, c))], axis=1)
        h = mlp(x)
        return max_(reshape(h, (m, k, h.data.shape[1])), axis=1)

    def decode(self, sparse: SparsePoints, skips: Skips) -> Tensor:
        """Latent points -> dense per-point features on the raw coordinates.

        Stage-1 interpolation is dynamic (latent coordinates move under the
        VAE); stage-2 uses the static plan.  Output row i belongs to raw
        point i, so coordinates are preserved exactly.
        """
        if skips.feats1.data.shape[1] != self.c1:
            raise ContractViolation("skip features do not match this codec")
        plan = skips.plan
        src_coords = sparse.coords
        idx1 = knn_indices(plan.centers1, src_coords.data, 3)
        up1 = interpolate_nn3(src_coords, sparse.feats, plan.centers1, idx1)
        h1 = self.fp1(concat([up1, skips.feats1], axis=1))

        coords_t = Tensor(plan.centers1, dtype=h1.dtype)
        up2 = interpolate_nn3(coords_t, h1, skips.raw_coords, plan.up2_idx)
        return self.fp2(concat([up2, skips.raw_colors], axis=1))
