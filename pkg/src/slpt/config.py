"""Training configuration: one dataclass, JSON round-trip, content hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class TrainingConfig:
    seed: int = 0
    # data / model dimensions
    n_points: int = 4096
    m_sparse: int = 256
    d_sparse: int = 64
    d_dense: int = 64
    k_feature: int = 32
    s_semantic: int = 16
    z_feature: int = 32
    hidden: int = 64
    vae_hidden: int = 256
    knn_group: int = 16
    # rendering
    image_height: int = 64
    image_width: int = 64
    views_train: int = 8
    views_heldout: int = 2
    tile_size: int = 16
    z_near: float = 0.05
    lambda_lowpass: float = 0.3
    alpha_mask_floor: float = 0.05
    # optimization
    total_steps: int = 2000
    views_per_step: int = 2
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 500
    # loss weights
    beta_rgb: float = 1.0
    beta_depth: float = 0.2
    beta_sem: float = 0.1
    omega_coord: float = 1.0
    omega_feat: float = 0.1
    kl_weight: float = 0.0015
    anneal_floor: float = 0.1
    vae_head_gain: float = 1.0
    sparse_feat_scale: float = 0.06
    # ablation / behavior flags
    latent_vae_enabled: bool = True
    constant_splats: bool = False
    residual_coord_mean: bool = True
    # execution
    precision: str = "f32"   # training default; tests force f64
    workers: int = 0         # 0 = leave the kernel thread count alone

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainingConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "TrainingConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()
