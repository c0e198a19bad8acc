"""Synthetic desk-scale scenes with exact ground-truth supervision.

A scene is a ground plane plus simple primitives, surface-sampled into a
colored point cloud.  Every surface point becomes a ground-truth splat
(isotropic, fixed opacity) carrying its object's fixed random unit
semantic embedding, and the per-view RGB / depth / semantic targets are
rendered from those splats with the reference compositor, so a zero-loss
configuration of the model exists by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import fileio
from ..config import TrainingConfig
from ..diffcore import Tensor, precision
from ..geometry import CameraModel, load_cameras, look_at_w2c, project_gaussians, save_cameras
from ..rasterizer import composite_reference

GT_OPACITY = 0.85
SPLAT_SPACING_FACTOR = 1.3
CAMERA_RADIUS = 1.4
FOCAL_FACTOR = 0.85  # focal length as a fraction of image width
ELEVATIONS_DEG = (26.0, 50.0)
NORMALIZED_EXTENT = 0.9  # scene bounding box edge after normalization


@dataclass
class SceneObject:
    kind: str                 # sphere | box | plane
    center: np.ndarray
    size: np.ndarray          # sphere: (r,); box: half-extents; plane: (w, h)
    color: np.ndarray
    embedding: np.ndarray     # unit-norm semantic vector


@dataclass
class SyntheticScene:
    seed: int
    objects: list[SceneObject]
    coords: np.ndarray         # (N, 3) normalized into the unit cube
    colors: np.ndarray         # (N, 3) in [0, 1]
    point_object: np.ndarray   # (N,) object index per point
    splat_scale: np.ndarray    # (N,) isotropic ground-truth splat scale
    cameras: list[CameraModel]

    @property
    def gt_payload(self) -> np.ndarray:
        """Per-splat [rgb(3), embedding(S)] channels."""
        emb = np.stack([self.objects[i].embedding for i in self.point_object])
        return np.concatenate([self.colors, emb], axis=1)


def _sample_sphere(rng, center, radius, n):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return center + radius * d


def _sample_box(rng, center, half, n):
    areas = np.array([half[1] * half[2], half[1] * half[2],
                      half[0] * half[2], half[0] * half[2],
                      half[0] * half[1], half[0] * half[1]])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis = f // 2
        sign = 1.0 if f % 2 == 0 else -1.0
        others = [a for a in range(3) if a != axis]
        pts[m, axis] = sign * half[axis]
        pts[m, others[0]] = uv[m, 0] * half[others[0]]
        pts[m, others[1]] = uv[m, 1] * half[others[1]]
    return center + pts


def _sample_plane(rng, center, size, n):
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    return center + np.stack([uv[:, 0] * size[0], uv[:, 1] * size[1],
                              np.zeros(n)], axis=1)


def _surface_area(obj: SceneObject) -> float:
    if obj.kind == "sphere":
        return 4.0 * np.pi * obj.size[0] ** 2
    if obj.kind == "box":
        h = obj.size
        return 8.0 * (h[0] * h[1] + h[0] * h[2] + h[1] * h[2])
    return float(obj.size[0] * obj.size[1])


def generate_scene(seed: int, config: TrainingConfig) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    s_dim = config.s_semantic

    def embedding():
        e = rng.standard_normal(s_dim)
        return e / np.linalg.norm(e)

    plane = SceneObject("plane", np.array([0.0, 0.0, -0.28]),
                        np.array([0.85, 0.85]),
                        rng.uniform(0.25, 0.6, 3), embedding())
    r_sph = rng.uniform(0.13, 0.19)
    sphere = SceneObject(
        "sphere",
        np.array([rng.uniform(-0.24, -0.10), rng.uniform(-0.15, 0.15),
                  -0.28 + r_sph]),
        np.array([r_sph]), rng.uniform(0.3, 0.95, 3), embedding())
    half = np.array([rng.uniform(0.09, 0.14), rng.uniform(0.09, 0.14),
                     rng.uniform(0.12, 0.20)])
    box = SceneObject(
        "box",
        np.array([rng.uniform(0.10, 0.24), rng.uniform(-0.15, 0.15),
                  -0.28 + half[2]]),
        half, rng.uniform(0.3, 0.95, 3), embedding())
    objects = [plane, sphere, box]

    areas = np.array([_surface_area(o) for o in objects])
    counts = np.floor(config.n_points * areas / areas.sum()).astype(int)
    counts[0] += config.n_points - counts.sum()

    parts, owners = [], []
    for i, (obj, n) in enumerate(zip(objects, counts)):
        if obj.kind == "sphere":
            pts = _sample_sphere(rng, obj.center, obj.size[0], n)
        elif obj.kind == "box":
            pts = _sample_box(rng, obj.center, obj.size, n)
        else:
            pts = _sample_plane(rng, obj.center, obj.size, n)
        parts.append(pts)
        owners.append(np.full(n, i))
    coords = np.concatenate(parts)
    point_object = np.concatenate(owners)
    colors = np.stack([objects[i].color for i in point_object])

    # Normalize into the unit cube centered at the origin.
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    center = 0.5 * (lo + hi)
    scale = NORMALIZED_EXTENT / max(float((hi - lo).max()), 1e-9)
    coords = (coords - center) * scale

    spacing = np.sqrt(areas[point_object] * scale ** 2 / np.maximum(counts[point_object], 1))
    splat_scale = np.clip(SPLAT_SPACING_FACTOR * spacing, 2e-4, 0.45)

    cameras = camera_ring(config.views_train + config.views_heldout,
                          config.image_width, config.image_height,
                          z_near=config.z_near)
    return SyntheticScene(seed, objects, coords, colors, point_object,
                          splat_scale, cameras)


def camera_ring(n_views: int, width: int, height: int,
                radius: float = CAMERA_RADIUS, z_near: float = 0.05):
    """Poses on a sphere around the origin, alternating two elevations."""
    cams = []
    f = FOCAL_FACTOR * width
    for k in range(n_views):
        az = 2.0 * np.pi * k / n_views + 0.35 * (k % 2)
        el = np.deg2rad(ELEVATIONS_DEG[k % 2])
        eye = radius * np.array([np.cos(az) * np.cos(el),
                                 np.sin(az) * np.cos(el),
                                 np.sin(el)])
        cams.append(CameraModel(fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
                                width=width, height=height,
                                w2c=look_at_w2c(eye, (0.0, 0.0, 0.0)),
                                z_near=z_near))
    return cams


def render_ground_truth(scene: SyntheticScene, cam: CameraModel):
    """Reference-composited maps from the ground-truth splats (float64).

    Returns dict with rgb (H,W,3), depth (H,W), sem (H,W,S), alpha (H,W).
    """
    n = scene.coords.shape[0]
    with precision(np.float64):
        quat = np.tile((1.0, 0.0, 0.0, 0.0), (n, 1))
        scales = np.repeat(scene.splat_scale[:, None], 3, axis=1)
        proj = project_gaussians(Tensor(scene.coords), Tensor(quat), Tensor(scales), cam)
        payload_full = scene.gt_payload
        payload = np.concatenate(
            [payload_full[proj.keep], proj.depth.data], axis=1)
        maps, alpha = composite_reference(
            proj.mean2d.data, proj.conic.data,
            np.full(proj.keep.shape[0], GT_OPACITY), payload,
            proj.depth.data.reshape(-1), proj.radius,
            cam.width, cam.height)
    s = payload_full.shape[1] - 3
    return {
        "rgb": maps[:, :, :3],
        "sem": maps[:, :, 3:3 + s],
        "depth": maps[:, :, 3 + s],
        "alpha": alpha,
    }


def write_dataset(scene: SyntheticScene, config: TrainingConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_ply(out / "points.ply", scene.coords, scene.colors)
    save_cameras(out / "cameras.json", scene.cameras)
    for k, cam in enumerate(scene.cameras):
        gt = render_ground_truth(scene, cam)
        fileio.write_ppm(out / f"view_{k}_rgb.ppm", gt["rgb"])
        fileio.write_tensor(out / f"view_{k}_depth.bin", gt["depth"])
        fileio.write_tensor(out / f"view_{k}_sem.bin", gt["sem"])
    meta = {
        "seed": scene.seed,
        "n_points": int(scene.coords.shape[0]),
        "views_train": config.views_train,
        "views_heldout": config.views_heldout,
        "objects": [
            {"kind": o.kind, "center": list(map(float, o.center)),
             "size": list(map(float, o.size)),
             "color": list(map(float, o.color)),
             "embedding": list(map(float, o.embedding))}
            for o in scene.objects
        ],
        "gt_opacity": GT_OPACITY,
    }
    (out / "scene.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def generate_dataset(seed: int, config: TrainingConfig, out_dir) -> SyntheticScene:
    scene = generate_scene(seed, config)
    write_dataset(scene, config, out_dir)
    return scene


@dataclass
class Dataset:
    coords: np.ndarray
    colors: np.ndarray
    cameras: list[CameraModel]
    views: list[dict]          # per view: rgb / depth / sem arrays
    views_train: int
    views_heldout: int

    def train_indices(self):
        return list(range(self.views_train))

    def heldout_indices(self):
        return list(range(self.views_train, self.views_train + self.views_heldout))


def load_dataset(path) -> Dataset:
    root = Path(path)
    coords, colors = fileio.read_ply(root / "points.ply")
    cameras = load_cameras(root / "cameras.json")
    meta = json.loads((root / "scene.json").read_text())
    views = []
    for k in range(len(cameras)):
        views.append({
            "rgb": fileio.read_ppm(root / f"view_{k}_rgb.ppm"),
            "depth": fileio.read_tensor(root / f"view_{k}_depth.bin").astype(np.float64),
            "sem": fileio.read_tensor(root / f"view_{k}_sem.bin").astype(np.float64),
        })
    return Dataset(coords, colors, cameras, views,
                   int(meta["views_train"]), int(meta["views_heldout"]))
