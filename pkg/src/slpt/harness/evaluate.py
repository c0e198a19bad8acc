"""Evaluation: deterministic forward, PSNR / masked-depth / semantic report."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..config import TrainingConfig
from ..pipeline import Pipeline, build_pipeline
from .scene import Dataset, load_dataset
from .train import apply_execution_config, load_checkpoint_into

PSNR_CAP = 99.0


def psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP)


def evaluate_views(pipeline: Pipeline, scene, data: Dataset, view_indices,
                   alpha_floor: float) -> dict:
    per_view = []
    for v in view_indices:
        state = pipeline.forward(scene, [data.cameras[v]], deterministic=True)
        render = state.views[0]
        gt = data.views[v]
        mask = (gt["depth"] > 0.0) & (render.alpha.data > alpha_floor)
        if mask.any():
            depth_l1 = float(np.mean(np.abs(render.depth.data - gt["depth"])[mask]))
        else:
            depth_l1 = float("nan")
        per_view.append({
            "view": int(v),
            "psnr_rgb": psnr(render.rgb.data, gt["rgb"]),
            "l1_depth_masked": depth_l1,
            "l1_sem": float(np.mean(np.abs(render.sem.data - gt["sem"]))),
            "masked_pixels": int(mask.sum()),
        })
    valid_depth = [pv["l1_depth_masked"] for pv in per_view
                   if not np.isnan(pv["l1_depth_masked"])]
    return {
        "psnr_rgb": float(np.mean([pv["psnr_rgb"] for pv in per_view])),
        "l1_depth_masked": float(np.mean(valid_depth)) if valid_depth else float("nan"),
        "l1_sem": float(np.mean([pv["l1_sem"] for pv in per_view])),
        "per_view": per_view,
    }


def evaluate(config: TrainingConfig, checkpoint_path, dataset_dir,
             view_indices=None, report_path=None,
             dataset: Dataset | None = None) -> dict:
    apply_execution_config(config)
    data = dataset if dataset is not None else load_dataset(dataset_dir)
    if view_indices is None:
        view_indices = data.heldout_indices()
    store, pipeline = build_pipeline(config)
    load_checkpoint_into(store, config, Path(checkpoint_path))
    scene = pipeline.prepare_scene(data.coords, data.colors)
    report = evaluate_views(pipeline, scene, data, view_indices,
                            config.alpha_mask_floor)
    if report_path is not None:
        Path(report_path).write_text(
            json.dumps(report, indent=1, sort_keys=True, allow_nan=True) + "\n")
    return report
