from .scene import (
    Dataset,
    SyntheticScene,
    camera_ring,
    generate_dataset,
    generate_scene,
    load_dataset,
    render_ground_truth,
    write_dataset,
)
from .train import TrainResult, read_metrics, train
from .evaluate import evaluate, evaluate_views, psnr

__all__ = [
    "Dataset",
    "SyntheticScene",
    "TrainResult",
    "camera_ring",
    "evaluate",
    "evaluate_views",
    "generate_dataset",
    "generate_scene",
    "load_dataset",
    "psnr",
    "read_metrics",
    "render_ground_truth",
    "train",
    "write_dataset",
]
