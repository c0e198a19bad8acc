"""Training loop: full pipeline forward/backward, metrics, checkpoints."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import fileio
from ..config import TrainingConfig
from ..diffcore import AdamConfig, NumericalError, backward, set_default_dtype
from ..losses import LossBreakdown
from ..pipeline import Pipeline, build_pipeline
from ..rasterizer import set_workers
from .scene import Dataset, load_dataset

METRICS_HEADER = "# slpt-metrics-v1"
METRICS_COLUMNS = ["step"] + list(LossBreakdown.FIELDS) + ["wall_ms"]


def apply_execution_config(config: TrainingConfig) -> None:
    set_default_dtype(np.float64 if config.precision == "f64" else np.float32)
    if config.workers > 0:
        set_workers(config.workers)


def sample_seed_for_step(config_seed: int, step: int) -> int:
    return (config_seed * 1_000_003 + step * 7_919 + 17) % (2 ** 31)


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    steps: int
    final_breakdown: LossBreakdown


def save_checkpoint(store, config: TrainingConfig, step: int, path: Path) -> None:
    fileio.write_checkpoint(path, store.state_arrays(include_optimizer=True))
    sidecar = {"config": json.loads(config.to_json()),
               "config_hash": config.config_hash(), "step": step}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")


def load_checkpoint_into(store, config: TrainingConfig, path: Path) -> int:
    store.load_state_arrays(fileio.read_checkpoint(path))
    sidecar = path.with_suffix(".json")
    step = 0
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        step = int(meta.get("step", 0))
        if meta.get("config_hash") not in (None, config.config_hash()):
            raise ValueError("checkpoint was written under a different config")
    store.set_step(step)
    return step


def train(config: TrainingConfig, dataset_dir, out_dir,
          dataset: Dataset | None = None) -> TrainResult:
    apply_execution_config(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = dataset if dataset is not None else load_dataset(dataset_dir)

    store, pipeline = build_pipeline(config)
    scene = pipeline.prepare_scene(data.coords, data.colors)
    adam = AdamConfig(lr=config.lr, beta1=config.adam_beta1,
                      beta2=config.adam_beta2, eps=config.adam_eps)
    view_rng = np.random.default_rng(config.seed + 101)
    train_views = data.train_indices()

    metrics_path = out / "metrics.csv"
    ckpt_path = out / "checkpoint.bin"
    breakdown = LossBreakdown()
    with open(metrics_path, "w") as mf:
        mf.write(METRICS_HEADER + "\n")
        mf.write(",".join(METRICS_COLUMNS) + "\n")
        for step in range(config.total_steps):
            t0 = time.perf_counter()
            picked = view_rng.choice(train_views, size=min(config.views_per_step,
                                                           len(train_views)),
                                     replace=False)
            cams = [data.cameras[v] for v in picked]
            gts = [data.views[v] for v in picked]
            try:
                state = pipeline.forward(
                    scene, cams, sample_seed=sample_seed_for_step(config.seed, step))
                loss, breakdown = pipeline.training_loss(state, scene, gts, step)
                backward(loss)
            except NumericalError as err:
                raise NumericalError(f"aborting at step {step}: {err}") from err
            store.adam_step(adam)
            wall_ms = (time.perf_counter() - t0) * 1e3
            row = [str(step)] + [repr(v) for v in breakdown.as_row()] + [f"{wall_ms:.3f}"]
            mf.write(",".join(row) + "\n")
            if config.checkpoint_every > 0 and (step + 1) % config.checkpoint_every == 0:
                save_checkpoint(store, config, step + 1, ckpt_path)
        save_checkpoint(store, config, config.total_steps, ckpt_path)
    return TrainResult(ckpt_path, metrics_path, config.total_steps, breakdown)


def read_metrics(path) -> dict[str, np.ndarray]:
    """Columns of a metrics.csv as arrays (skips the version line)."""
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if lines[0].startswith("#"):
        lines = lines[1:]
    cols = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    data = np.array([[float(v) for v in r] for r in rows]) if rows else np.zeros((0, len(cols)))
    return {c: data[:, i] for i, c in enumerate(cols)}
