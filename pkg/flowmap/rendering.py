"""
Images of dense flow maps and of training curves.
"""
import json
from logging import getLogger
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from matplotlib.image import imsave

log = getLogger(__name__)

COLORMAP = "viridis"
LEVELS = 256


def colormap_indices(values: np.ndarray) -> np.ndarray:
    """
    Map a 2-D array onto 8-bit colormap indices, normalized per image: its minimum becomes 0 and its
    maximum 255. A constant map becomes all zeros.
    """
    values = np.asarray(values, dtype=np.float64)
    low, high = float(values.min()), float(values.max())
    if high <= low:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = (values - low) / (high - low) * (LEVELS - 1)
    return np.clip(np.rint(scaled), 0, LEVELS - 1).astype(np.uint8)


def colorize(values: np.ndarray) -> np.ndarray:
    """
    RGB uint8 image of ``values`` in viridis: darker means lower flow.
    """
    lookup = (matplotlib.colormaps[COLORMAP].resampled(LEVELS)(np.arange(LEVELS))[:, :3] * 255).round()
    return lookup.astype(np.uint8)[colormap_indices(values)]


def render_flow_map(values: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    imsave(path, colorize(values), format="png")
    return path


def read_log_records(log_path) -> list[dict]:
    with open(log_path, encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]


def render_training_curves(log_path, path) -> Path:
    """
    Plot training RMSE (left) and validation RMSE (right) against the step from a ``log.jsonl``.
    """
    records = read_log_records(log_path)
    train = [(record["step"], record["train_rmse"]) for record in records if "train_rmse" in record]
    val = [(record["step"], record["val_rmse"]) for record in records if record.get("val_rmse") is not None]

    figure = Figure(figsize=(10, 4))
    for axes, points, title in zip(figure.subplots(1, 2), (train, val), ("Training RMSE", "Validation RMSE")):
        if points:
            steps, values = zip(*points)
            axes.plot(steps, values, marker="." if len(points) < 50 else None)
        axes.set_title(title)
        axes.set_xlabel("batch")
        axes.set_ylabel("RMSE (m³/s)")
        axes.grid(True, alpha=0.3)
    figure.tight_layout()

    path = Path(path)
    figure.savefig(path, format="png")
    log.info("Wrote training curves to %s", path)
    return path
