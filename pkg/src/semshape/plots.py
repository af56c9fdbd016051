"""Static report figures: training curves, correlation heatmaps, and
per-vertex effect-field renders. All figures are rendered from report data,
never from live state, so they can be regenerated from persisted JSON/CSV.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image

from .evaluation import EffectField
from .morphable import MorphableModel
from .rendering import CameraView, SoftwareRasterizer

__all__ = [
    "plot_training_curves",
    "plot_correlation_heatmap",
    "render_effect_heatmap",
]


def plot_training_curves(training_log: dict, path) -> Path:
    path = Path(path)
    train = training_log.get("train_loss", [])
    val = training_log.get("val_loss", [])
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(train))
    ax.plot(epochs, train, label="train")
    if val and np.isfinite(val).any():
        ax.plot(np.arange(len(val)), val, label="validation")
    ax.set_xlabel("epoch (0 = untrained)")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_correlation_heatmap(matrix, descriptor_ids, path) -> Path:
    path = Path(path)
    matrix = np.asarray(matrix)
    fig, ax = plt.subplots(figsize=(0.5 * len(descriptor_ids) + 2,) * 2)
    im = ax.imshow(matrix, vmin=-1.0, vmax=1.0, cmap="coolwarm")
    ax.set_xticks(range(len(descriptor_ids)))
    ax.set_yticks(range(len(descriptor_ids)))
    ax.set_xticklabels(descriptor_ids, rotation=90, fontsize=7)
    ax.set_yticklabels(descriptor_ids, fontsize=7)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_effect_heatmap(
    model: MorphableModel,
    field: EffectField,
    path,
    view: CameraView = CameraView(),
    image_size: int = 512,
) -> Path:
    """Render the mesh with vertices tinted by their normalized deformation
    (light gray = untouched, red = peak)."""
    path = Path(path)
    colors = matplotlib.colormaps["Reds"](field.delta)[:, :3] * 255.0
    # keep untouched regions visible instead of near-white
    base = np.full_like(colors, 210.0)
    weight = np.clip(field.delta, 0.0, 1.0)[:, None]
    shaded = (1.0 - weight) * base + weight * colors
    image = SoftwareRasterizer().render(
        model.template_mesh(), view, image_size, vertex_colors=shaded
    )
    Image.fromarray(image).save(path)
    return path
