"""Static SVG figures: representation scatter panels and sweep heatmaps"""
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from repunlearn.datasets import LabeledDataset  # noqa: E402
from repunlearn.encoder import FeedForwardNet, encode  # noqa: E402
from repunlearn.errors import FigureError, StorageError  # noqa: E402
from repunlearn.unlearning import Transformation  # noqa: E402

logger = logging.getLogger(__name__)

plt.rcParams["svg.hashsalt"] = "repunlearn"
plt.rcParams["svg.fonttype"] = "none"

Panel = Tuple[str, Optional[Transformation]]


def _save_svg(fig, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise StorageError(f"Cannot write {path}: {e}") from e
    finally:
        plt.close(fig)
    return path


def panel_representations(net: FeedForwardNet, data: LabeledDataset, panels: Sequence[Panel]):
    """z = e(x) per panel, mapped through the panel's transformation when present"""
    if net.representation_dim != 2:
        raise FigureError(f"Representation plots need d_z = 2, got {net.representation_dim}")
    if data.n_samples == 0:
        raise FigureError("Cannot plot an empty dataset")
    if not panels:
        raise FigureError("At least one panel is required")
    z = encode(net, data.features)
    return [(title, f(z) if f is not None else z) for title, f in panels]


def nearest_retain_centroid_distance(z: np.ndarray, labels: np.ndarray, forget_classes: Iterable[int]) -> float:
    """Mean distance of forget-class points to the closest retain-class centroid"""
    forget_classes = list(forget_classes)
    forget = np.isin(labels, forget_classes)
    retain_classes = [c for c in np.unique(labels) if c not in forget_classes]
    if not forget.any() or not retain_classes:
        raise FigureError("Need both forget and retain points")
    centroids = np.stack([z[labels == c].mean(axis=0) for c in retain_classes])
    dists = np.linalg.norm(z[forget][:, None, :] - centroids[None, :, :], axis=2)
    return float(dists.min(axis=1).mean())


def plot_representations(
    net: FeedForwardNet,
    data: LabeledDataset,
    path,
    panels: Sequence[Panel] = (("original", None),),
    forget_classes: Iterable[int] = (),
) -> Path:
    """Scatter of 2-D representations coloured by class; forget classes drawn as stars"""
    forget_classes = set(int(c) for c in forget_classes)
    rendered = panel_representations(net, data, panels)
    cmap = plt.get_cmap("tab10")

    fig, axes = plt.subplots(1, len(rendered), figsize=(4.5 * len(rendered), 4.2), squeeze=False)
    for ax, (title, z) in zip(axes[0], rendered):
        for c in range(data.n_classes):
            mask = data.labels == c
            if not mask.any():
                continue
            forgotten = c in forget_classes
            ax.scatter(
                z[mask, 0], z[mask, 1],
                s=28 if forgotten else 8,
                marker="*" if forgotten else "o",
                color=cmap(c % 10),
                alpha=0.9 if forgotten else 0.5,
                label=f"class {c}" + (" (forget)" if forgotten else ""),
                linewidths=0,
            )
        ax.set_title(title)
        ax.set_xlabel("z[0]")
        ax.set_ylabel("z[1]")
        ax.grid(True, alpha=0.3)
    axes[0][0].legend(loc="best", fontsize=7, markerscale=1.5)
    fig.tight_layout()

    if forget_classes and len(forget_classes) < data.n_classes:
        for title, z in rendered:
            logger.info(
                "%s: forget points lie %.3f from the nearest retain centroid",
                title, nearest_retain_centroid_distance(z, data.labels, forget_classes),
            )
    return _save_svg(fig, path)


def plot_heatmap(pivot: pd.DataFrame, path, title: str) -> Path:
    """beta on the y-axis, depth on the x-axis, cell annotations with the mean value"""
    if pivot.empty:
        raise FigureError("Empty pivot table")
    values = pivot.to_numpy(dtype=np.float64)
    fig, ax = plt.subplots(figsize=(1.6 * values.shape[1] + 2.0, 0.8 * values.shape[0] + 1.6))
    image = ax.imshow(values, cmap="viridis", aspect="auto", origin="lower")
    ax.set_xticks(range(values.shape[1]), [str(c) for c in pivot.columns])
    ax.set_yticks(range(values.shape[0]), [f"{b:g}" for b in pivot.index])
    ax.set_xlabel("transformation depth")
    ax.set_ylabel("beta")
    ax.set_title(title)
    for i in range(values.shape[0]):
        for j in range(values.shape[1]):
            if np.isfinite(values[i, j]):
                ax.text(j, i, f"{values[i, j]:.2f}", ha="center", va="center", color="white", fontsize=8)
    fig.colorbar(image, ax=ax)
    fig.tight_layout()
    return _save_svg(fig, path)
