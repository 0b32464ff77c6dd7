"""Figures written next to the CLI's text and raster outputs.

Figures are built on :class:`matplotlib.figure.Figure` with the Agg canvas
directly, so nothing touches pyplot's global state.
"""
from __future__ import annotations

import os
from typing import Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .metrics import METRIC_NAMES, MetricsReport

__all__ = [
    "image_panels",
    "pipeline_figure",
    "segment_figure",
    "metrics_figure",
    "compound_figure",
]

RC = {
    "font.size": 8,
    "axes.titlesize": 9,
    "axes.linewidth": 0.6,
}
PANEL_INCHES = 2.4


def _save(fig: Figure, path: str | os.PathLike) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=110, metadata={"Software": None})


def image_panels(
    panels: Sequence[tuple[str, np.ndarray]],
    path: str | os.PathLike,
    cmaps: Sequence[str] | None = None,
    ncols: int | None = None,
) -> None:
    """Grid of titled grey-scale (or colour-mapped) maps on a shared [0, 1] scale."""
    import matplotlib as mpl

    n = len(panels)
    ncols = ncols or n
    nrows = -(-n // ncols)
    with mpl.rc_context(RC):
        fig = Figure(figsize=(PANEL_INCHES * ncols, PANEL_INCHES * nrows))
        for k, (title, data) in enumerate(panels):
            ax = fig.add_subplot(nrows, ncols, k + 1)
            cmap = cmaps[k] if cmaps else "gray"
            im = ax.imshow(data, cmap=cmap, vmin=0.0, vmax=1.0, interpolation="nearest")
            ax.set_title(title)
            ax.set_xticks([])
            ax.set_yticks([])
            if cmap not in (None, "gray") and np.ndim(data) == 2:
                fig.colorbar(im, ax=ax, fraction=0.046, pad=0.02)
        fig.tight_layout()
        _save(fig, path)


def pipeline_figure(image, artifact_soft, needle_soft, path) -> None:
    overlay = np.stack([image, image, image], axis=-1).astype(np.float64)
    a = np.clip(artifact_soft, 0, 1)
    n = np.clip(needle_soft, 0, 1)
    overlay[..., 0] = np.maximum(overlay[..., 0], a)
    overlay[..., 2] = np.maximum(overlay[..., 2], n)
    image_panels(
        [("input", image), ("needle soft label", needle_soft),
         ("artifact soft label", artifact_soft), ("overlay", overlay)],
        path,
        cmaps=["gray", "magma", "magma", None],
    )


def segment_figure(image, artifact, needle, uncertainty, path) -> None:
    image_panels(
        [("input", image), ("artifact mean", artifact.mean), ("artifact std", artifact.std),
         ("needle mean", needle.mean), ("needle std", needle.std), ("aleatoric trace", uncertainty)],
        path,
        cmaps=["gray", "magma", "viridis", "magma", "viridis", "viridis"],
        ncols=3,
    )


def metrics_figure(columns: Mapping[str, MetricsReport], path) -> None:
    """Grouped bars, one group per metric and one bar per report."""
    import matplotlib as mpl

    names = list(columns)
    x = np.arange(len(METRIC_NAMES))
    width = 0.8 / max(1, len(names))
    with mpl.rc_context(RC):
        fig = Figure(figsize=(6.4, 2.8))
        ax = fig.add_subplot(1, 1, 1)
        for k, name in enumerate(names):
            vals = [getattr(columns[name], m) for m in METRIC_NAMES]
            heights = [np.nan if v is None else v for v in vals]
            ax.bar(x + (k - (len(names) - 1) / 2) * width, heights, width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(METRIC_NAMES)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("value")
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
        if len(names) > 1:
            ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def compound_figure(images, artifacts, compounded, references: Mapping[str, np.ndarray], path) -> None:
    panels = [(f"view {k + 1}", im) for k, im in enumerate(images)]
    panels += [(f"artifact {k + 1}", a) for k, a in enumerate(artifacts)]
    panels.append(("compounded", compounded))
    panels += list(references.items())
    cmaps = ["gray"] * len(images) + ["magma"] * len(artifacts) + ["gray"] * (1 + len(references))
    image_panels(panels, path, cmaps=cmaps, ncols=max(len(images), 1 + len(references)))
