"""Soft-label transform: hard artifact/needle maps to artifact soft labels.

The stages are exposed individually so intermediates can be inspected:

``remove_false_positives`` -> ``y1``
``decay_map``               -> ``y21``  exponential fall-off with distance from the needle
``intensity_weight_map``    -> ``y22``  image intensity relative to the needle's brightest pixel
``combine_max``             -> ``y2``
``suppress_between_reverbs``-> soft mean, damping dark pixels between reverberation lines
``std_transform``           -> soft standard deviation
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .cluster import (
    ClusterMap,
    NeedleInstance,
    extract_needles,
    flood_fill_clusters,
    remove_false_positives,
)
from .core import PipelineConfig, ProbMap, check_same_shape

log = logging.getLogger(__name__)

__all__ = [
    "NoNeedleRegionError",
    "ClusterGeometry",
    "TransformStages",
    "cluster_geometry",
    "decay_map",
    "intensity_weight_map",
    "combine_max",
    "suppression_factor",
    "local_window_max",
    "suppress_between_reverbs",
    "std_transform",
    "transform_full",
]


class NoNeedleRegionError(ValueError):
    """No needle pixel is available to normalise image intensities."""


@dataclass(frozen=True)
class ClusterGeometry:
    """Distances of kept-cluster pixels to their assigned needle.

    ``h`` holds, for every pixel of a kept cluster, the Euclidean distance to
    the nearest pixel of the cluster's needle (NaN outside kept clusters).
    ``depth`` maps cluster id to the largest such distance within the cluster.
    """

    h: np.ndarray
    depth: dict[int, float]
    assignment: dict[int, int]
    labels: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return ~np.isnan(self.h)

    def depth_map(self) -> np.ndarray:
        d = np.full(self.h.shape, np.nan)
        for k, dk in self.depth.items():
            d[self.labels == k] = dk
        return d


def cluster_geometry(
    clusters: ClusterMap, needles: list[NeedleInstance], assignment: dict[int, int | None]
) -> ClusterGeometry:
    h = np.full(clusters.labels.shape, np.nan)
    depth: dict[int, float] = {}
    kept = {k: n for k, n in assignment.items() if n is not None}
    trees: dict[int, cKDTree] = {}
    for k, n in kept.items():
        if n not in trees:
            trees[n] = cKDTree(needles[n].pixels)
        pts = clusters.pixels(k)
        dist, _ = trees[n].query(pts, k=1)
        h[pts[:, 0], pts[:, 1]] = dist
        depth[k] = float(np.max(dist))
    return ClusterGeometry(h, depth, kept, clusters.labels)


def decay_map(y1: np.ndarray, geometry: ClusterGeometry, alpha: float) -> np.ndarray:
    """``y1 * exp(-alpha * h / d)`` inside kept clusters, 0 elsewhere.

    A cluster whose deepest pixel touches its needle (``d == 0``) has
    ``h == 0`` everywhere and is left undecayed.
    """
    y1 = np.asarray(y1, dtype=np.float64)
    check_same_shape(y1=y1, h=geometry.h)
    uncovered = (y1 > 0) & ~geometry.covered
    if uncovered.any():
        r, c = np.argwhere(uncovered)[0]
        raise RuntimeError(
            f"{int(uncovered.sum())} positive pixels have no cluster geometry (first at {r}, {c})"
        )
    d = geometry.depth_map()
    ratio = np.zeros_like(y1)
    inside = geometry.covered & (d > 0)
    ratio[inside] = geometry.h[inside] / d[inside]
    out = np.zeros_like(y1)
    cov = geometry.covered
    out[cov] = y1[cov] * np.exp(-alpha * ratio[cov])
    return out


def intensity_weight_map(
    image: np.ndarray, needle_mean: np.ndarray, y1: np.ndarray, needle_pos_thresh: float = 0.5
) -> np.ndarray:
    """Weight ``y1`` by image intensity relative to the brightest needle pixel.

    The result is capped at 1 so soft labels stay in ``[0, 1]`` when an
    artifact pixel is brighter than the needle.
    """
    image = np.asarray(image, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    check_same_shape(image=image, needle_mean=needle_mean, y1=y1)
    region = np.asarray(needle_mean) > needle_pos_thresh
    if not region.any():
        raise NoNeedleRegionError("no needle region for normalization")
    m1 = image[region].max()
    if m1 <= 0:
        raise NoNeedleRegionError("needle region is completely dark; cannot normalize")
    return np.minimum(image / m1 * y1, 1.0)


def combine_max(y21: np.ndarray, y22: np.ndarray) -> np.ndarray:
    check_same_shape(y21=y21, y22=y22)
    return np.maximum(y21, y22)


def local_window_max(image: np.ndarray, vw: int, hw: int) -> np.ndarray:
    """Max over rows ``i-vw .. i+vw-1`` and columns ``j-hw .. j+hw-1``, clipped at the border."""
    if vw < 1 or hw < 1:
        raise ValueError("vw and hw must be >= 1")
    # an even-sized window with origin 0 spans offsets [-n/2, n/2 - 1]; 'nearest'
    # padding only repeats in-window border pixels, which equals clipping for a max
    return ndimage.maximum_filter(np.asarray(image, dtype=np.float64), size=(2 * vw, 2 * hw), mode="nearest")


def suppression_factor(intensity, window_max, beta: float):
    """``1 / (1 + exp(-beta * I / m2 + beta / 2))``; uses the ``I = 0`` limit where ``m2 == 0``."""
    intensity = np.asarray(intensity, dtype=np.float64)
    window_max = np.asarray(window_max, dtype=np.float64)
    ratio = np.divide(intensity, window_max, out=np.zeros(np.broadcast(intensity, window_max).shape),
                      where=window_max > 0)
    return 1.0 / (1.0 + np.exp(-beta * ratio + beta / 2.0))


def suppress_between_reverbs(
    image: np.ndarray, y2: np.ndarray, beta: float, vw: int, hw: int
) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    y2 = np.asarray(y2, dtype=np.float64)
    check_same_shape(image=image, y2=y2)
    m2 = local_window_max(image, vw, hw)
    degenerate = (m2 <= 0) & (y2 > 0)
    if degenerate.any():
        log.warning("%d labelled pixels have an all-black window; using the I=0 limit",
                    int(degenerate.sum()))
    return y2 * suppression_factor(image, m2, beta)


def std_transform(
    mu_soft: np.ndarray,
    mu_hard: np.ndarray,
    epsilon: float = 1e-6,
    sigma_hard: np.ndarray | None = None,
) -> np.ndarray:
    """Soft standard deviation ``mu_soft / (mu_hard + eps)``.

    If *sigma_hard* is given the same ratio rescales it instead, i.e.
    ``sigma_hard * mu_soft / (mu_hard + eps)``.  Values are capped at 1.
    """
    mu_soft = np.asarray(mu_soft, dtype=np.float64)
    check_same_shape(mu_soft=mu_soft, mu_hard=mu_hard)
    out = mu_soft / (np.asarray(mu_hard, dtype=np.float64) + epsilon)
    if sigma_hard is not None:
        check_same_shape(mu_soft=mu_soft, sigma_hard=sigma_hard)
        out = out * sigma_hard
    return np.minimum(out, 1.0)


@dataclass
class TransformStages:
    """Intermediate maps of one ``transform_full`` run."""

    clusters: ClusterMap
    needles: list[NeedleInstance]
    assignment: dict[int, int | None]
    y1: np.ndarray
    y21: np.ndarray
    y22: np.ndarray
    y2: np.ndarray

    def maps(self) -> dict[str, np.ndarray]:
        return {
            "clusters": self.clusters.labels.astype(np.float64),
            "y1": self.y1,
            "y21": self.y21,
            "y22": self.y22,
            "y2": self.y2,
        }


def transform_full(
    image: np.ndarray,
    artifact: ProbMap,
    needle: ProbMap,
    cfg: PipelineConfig | None = None,
    *,
    return_stages: bool = False,
):
    """Turn hard artifact/needle probability maps into soft labels.

    Returns ``(artifact_soft, needle_soft)`` and, with ``return_stages=True``,
    a :class:`TransformStages` as a third element.  The needle map passes
    through unchanged.
    """
    cfg = cfg or PipelineConfig()
    image = np.asarray(image, dtype=np.float64)
    check_same_shape(image=image, artifact=artifact.mean, needle=needle.mean)

    clusters = flood_fill_clusters(artifact.mean, cfg.vt, cfg.ht)
    needles = extract_needles(needle.mean, cfg.needle_pos_thresh)
    y1, assignment = remove_false_positives(
        artifact.mean, clusters, needles, cfg.t_fp, literal=cfg.literal_fp_rule
    )
    if y1.any():
        geometry = cluster_geometry(clusters, needles, assignment)
        y21 = decay_map(y1, geometry, cfg.alpha)
        y22 = intensity_weight_map(image, needle.mean, y1, cfg.needle_pos_thresh)
    else:
        # nothing survived: no needle normalisation needed
        y21 = np.zeros_like(y1)
        y22 = np.zeros_like(y1)
    y2 = combine_max(y21, y22)
    mu_soft = suppress_between_reverbs(image, y2, cfg.beta, cfg.vw, cfg.hw)
    sigma_soft = std_transform(
        mu_soft, artifact.mean, cfg.epsilon,
        sigma_hard=artifact.std if cfg.std_uses_hard_std else None,
    )
    artifact_soft = ProbMap(mu_soft, sigma_soft)
    needle_soft = needle
    if return_stages:
        stages = TransformStages(clusters, needles, assignment, y1, y21, y22, y2)
        return artifact_soft, needle_soft, stages
    return artifact_soft, needle_soft
