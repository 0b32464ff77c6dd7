"""Artifact clustering and needle-anchored false-positive removal."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .core import check_same_shape

__all__ = [
    "ClusterMap",
    "NeedleInstance",
    "ellipse_offsets",
    "flood_fill_clusters",
    "extract_needles",
    "remove_false_positives",
]


@dataclass(frozen=True)
class ClusterMap:
    labels: np.ndarray  # int32, 0 = background, 1..count = cluster id
    count: int

    def pixels(self, cluster_id: int) -> np.ndarray:
        """(n, 2) array of (row, col) for one cluster, in row-major order."""
        return np.argwhere(self.labels == cluster_id)


@dataclass(frozen=True)
class NeedleInstance:
    pixels: np.ndarray  # (n, 2) int array of (row, col)

    @property
    def top_row(self) -> int:
        return int(self.pixels[:, 0].min())

    def __len__(self):
        return len(self.pixels)


def ellipse_offsets(vt: int, ht: int) -> np.ndarray:
    """Integer (drow, dcol) offsets with (drow/vt)**2 + (dcol/ht)**2 < 1, excluding (0, 0)."""
    dr, dc = np.mgrid[-vt : vt + 1, -ht : ht + 1]
    inside = (dr / vt) ** 2 + (dc / ht) ** 2 < 1
    inside[vt, ht] = False
    return np.stack([dr[inside], dc[inside]], axis=1)


def flood_fill_clusters(artifact_mean: np.ndarray, vt: int, ht: int) -> ClusterMap:
    """Group positive pixels into clusters connected by elliptical-neighbourhood steps.

    Clusters are numbered in order of their first pixel in a row-major scan.
    Uses an explicit stack, so arbitrarily large blobs are fine.
    """
    if vt < 1 or ht < 1:
        raise ValueError("vt and ht must be >= 1")
    positive = np.asarray(artifact_mean) > 0
    height, width = positive.shape
    labels = np.zeros(positive.shape, dtype=np.int32)
    offsets = ellipse_offsets(vt, ht)
    k = 0
    for i, j in np.argwhere(positive):
        if labels[i, j]:
            continue
        k += 1
        labels[i, j] = k
        stack = [(i, j)]
        while stack:
            x, y = stack.pop()
            rr = offsets[:, 0] + x
            cc = offsets[:, 1] + y
            ok = (rr >= 0) & (rr < height) & (cc >= 0) & (cc < width)
            rr, cc = rr[ok], cc[ok]
            fresh = positive[rr, cc] & (labels[rr, cc] == 0)
            rr, cc = rr[fresh], cc[fresh]
            labels[rr, cc] = k
            stack.extend(zip(rr.tolist(), cc.tolist()))
    return ClusterMap(labels, k)


def extract_needles(needle_mean: np.ndarray, thresh: float = 0.5) -> list[NeedleInstance]:
    """Split pixels above *thresh* into 8-connected needle instances (row-major order)."""
    mask = np.asarray(needle_mean) > thresh
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return []
    rows, cols = np.nonzero(labels)
    ids = labels[rows, cols]
    # stable sort keeps row-major order within each instance
    order = np.argsort(ids, kind="stable")
    coords = np.stack([rows[order], cols[order]], axis=1)
    splits = np.cumsum(np.bincount(ids, minlength=n + 1)[1:])[:-1]
    return [NeedleInstance(p) for p in np.split(coords, splits)]


def _nearest_distance(points: np.ndarray, tree: cKDTree) -> np.ndarray:
    dist, _ = tree.query(points, k=1)
    return np.asarray(dist, dtype=np.float64)


def remove_false_positives(
    artifact_mean: np.ndarray,
    clusters: ClusterMap,
    needles: list[NeedleInstance],
    t_fp: float,
    *,
    literal: bool = False,
) -> tuple[np.ndarray, dict[int, int | None]]:
    """Keep only artifact clusters caused by a needle closely above them.

    A cluster is kept when some needle instance has a pixel row strictly above
    one of the cluster's pixels and lies within Euclidean distance ``t_fp`` of
    the cluster.  Kept clusters are assigned the nearest qualifying needle
    (ties go to the needle with the smaller top row, then the lower index).

    With ``literal=True`` all needle pixels are treated as one set, and a
    cluster is kept only if one of its pixels lies below every needle pixel
    and within ``t_fp`` of some needle pixel.  The assignment is then the
    nearest instance to that set.

    Returns ``(y1, assignment)`` where ``assignment`` maps every cluster id to
    a needle index or ``None`` for removed clusters.
    """
    artifact_mean = np.asarray(artifact_mean, dtype=np.float64)
    check_same_shape(artifact_mean=artifact_mean, clusters=clusters.labels)
    y1 = np.zeros_like(artifact_mean)
    assignment: dict[int, int | None] = {k: None for k in range(1, clusters.count + 1)}
    if not needles or clusters.count == 0:
        return y1, assignment

    trees = [cKDTree(n.pixels) for n in needles]
    tops = [n.top_row for n in needles]
    if literal:
        all_pixels = np.concatenate([n.pixels for n in needles])
        all_tree = cKDTree(all_pixels)
        deepest_needle_row = int(all_pixels[:, 0].max())

    for k in range(1, clusters.count + 1):
        pts = clusters.pixels(k)
        if literal:
            below = pts[:, 0] > deepest_needle_row
            if not below.any():
                continue
            if not (_nearest_distance(pts[below], all_tree) < t_fp).any():
                continue
            candidates = range(len(needles))
            dists = [_nearest_distance(pts, trees[n]).min() for n in candidates]
            best = min(candidates, key=lambda n: (dists[n], tops[n], n))
        else:
            best, best_key = None, None
            for n, tree in enumerate(trees):
                if not (pts[:, 0] > tops[n]).any():
                    continue
                dist = _nearest_distance(pts, tree).min()
                if dist >= t_fp:
                    continue
                key = (dist, tops[n], n)
                if best_key is None or key < best_key:
                    best, best_key = n, key
            if best is None:
                continue
        assignment[k] = best
        mask = clusters.labels == k
        y1[mask] = artifact_mean[mask]
    return y1, assignment
