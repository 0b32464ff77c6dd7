"""Probabilistic segmentation plumbing: segmenters, soft-label loss, uncertainty.

A segmenter is anything with a ``segment(image, seed)`` method returning
``(artifact, needle)`` :class:`~reverbseg.core.ProbMap` pairs; repeated calls
with different seeds act as samples from its predictive distribution.
:class:`BaselineSegmenter` is a classical ridge detector that fills this role
so the pipeline runs without a trained network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy import ndimage

from .core import ProbMap, check_raster, check_same_shape

__all__ = [
    "Segmenter",
    "BaselineParams",
    "BaselineSegmenter",
    "baseline_segment",
    "segment_ensemble",
    "class_probabilities",
    "aleatoric_uncertainty",
    "weighted_mse_loss",
    "prune_labels",
]


class Segmenter(Protocol):
    def segment(self, image: np.ndarray, seed: int) -> tuple[ProbMap, ProbMap]: ...


@dataclass(frozen=True)
class BaselineParams:
    """Knobs of the ridge-detecting baseline.

    smooth_cols:   horizontal box-filter width applied before detection
    quantile:      brightness quantile a ridge pixel must exceed
    min_rel:       ridge pixels must also exceed this fraction of the image max
    ridge_rows:    half-height of the vertical window for the local-maximum test
    ridge_ratio:   fraction of the vertical window max a ridge pixel must reach
    close_cols:    width of the closing element that fills speckle holes
    min_length:    minimum horizontal extent (pixels) of a ridge component
    needle_rel:    a needle's mean brightness must reach this fraction of the brightest ridge
    overlap:       column-overlap fraction for one ridge to count as "above" another
    runs:          jittered detections averaged into the mean/std maps
    jitter:        relative amplitude of the threshold jitter
    """

    smooth_cols: int = 5
    quantile: float = 0.9
    min_rel: float = 0.3
    ridge_rows: int = 2
    ridge_ratio: float = 0.75
    close_cols: int = 5
    min_length: int = 8
    needle_rel: float = 0.85
    overlap: float = 0.5
    runs: int = 8
    jitter: float = 0.1


def _detect(smoothed: np.ndarray, vmax: np.ndarray, base_thr: float, p: BaselineParams,
            scale: float, ratio: float) -> tuple[np.ndarray, np.ndarray]:
    ridge = (smoothed > base_thr * scale) & (smoothed >= ratio * vmax)
    # fill speckle holes; a (3, w) element cannot bridge gaps of 3+ rows
    ridge = ndimage.binary_closing(ridge, structure=np.ones((3, p.close_cols), dtype=bool))
    labels, n = ndimage.label(ridge, structure=np.ones((3, 3), dtype=bool))
    needle = np.zeros(smoothed.shape, dtype=bool)
    artifact = np.zeros(smoothed.shape, dtype=bool)
    if n == 0:
        return artifact, needle
    objs = ndimage.find_objects(labels)
    comps = []
    for idx, sl in enumerate(objs, 1):
        c0, c1 = sl[1].start, sl[1].stop
        if c1 - c0 < p.min_length:
            continue
        mask = labels == idx
        comps.append((idx, sl[0].start, c0, c1, float(smoothed[mask].mean()), mask))
    if not comps:
        return artifact, needle
    brightest = max(c[4] for c in comps)
    for idx, top, c0, c1, level, mask in comps:
        shadowed = False
        for jdx, top2, d0, d1, _, _ in comps:
            if jdx == idx or top2 >= top:
                continue
            inter = min(c1, d1) - max(c0, d0)
            if inter > p.overlap * min(c1 - c0, d1 - d0):
                shadowed = True
                break
        if not shadowed and level >= p.needle_rel * brightest:
            needle |= mask
        else:
            artifact |= mask
    return artifact, needle


def baseline_segment(
    image: np.ndarray, params: BaselineParams | None = None, seed: int = 0
) -> tuple[ProbMap, ProbMap]:
    """Detect bright horizontal ridges; the shallowest bright ones are needles.

    Each of ``params.runs`` detections uses a seed-jittered threshold; the
    mean and population std of the binary outcomes form the returned maps.
    Deterministic for a given ``(image, params, seed)``.
    """
    p = params or BaselineParams()
    image = check_raster(image, "image")
    smoothed = ndimage.uniform_filter1d(image, size=p.smooth_cols, axis=1, mode="nearest")
    vmax = ndimage.maximum_filter1d(smoothed, size=2 * p.ridge_rows + 1, axis=0, mode="nearest")
    base_thr = max(float(np.quantile(smoothed, p.quantile)), p.min_rel * float(smoothed.max()))
    rng = np.random.default_rng(seed)
    art_runs = np.zeros((p.runs,) + image.shape)
    ndl_runs = np.zeros((p.runs,) + image.shape)
    if smoothed.max() <= 0:
        zero = ProbMap.deterministic(np.zeros(image.shape))
        return zero, zero
    for r in range(p.runs):
        u1, u2 = rng.uniform(-1.0, 1.0, size=2)
        a, n = _detect(smoothed, vmax, base_thr, p, 1.0 + p.jitter * u1,
                       min(1.0, p.ridge_ratio * (1.0 + p.jitter * u2)))
        art_runs[r], ndl_runs[r] = a, n
    return (
        ProbMap(art_runs.mean(axis=0), art_runs.std(axis=0)),
        ProbMap(ndl_runs.mean(axis=0), ndl_runs.std(axis=0)),
    )


@dataclass(frozen=True)
class BaselineSegmenter:
    params: BaselineParams = BaselineParams()

    def segment(self, image: np.ndarray, seed: int) -> tuple[ProbMap, ProbMap]:
        return baseline_segment(image, self.params, seed)


def class_probabilities(artifact_mean: np.ndarray, needle_mean: np.ndarray) -> np.ndarray:
    """Stack ``(background, artifact, needle)`` per-pixel probabilities, shape ``(3, H, W)``.

    Where artifact and needle together exceed 1 they are rescaled to sum to 1.
    """
    a = np.asarray(artifact_mean, dtype=np.float64)
    n = np.asarray(needle_mean, dtype=np.float64)
    check_same_shape(artifact_mean=a, needle_mean=n)
    total = a + n
    scale = np.where(total > 1.0, 1.0 / np.where(total > 0, total, 1.0), 1.0)
    a, n = a * scale, n * scale
    return np.stack([np.clip(1.0 - a - n, 0.0, 1.0), a, n])


def segment_ensemble(segmenter: Segmenter, image: np.ndarray, T: int = 8, seed: int = 0):
    """Draw ``T`` samples (seeds ``seed .. seed + T - 1``) and reduce them.

    Returns ``(artifact, needle, prob_stack)``: the per-pixel mean and
    population std of the sample means, and a ``(T, 3, H, W)`` array of
    per-sample class probabilities for :func:`aleatoric_uncertainty`.
    """
    if T < 2:
        raise ValueError("an ensemble needs at least 2 samples")
    arts, ndls = [], []
    for t in range(T):
        a, n = segmenter.segment(image, seed + t)
        arts.append(a.mean)
        ndls.append(n.mean)
    arts = np.stack(arts)
    ndls = np.stack(ndls)
    stack = np.stack([class_probabilities(a, n) for a, n in zip(arts, ndls)])
    return (
        ProbMap(arts.mean(axis=0), arts.std(axis=0)),
        ProbMap(ndls.mean(axis=0), ndls.std(axis=0)),
        stack,
    )


def aleatoric_uncertainty(prob_stack: Sequence[np.ndarray] | np.ndarray, tol: float = 1e-6):
    """Diagonal of ``mean_t(diag(p_t) - p_t p_t^T)`` per pixel.

    *prob_stack* has shape ``(T, C, H, W)``.  Returns ``(variances, trace)``
    with shapes ``(C, H, W)`` and ``(H, W)``.
    """
    p = np.asarray(prob_stack, dtype=np.float64)
    if p.ndim != 4 or p.shape[0] < 1:
        raise ValueError("prob_stack must have shape (T, C, H, W) with T >= 1")
    if np.abs(p.sum(axis=1) - 1.0).max(initial=0.0) > tol:
        raise ValueError("class probabilities must sum to 1 at every pixel")
    variances = (p - p * p).mean(axis=0)
    return variances, variances.sum(axis=0)


def weighted_mse_loss(
    pred_mean: np.ndarray,
    label_mean: np.ndarray,
    label_std: np.ndarray,
    gamma: float = 0.05,
    k_weight: float = 0.5,
) -> tuple[float, int]:
    """Thresholded, uncertainty-weighted squared error.

    Only pixels where prediction or label exceeds *gamma* count.  Residuals
    smaller than the label's std are down-weighted by *k_weight*.
    Returns ``(loss, active_count)``.
    """
    pred = np.asarray(pred_mean, dtype=np.float64)
    label = np.asarray(label_mean, dtype=np.float64)
    std = np.asarray(label_std, dtype=np.float64)
    check_same_shape(pred_mean=pred, label_mean=label, label_std=std)
    active = (pred > gamma) | (label > gamma)
    err = np.abs(pred - label)
    w = np.where(err < std, k_weight, 1.0)
    return float(np.sum((w * err * err)[active])), int(active.sum())


def prune_labels(
    hard_labels: np.ndarray, uncertainty: np.ndarray, patch: int = 16, quantile: float = 0.5
) -> np.ndarray:
    """Drop labelled pixels whose uncertainty is high relative to their block.

    Uncertainty is restricted to labelled pixels and inverted against its
    maximum there.  Within each ``patch x patch`` block a labelled pixel
    survives if its inverted value reaches the ``ceil(quantile * n)``-th
    smallest among the block's ``n`` labelled pixels.
    """
    labels = np.asarray(hard_labels) > 0.5
    u = np.asarray(uncertainty, dtype=np.float64)
    check_same_shape(hard_labels=labels, uncertainty=u)
    if patch < 1 or not 0 < quantile < 1:
        raise ValueError("patch must be >= 1 and quantile in (0, 1)")
    out = labels.copy()
    if not labels.any():
        return out.astype(np.float64)
    inverse = u[labels].max() - u
    height, width = labels.shape
    for r0 in range(0, height, patch):
        for c0 in range(0, width, patch):
            block = (slice(r0, r0 + patch), slice(c0, c0 + patch))
            sel = labels[block]
            if not sel.any():
                continue
            vals = np.sort(inverse[block][sel])
            thr = vals[max(1, math.ceil(quantile * len(vals))) - 1]
            out[block] = sel & (inverse[block] >= thr)
    return out.astype(np.float64)
