"""Artifact-aware compounding of co-registered views."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import check_same_shape

__all__ = [
    "confidence_map",
    "compound_two",
    "compound_many",
    "compound_average",
    "compound_max",
]


def confidence_map(artifact_soft: np.ndarray) -> np.ndarray:
    """Fraction of each pixel not corrupted by artifact: ``1 - artifact_soft``."""
    return 1.0 - np.asarray(artifact_soft, dtype=np.float64)


def compound_two(i1, i2, c1, c2, t: float = 0.1) -> np.ndarray:
    """Take the clearly more confident view, else the brighter one.

    Strict inequalities: a confidence gap of exactly *t* falls through to the max.
    """
    i1, i2, c1, c2 = (np.asarray(a, dtype=np.float64) for a in (i1, i2, c1, c2))
    check_same_shape(i1=i1, i2=i2, c1=c1, c2=c2)
    if t < 0:
        raise ValueError("t must be non-negative")
    return np.where(c1 - c2 > t, i1, np.where(c2 - c1 > t, i2, np.maximum(i1, i2)))


def compound_many(
    images: Sequence[np.ndarray], artifacts: Sequence[np.ndarray], t: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    """Compound any number of views.

    Per pixel: if the most confident view beats the runner-up by more than *t*
    its intensity is used; otherwise the brightest of the views whose
    confidence is within *t* of the best.  Returns ``(image, source)`` where
    *source* holds the index of the view each pixel came from.
    """
    if len(images) != len(artifacts):
        raise ValueError("need one artifact map per view")
    if len(images) < 2:
        raise ValueError("compounding needs at least 2 views")
    if t < 0:
        raise ValueError("t must be non-negative")
    images = [np.asarray(a, dtype=np.float64) for a in images]
    conf = [confidence_map(a) for a in artifacts]
    check_same_shape(**{f"view{k}": a for k, a in enumerate(images)},
                     **{f"artifact{k}": c for k, c in enumerate(conf)})
    stack, conf = np.stack(images), np.stack(conf)

    best = conf.max(axis=0)
    candidates = best - conf <= t
    # a single candidate means the best view leads everyone else by more than t
    masked = np.where(candidates, stack, -np.inf)
    source = masked.argmax(axis=0)
    out = np.take_along_axis(stack, source[None], axis=0)[0]
    return out, source


def compound_average(images: Sequence[np.ndarray]) -> np.ndarray:
    return np.mean(np.stack(images), axis=0)


def compound_max(images: Sequence[np.ndarray]) -> np.ndarray:
    return np.max(np.stack(images), axis=0)
