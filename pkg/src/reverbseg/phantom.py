"""Synthetic ultrasound phantom with needles, reverberations and region labels.

Each needle is a bright near-horizontal streak.  Its reverberations are copies
of the streak at depths ``row + m * spacing`` (``m = 1..count``) whose
intensity falls off as ``brightness * exp(-alpha_true * m / count)``.  The
background is low-pass filtered multiplicative speckle, optionally with dark
elliptical vessels and additive Gaussian noise.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import check_raster
from .metrics import RegionLabels

__all__ = [
    "NeedleSpec",
    "VesselSpec",
    "PhantomSpec",
    "Phantom",
    "simulate",
    "random_spec",
    "make_overlabel",
    "disk",
]


@dataclass(frozen=True)
class NeedleSpec:
    row: int
    col_start: int
    length: int
    brightness: float = 0.95
    spacing: int = 6
    count: int = 3
    alpha_true: float = 0.8
    thickness: int = 3
    slope: float = 0.0  # rows per column

    def row_offsets(self) -> np.ndarray:
        """Per-column row shift of the streak relative to ``row``."""
        return np.rint(self.slope * np.arange(self.length)).astype(int)

    def line_value(self, m: int) -> float:
        """Noise-free intensity of reverberation line *m* (``m = 0`` is the needle)."""
        return self.brightness * float(np.exp(-self.alpha_true * m / self.count)) if m else self.brightness


@dataclass(frozen=True)
class VesselSpec:
    row: float
    col: float
    radius_rows: float
    radius_cols: float
    darkness: float = 0.8


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 256
    width: int = 256
    needles: tuple[NeedleSpec, ...] = ()
    vessels: tuple[VesselSpec, ...] = ()
    background: float = 0.12
    contrast: float = 0.35
    speckle_sigma: float = 1.0
    noise: float = 0.0
    label_margin: int = 3
    label_trim: int = 2

    def __post_init__(self):
        object.__setattr__(self, "needles", tuple(
            n if isinstance(n, NeedleSpec) else NeedleSpec(**n) for n in self.needles))
        object.__setattr__(self, "vessels", tuple(
            v if isinstance(v, VesselSpec) else VesselSpec(**v) for v in self.vessels))
        self.validate()

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")
        if not 0 <= self.background <= 1 or self.contrast < 0 or self.noise < 0:
            raise ValueError("background must lie in [0, 1]; contrast and noise must be >= 0")
        for i, n in enumerate(self.needles):
            if not 0 < n.brightness <= 1:
                raise ValueError(f"needle {i}: brightness must lie in (0, 1]")
            if n.spacing < 2 or n.count < 1 or n.thickness < 1 or n.length < 1:
                raise ValueError(f"needle {i}: need spacing >= 2, count >= 1, thickness >= 1, length >= 1")
            if n.thickness >= n.spacing:
                raise ValueError(f"needle {i}: thickness must be smaller than spacing")
            offs = n.row_offsets()
            top = n.row + offs.min()
            bottom = n.row + offs.max() + n.count * n.spacing + n.thickness
            if top < 0 or bottom > self.height:
                raise ValueError(f"needle {i}: reverberations leave the image rows")
            if n.col_start < 0 or n.col_start + n.length > self.width:
                raise ValueError(f"needle {i}: streak leaves the image columns")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PhantomSpec":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Phantom:
    image: np.ndarray
    gt_artifact_soft: np.ndarray
    gt_needle: np.ndarray
    labels: RegionLabels
    # per needle: the needle mask (index 0) followed by each reverberation line
    line_masks: list[list[np.ndarray]] = field(repr=False, default_factory=list)


def _line_mask(shape, n: NeedleSpec, m: int, trim: int = 0) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    offs = n.row_offsets()
    cols = np.arange(n.col_start, n.col_start + n.length)
    keep = slice(trim, n.length - trim) if trim else slice(None)
    for c, o in zip(cols[keep], offs[keep]):
        r0 = n.row + o + m * n.spacing
        mask[r0 : r0 + n.thickness, c] = True
    return mask


def _gap_mask(shape, n: NeedleSpec, m: int, trim: int) -> np.ndarray:
    # rows strictly between line m and line m + 1
    mask = np.zeros(shape, dtype=bool)
    offs = n.row_offsets()
    cols = np.arange(n.col_start, n.col_start + n.length)
    for c, o in zip(cols[trim : n.length - trim], offs[trim : n.length - trim]):
        r0 = n.row + o + m * n.spacing + n.thickness
        mask[r0 : n.row + o + (m + 1) * n.spacing, c] = True
    return mask


def disk(radius: int) -> np.ndarray:
    """Boolean structuring element of offsets with Euclidean length <= radius."""
    r = int(radius)
    dr, dc = np.mgrid[-r : r + 1, -r : r + 1]
    return dr**2 + dc**2 <= r * r


def _speckle(rng: np.random.Generator, shape, contrast: float, sigma: float) -> np.ndarray:
    if contrast == 0:
        return np.ones(shape)
    field_ = rng.standard_normal(shape)
    if sigma > 0:
        field_ = ndimage.gaussian_filter(field_, sigma, mode="reflect")
    field_ = (field_ - field_.mean()) / (field_.std() or 1.0)
    return np.clip(1.0 + contrast * field_, 0.0, None)


def simulate(spec: PhantomSpec, seed: int = 0) -> Phantom:
    """Render a phantom image, its ground-truth maps and region labels."""
    spec.validate()
    rng = np.random.default_rng(seed)
    shape = (spec.height, spec.width)

    tissue = np.full(shape, spec.background)
    if spec.vessels:
        rr, cc = np.mgrid[: spec.height, : spec.width]
        for v in spec.vessels:
            inside = ((rr - v.row) / v.radius_rows) ** 2 + ((cc - v.col) / v.radius_cols) ** 2 <= 1
            tissue[inside] *= 1.0 - v.darkness

    artifact = np.zeros(shape)
    needle = np.zeros(shape)
    line_masks = []
    for n in spec.needles:
        masks = [_line_mask(shape, n, m) for m in range(n.count + 1)]
        line_masks.append(masks)
        needle[masks[0]] = np.maximum(needle[masks[0]], n.brightness)
        for m in range(1, n.count + 1):
            artifact[masks[m]] = np.maximum(artifact[masks[m]], n.line_value(m))

    structure = np.maximum(needle, artifact)
    image = (tissue + structure) * _speckle(rng, shape, spec.contrast, spec.speckle_sigma)
    if spec.noise > 0:
        image = image + spec.noise * rng.standard_normal(shape)
    image = np.clip(image, 0.0, 1.0)

    labels = _region_labels(spec, shape)
    gt_needle = (needle > 0).astype(np.float64)
    return Phantom(image, artifact, gt_needle, labels, line_masks)


def _region_labels(spec: PhantomSpec, shape) -> RegionLabels:
    trim = spec.label_trim
    empty = lambda: np.zeros(shape, dtype=bool)  # noqa: E731
    out = {name: empty() for name in (
        "possible_needle", "possible_artifact", "first_reverb", "second_reverb",
        "non_artifact_gap", "needle_confident", "fuzzy_artifact")}
    grow = disk(spec.label_margin)
    for n in spec.needles:
        needle_px = _line_mask(shape, n, 0)
        out["possible_needle"] |= ndimage.binary_dilation(needle_px, grow)
        out["needle_confident"] |= _line_mask(shape, n, 0, trim)
        span = empty()
        offs = n.row_offsets()
        for c, o in zip(range(n.col_start, n.col_start + n.length), offs):
            first = n.row + o + n.spacing
            span[first : n.row + o + n.count * n.spacing + n.thickness, c] = True
        out["possible_artifact"] |= ndimage.binary_dilation(span, grow)
        out["first_reverb"] |= _line_mask(shape, n, 1, trim)
        if n.count >= 2:
            out["second_reverb"] |= _line_mask(shape, n, 2, trim)
            out["non_artifact_gap"] |= _gap_mask(shape, n, 1, trim)
        if n.count >= 3:
            out["fuzzy_artifact"] |= _line_mask(shape, n, n.count, trim)
    out["non_artifact_gap"] &= ~(out["first_reverb"] | out["second_reverb"])
    return RegionLabels(**out)


def random_spec(rng: np.random.Generator, height: int = 256, width: int = 256, **overrides) -> PhantomSpec:
    """Draw a one-needle phantom layout at a random position."""
    spacing = overrides.pop("spacing", 6)
    count = int(rng.integers(3, 5))
    length = int(rng.integers(width * 3 // 10, width * 6 // 10))
    col_start = int(rng.integers(0, width - length))
    max_row = height - count * spacing - 4
    row = int(rng.integers(height // 8, max(height // 8 + 1, min(max_row, height // 2))))
    needle = NeedleSpec(
        row=row,
        col_start=col_start,
        length=length,
        brightness=float(rng.uniform(0.85, 1.0)),
        spacing=spacing,
        count=count,
        alpha_true=float(rng.uniform(0.6, 1.0)),
    )
    return PhantomSpec(height=height, width=width, needles=(needle,), **overrides)


def make_overlabel(
    gt_artifact_soft: np.ndarray, gt_needle: np.ndarray, dilation: int = 0, infill: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Mimic permissive annotation: thresholded ground truth, optionally infilled and dilated.

    With *infill* each column's artifact labels are filled solid from the
    first to the last labelled row.  Dilation uses a Euclidean disk.
    """
    if dilation < 0:
        raise ValueError("dilation must be >= 0")
    art = check_raster(gt_artifact_soft, "gt_artifact_soft") > 0
    ndl = check_raster(gt_needle, "gt_needle") > 0
    if infill:
        rows = np.arange(art.shape[0])[:, None]
        has = art.any(axis=0)
        first = np.where(has, art.argmax(axis=0), art.shape[0])
        last = np.where(has, art.shape[0] - 1 - art[::-1].argmax(axis=0), -1)
        art = (rows >= first) & (rows <= last)
    if dilation:
        se = disk(dilation)
        art = ndimage.binary_dilation(art, se)
        ndl = ndimage.binary_dilation(ndl, se)
    return art.astype(np.float64), ndl.astype(np.float64)
