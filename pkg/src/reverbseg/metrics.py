"""Region-annotated evaluation of artifact and needle soft labels."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .core import (
    FormatError,
    PipelineConfig,
    check_same_shape,
    read_keyvalue,
    read_raster_u8,
    write_raster_u8,
)

__all__ = [
    "REGION_CLASSES",
    "METRIC_NAMES",
    "RegionLabels",
    "MetricsReport",
    "compute_metrics",
    "aggregate_reports",
    "format_table",
]

REGION_CLASSES = (
    "possible_needle",
    "possible_artifact",
    "first_reverb",
    "second_reverb",
    "non_artifact_gap",
    "needle_confident",
    "fuzzy_artifact",
)

METRIC_NAMES = ("FAR", "SAR", "NR", "FAA", "SAA", "AFPR", "NFPR", "AFPA", "NFPA", "NAA", "IFAA")

MANIFEST = "manifest.txt"


@dataclass(frozen=True)
class RegionLabels:
    """The seven annotation masks of one test image."""

    possible_needle: np.ndarray
    possible_artifact: np.ndarray
    first_reverb: np.ndarray
    second_reverb: np.ndarray
    non_artifact_gap: np.ndarray
    needle_confident: np.ndarray
    fuzzy_artifact: np.ndarray

    def __post_init__(self):
        for name in REGION_CLASSES:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=bool))
        check_same_shape(**self.masks())

    def masks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in REGION_CLASSES}

    @property
    def shape(self) -> tuple[int, int]:
        return self.possible_needle.shape

    def violations(self) -> list[str]:
        """Names of the containment/disjointness rules the masks break."""
        out = []
        for sub in ("first_reverb", "second_reverb", "fuzzy_artifact"):
            if (getattr(self, sub) & ~self.possible_artifact).any():
                out.append(f"{sub} not inside possible_artifact")
        if (self.needle_confident & ~self.possible_needle).any():
            out.append("needle_confident not inside possible_needle")
        if (self.non_artifact_gap & (self.first_reverb | self.second_reverb)).any():
            out.append("non_artifact_gap overlaps a reverberation")
        return out

    def save(self, directory: str | os.PathLike) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / MANIFEST, "w", encoding="utf-8") as fh:
            for name in REGION_CLASSES:
                fname = f"{name}.pgm"
                write_raster_u8(getattr(self, name).astype(np.float64), directory / fname)
                fh.write(f"{name} = {fname}\n")

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "RegionLabels":
        directory = Path(directory)
        manifest = read_keyvalue(directory / MANIFEST)
        missing = [name for name in REGION_CLASSES if name not in manifest]
        if missing:
            raise FormatError(f"{directory / MANIFEST}: missing classes {', '.join(missing)}")
        return cls(**{name: read_raster_u8(directory / manifest[name]) > 0.5 for name in REGION_CLASSES})


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation metrics; ``None`` marks a metric whose region is empty."""

    FAR: float | None = None
    SAR: float | None = None
    NR: float | None = None
    FAA: float | None = None
    SAA: float | None = None
    AFPR: float | None = None
    NFPR: float | None = None
    AFPA: float | None = None
    NFPA: float | None = None
    NAA: float | None = None
    IFAA: float | None = None

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.as_dict().items() if v is not None)

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            key, _, value = (s.strip() for s in line.partition("="))
            if key not in METRIC_NAMES:
                raise FormatError(f"unknown metric {key!r}")
            values[key] = float(value)
        return cls(**values)

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MetricsReport":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def _rate(positive: np.ndarray, region: np.ndarray) -> float | None:
    n = int(region.sum())
    return None if n == 0 else float((positive & region).sum()) / n


def _mean(values: np.ndarray, where: np.ndarray) -> float | None:
    return float(values[where].mean()) if where.any() else None


def compute_metrics(
    artifact_soft: np.ndarray,
    needle_soft: np.ndarray,
    labels: RegionLabels,
    cfg: PipelineConfig | None = None,
) -> MetricsReport:
    """Evaluate soft labels against region annotations.

    Rates count positives (artifact > ``artifact_pos_thresh``, needle >
    ``needle_pos_thresh``) over a region's pixels.  FAA, SAA, IFAA, AFPA and
    NFPA average the soft value over the positives of their region; NAA
    averages every pixel of the gap region.  False positives are positives
    outside the matching "possible" region.
    """
    cfg = cfg or PipelineConfig()
    art = np.asarray(artifact_soft, dtype=np.float64)
    ndl = np.asarray(needle_soft, dtype=np.float64)
    check_same_shape(artifact_soft=art, needle_soft=ndl, labels=labels.possible_needle)
    art_pos = art > cfg.artifact_pos_thresh
    ndl_pos = ndl > cfg.needle_pos_thresh
    outside_art = ~labels.possible_artifact
    outside_ndl = ~labels.possible_needle
    return MetricsReport(
        FAR=_rate(art_pos, labels.first_reverb),
        SAR=_rate(art_pos, labels.second_reverb),
        NR=_rate(ndl_pos, labels.needle_confident),
        FAA=_mean(art, art_pos & labels.first_reverb),
        SAA=_mean(art, art_pos & labels.second_reverb),
        AFPR=_rate(art_pos, outside_art),
        NFPR=_rate(ndl_pos, outside_ndl),
        AFPA=_mean(art, art_pos & outside_art),
        NFPA=_mean(ndl, ndl_pos & outside_ndl),
        NAA=_mean(art, labels.non_artifact_gap),
        IFAA=_mean(art, art_pos & labels.fuzzy_artifact),
    )


def aggregate_reports(reports: list[MetricsReport]) -> MetricsReport:
    """Per-metric mean over the reports in which the metric is present."""
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    out = {}
    for name in METRIC_NAMES:
        present = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        out[name] = float(np.mean(present)) if present else None
    return MetricsReport(**out)


def format_table(columns: dict[str, MetricsReport], digits: int = 3) -> str:
    """Render reports side by side, one metric per row."""
    names = list(columns)
    width = max([len(n) for n in names] + [digits + 2])
    lines = [" " * 5 + " ".join(n.rjust(width) for n in names)]
    for metric in METRIC_NAMES:
        cells = []
        for n in names:
            v = getattr(columns[n], metric)
            cells.append(("-" if v is None else f"{v:.{digits}f}").rjust(width))
        lines.append(metric.ljust(5) + " ".join(cells))
    return "\n".join(lines)
