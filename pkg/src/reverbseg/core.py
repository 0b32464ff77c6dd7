"""Shared raster types, pipeline configuration and file I/O.

Rasters are plain 2-D ``float64`` numpy arrays (row-major, ``shape ==
(height, width)``) holding values in ``[0, 1]``.  Two on-disk formats are
supported:

* binary 8-bit PGM (``P5``, maxval 255) for images and binary masks;
* RF32, an ASCII header ``"RF32 <width> <height>\\n"`` followed by
  ``width * height`` little-endian float32 values, for real-valued maps.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from typing import Any, Mapping

import numpy as np

__all__ = [
    "FormatError",
    "ProbMap",
    "PipelineConfig",
    "check_raster",
    "check_same_shape",
    "read_raster_u8",
    "write_raster_u8",
    "read_raster_f32",
    "write_raster_f32",
    "read_keyvalue",
    "write_keyvalue",
]


class FormatError(ValueError):
    """Malformed or inconsistent input data (bad file, wrong shape, ...)."""


def check_raster(a, name: str = "raster", *, tol: float = 0.0) -> np.ndarray:
    """Return *a* as a 2-D float64 array, raising FormatError if it is not a valid raster."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"{name}: expected a 2-D raster, got shape {arr.shape}")
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < -tol or arr.max() > 1.0 + tol):
        raise FormatError(f"{name}: values must lie in [0, 1]")
    return arr


def check_same_shape(**rasters: np.ndarray) -> tuple[int, int]:
    shapes = {name: np.shape(r) for name, r in rasters.items()}
    distinct = set(shapes.values())
    if len(distinct) != 1:
        detail = ", ".join(f"{k}={v}" for k, v in shapes.items())
        raise FormatError(f"dimension mismatch: {detail}")
    return distinct.pop()


@dataclass(frozen=True)
class ProbMap:
    """Per-pixel predictive mean and standard deviation for one class."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = check_raster(self.mean, "mean")
        std = np.asarray(self.std, dtype=np.float64)
        check_same_shape(mean=mean, std=std)
        if std.size and std.min() < 0:
            raise FormatError("std: values must be non-negative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def deterministic(cls, mean) -> "ProbMap":
        mean = np.asarray(mean, dtype=np.float64)
        return cls(mean, np.zeros_like(mean))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mean.shape


@dataclass(frozen=True)
class PipelineConfig:
    """Hyperparameters for every stage of the pipeline (pixel units of the input)."""

    # false-positive removal
    ht: int = 7
    vt: int = 11
    t_fp: float = 10.0
    literal_fp_rule: bool = False
    # soft-label transform
    alpha: float = 0.8
    beta: float = 8.0
    vw: int = 2
    hw: int = 1
    epsilon: float = 1e-6
    std_uses_hard_std: bool = False
    # loss
    gamma: float = 0.05
    k_weight: float = 0.5
    # evaluation / compounding
    artifact_pos_thresh: float = 0.05
    needle_pos_thresh: float = 0.5
    compound_t: float = 0.1
    # ensemble sampling and label pruning
    samples: int = 8
    prune_patch: int = 16
    prune_quantile: float = 0.5

    def __post_init__(self):
        for name in ("ht", "vt", "vw", "hw", "samples", "prune_patch"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.t_fp < 1:
            raise ValueError("t_fp must be >= 1")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if not 0 < self.k_weight < 1:
            raise ValueError("k_weight must lie in (0, 1)")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.compound_t < 0:
            raise ValueError("compound_t must be non-negative")
        if not 0 < self.prune_quantile < 1:
            raise ValueError("prune_quantile must lie in (0, 1)")

    def replace(self, **changes: Any) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "PipelineConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise FormatError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(raw, types[key], key)
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PipelineConfig":
        return cls.from_mapping(read_keyvalue(path))

    def to_mapping(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def save(self, path: str | os.PathLike) -> None:
        write_keyvalue(path, self.to_mapping())


def _coerce(raw: Any, typ: str, key: str):
    if not isinstance(raw, str):
        return raw
    try:
        if typ == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        return float(raw)
    except ValueError:
        raise FormatError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None


# ---------------------------------------------------------------------------
# key-value text
# ---------------------------------------------------------------------------

def read_keyvalue(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def write_keyvalue(path: str | os.PathLike, values: Mapping[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            if isinstance(value, float):
                value = repr(value)
            fh.write(f"{key} = {value}\n")


# ---------------------------------------------------------------------------
# PGM
# ---------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    # header tokens are separated by whitespace; '#' starts a comment to end of line
    tokens, pos, n = [], 0, len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise FormatError("PGM header must end with a single whitespace byte")
    return tokens, pos + 1


def read_raster_u8(path: str | os.PathLike) -> np.ndarray:
    """Read a binary 8-bit PGM into a raster with values ``byte / 255``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {data[:2]!r})")
    tokens, offset = _pgm_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PGM maxval {maxval}, expected 255")
    payload = data[offset:]
    if len(payload) != width * height:
        raise FormatError(
            f"{path}: PGM payload has {len(payload)} bytes, expected {width * height}"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / 255.0


def write_raster_u8(raster, path: str | os.PathLike) -> None:
    """Write a raster as binary PGM, quantising to ``round(v * 255)``."""
    arr = check_raster(raster)
    height, width = arr.shape
    pixels = np.rint(arr * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(pixels.tobytes())


# ---------------------------------------------------------------------------
# RF32
# ---------------------------------------------------------------------------

def write_raster_f32(raster, path: str | os.PathLike) -> None:
    """Write a real-valued map as RF32.

    Values are stored as float32; maps read back from RF32 round-trip exactly.
    """
    arr = np.asarray(raster)
    if arr.ndim != 2:
        raise FormatError(f"expected a 2-D raster, got shape {arr.shape}")
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(b"RF32 %d %d\n" % (width, height))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_raster_f32(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    newline = data.find(b"\n")
    if newline < 0:
        raise FormatError(f"{path}: missing RF32 header line")
    parts = data[:newline].split(b" ")
    if len(parts) != 3 or parts[0] != b"RF32":
        raise FormatError(f"{path}: malformed RF32 header {data[:newline]!r}")
    try:
        width, height = int(parts[1]), int(parts[2])
    except ValueError:
        raise FormatError(f"{path}: malformed RF32 dimensions") from None
    if width < 0 or height < 0:
        raise FormatError(f"{path}: negative RF32 dimensions")
    payload = data[newline + 1 :]
    if len(payload) != 4 * width * height:
        raise FormatError(
            f"{path}: RF32 payload has {len(payload)} bytes, expected {4 * width * height}"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float64)
