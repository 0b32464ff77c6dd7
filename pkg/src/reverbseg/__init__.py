"""Soft-label segmentation of needle reverberation artifacts in ultrasound images."""
from .core import FormatError, PipelineConfig, ProbMap
from .cluster import extract_needles, flood_fill_clusters, remove_false_positives
from .transform import transform_full
from .metrics import MetricsReport, RegionLabels, aggregate_reports, compute_metrics
from .probseg import (
    BaselineSegmenter,
    aleatoric_uncertainty,
    baseline_segment,
    prune_labels,
    segment_ensemble,
    weighted_mse_loss,
)
from .compound import compound_many, compound_two, confidence_map
from .phantom import NeedleSpec, PhantomSpec, make_overlabel, random_spec, simulate

__version__ = "0.1.0"

__all__ = [
    "FormatError",
    "PipelineConfig",
    "ProbMap",
    "extract_needles",
    "flood_fill_clusters",
    "remove_false_positives",
    "transform_full",
    "MetricsReport",
    "RegionLabels",
    "aggregate_reports",
    "compute_metrics",
    "BaselineSegmenter",
    "aleatoric_uncertainty",
    "baseline_segment",
    "prune_labels",
    "segment_ensemble",
    "weighted_mse_loss",
    "compound_many",
    "compound_two",
    "confidence_map",
    "NeedleSpec",
    "PhantomSpec",
    "make_overlabel",
    "random_spec",
    "simulate",
]
