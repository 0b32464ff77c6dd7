"""Command-line interface.

Exit status: 0 on success, 1 for usage errors, 2 for missing files and
malformed data.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import plotting
from .compound import compound_average, compound_many, compound_max
from .core import (
    FormatError,
    PipelineConfig,
    ProbMap,
    read_raster_f32,
    read_raster_u8,
    write_keyvalue,
    write_raster_f32,
    write_raster_u8,
)
from .metrics import MetricsReport, RegionLabels, compute_metrics, format_table
from .phantom import PhantomSpec, make_overlabel, random_spec, simulate
from .probseg import (
    BaselineSegmenter,
    aleatoric_uncertainty,
    prune_labels,
    segment_ensemble,
    weighted_mse_loss,
)
from .transform import transform_full

log = logging.getLogger("reverbseg")

CLASS_NAMES = ("background", "artifact", "needle")


class UsageError(Exception):
    pass


class HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Append defaults unless the help already states one or the flag is required."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default:" in text or action.required or action.default is argparse.SUPPRESS:
            return text
        return super()._get_help_string(action)


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: usage error: {message}\n")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def read_map(path) -> np.ndarray:
    """Read a raster from PGM or RF32, chosen by the file's magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"RF32":
        return read_raster_f32(path)
    if magic[:2] == b"P5":
        return read_raster_u8(path)
    raise FormatError(f"{path}: neither a binary PGM nor an RF32 file")


_CONFIG_HELP = {
    "ht": "horizontal clustering radius (px)",
    "vt": "vertical clustering radius (px)",
    "t_fp": "max artifact-to-needle distance for a true positive (px)",
    "literal_fp_rule": "treat all needle pixels as one set when removing false positives",
    "alpha": "exponential decay rate",
    "beta": "steepness of the between-reverberation suppression",
    "vw": "half-height of the local max window (px)",
    "hw": "half-width of the local max window (px)",
    "epsilon": "std-map division guard",
    "std_uses_hard_std": "rescale the hard std map instead of using the mean ratio alone",
    "gamma": "loss activity threshold",
    "k_weight": "loss weight for residuals inside the label std",
    "artifact_pos_thresh": "artifact positivity threshold",
    "needle_pos_thresh": "needle positivity threshold",
    "compound_t": "compounding confidence-gap threshold",
    "samples": "ensemble samples drawn from the segmenter",
    "prune_patch": "label-pruning block size (px)",
    "prune_quantile": "label-pruning quantile",
}


def _add_config_args(p: argparse.ArgumentParser, names=None) -> None:
    defaults = PipelineConfig()
    p.add_argument("--config", metavar="FILE",
                   help="key = value file of pipeline settings; flags override it")
    for f in fields(PipelineConfig):
        if names is not None and f.name not in names:
            continue
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None,
                           help=f"{_CONFIG_HELP[f.name]} (default: {default})")
        else:
            p.add_argument(flag, dest=f.name, type=int if f.type == "int" else float, default=None,
                           metavar="N", help=f"{_CONFIG_HELP[f.name]} (default: {default})")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    overrides = {f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)}
    try:
        return cfg.replace(**overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _segment_to_dir(image, out: Path, cfg: PipelineConfig, seed: int, figures: bool):
    artifact, needle, stack = segment_ensemble(BaselineSegmenter(), image, cfg.samples, seed)
    _, trace = aleatoric_uncertainty(stack)
    write_raster_f32(artifact.mean, out / "artifact_mean.rf32")
    write_raster_f32(artifact.std, out / "artifact_std.rf32")
    write_raster_f32(needle.mean, out / "needle_mean.rf32")
    write_raster_f32(needle.std, out / "needle_std.rf32")
    write_raster_f32(trace, out / "uncertainty.rf32")
    stack_dir = out / "prob_stack"
    stack_dir.mkdir(exist_ok=True)
    manifest = {"samples": len(stack), "classes": ",".join(CLASS_NAMES), "base_seed": seed}
    for t, probs in enumerate(stack):
        for name, p in zip(CLASS_NAMES, probs):
            fname = f"sample_{t:03d}_{name}.rf32"
            write_raster_f32(p, stack_dir / fname)
            manifest[f"sample_{t:03d}_{name}"] = fname
    write_keyvalue(stack_dir / "manifest.txt", manifest)
    if figures:
        plotting.segment_figure(image, artifact, needle, trace, out / "segment.png")
    return artifact, needle


def _transform_to_dir(image, artifact, needle, out: Path, cfg: PipelineConfig, dump: bool, figures: bool):
    art_soft, ndl_soft, stages = transform_full(image, artifact, needle, cfg, return_stages=True)
    write_raster_f32(art_soft.mean, out / "artifact_soft.rf32")
    write_raster_f32(art_soft.std, out / "artifact_soft_std.rf32")
    write_raster_f32(ndl_soft.mean, out / "needle_soft.rf32")
    write_raster_f32(ndl_soft.std, out / "needle_soft_std.rf32")
    if dump:
        stage_dir = out / "stages"
        stage_dir.mkdir(exist_ok=True)
        for name, m in stages.maps().items():
            write_raster_f32(m, stage_dir / f"{name}.rf32")
    if figures:
        plotting.pipeline_figure(image, art_soft.mean, ndl_soft.mean, out / "transform.png")
    return art_soft, ndl_soft


def _report(report: MetricsReport, out_file: Path, figures: bool, name="result") -> None:
    report.save(out_file)
    print(format_table({name: report}))
    if figures:
        plotting.metrics_figure({name: report}, out_file.with_suffix(".png"))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fixed = PhantomSpec.load(args.spec) if args.spec else None
    rng = np.random.default_rng(args.seed)
    manifest = {}
    for k in range(args.n):
        spec = fixed or random_spec(rng, args.size, args.size, noise=args.noise)
        seed = args.seed + k
        ph = simulate(spec, seed)
        name = f"phantom_{k:04d}"
        d = out / name
        d.mkdir(exist_ok=True)
        write_raster_u8(ph.image, d / "image.pgm")
        write_raster_f32(ph.gt_artifact_soft, d / "gt_artifact.rf32")
        write_raster_f32(ph.gt_needle, d / "gt_needle.rf32")
        art_hard, ndl_hard = make_overlabel(ph.gt_artifact_soft, ph.gt_needle,
                                            args.overlabel_dilation, infill=True)
        write_raster_u8(art_hard, d / "artifact_overlabel.pgm")
        write_raster_u8(ndl_hard, d / "needle_overlabel.pgm")
        ph.labels.save(d / "labels")
        (d / "spec.json").write_text(spec.to_json(), encoding="utf-8")
        if args.figures:
            plotting.image_panels(
                [("image", ph.image), ("gt artifact", ph.gt_artifact_soft), ("gt needle", ph.gt_needle)],
                d / "phantom.png", cmaps=["gray", "magma", "magma"])
        manifest[name] = seed
    write_keyvalue(out / "manifest.txt", manifest)
    print(f"wrote {args.n} phantoms to {out}")


def cmd_segment(args) -> None:
    cfg = _config(args)
    image = read_map(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _segment_to_dir(image, out, cfg, args.seed, args.figures)
    print(f"wrote segmentation maps to {out}")


def cmd_transform(args) -> None:
    cfg = _config(args)
    image = read_map(args.image)
    artifact = ProbMap(read_map(args.artifact_mean),
                       read_map(args.artifact_std) if args.artifact_std else np.zeros_like(image))
    needle = ProbMap(read_map(args.needle_mean),
                     read_map(args.needle_std) if args.needle_std else np.zeros_like(image))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _transform_to_dir(image, artifact, needle, out, cfg, args.dump_stages, args.figures)
    print(f"wrote soft labels to {out}")


def cmd_metrics(args) -> None:
    cfg = _config(args)
    pred = Path(args.pred)
    art = read_map(pred / "artifact_soft.rf32")
    ndl = read_map(pred / "needle_soft.rf32")
    labels = RegionLabels.load(args.labels)
    report = compute_metrics(art, ndl, labels, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _report(report, out, args.figures, name=pred.name or "result")


def cmd_compound(args) -> None:
    cfg = _config(args)
    t = args.t if args.t is not None else cfg.compound_t
    images, artifacts = [], []
    for spec in args.views:
        img, sep, art = spec.rpartition(":")
        if not sep or not img or not art:
            raise UsageError(f"view {spec!r} must be IMAGE:ARTIFACT_MAP")
        images.append(read_map(img))
        artifacts.append(read_map(art))
    if len(images) < 2:
        raise UsageError("compound needs at least 2 views")
    out, source = compound_many(images, artifacts, t)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_raster_u8(out, out_path)
    if args.source_map:
        write_raster_f32(source.astype(np.float64), args.source_map)
    refs = {"average": compound_average(images), "max": compound_max(images)}
    if args.references:
        for name, im in refs.items():
            write_raster_u8(im, out_path.with_name(f"{out_path.stem}_{name}.pgm"))
    if args.figures:
        plotting.compound_figure(images, artifacts, out, refs, out_path.with_suffix(".png"))
    print(f"wrote compounded image to {out_path}")


def cmd_loss(args) -> None:
    cfg = _config(args)
    loss, active = weighted_mse_loss(read_map(args.pred), read_map(args.label_mean),
                                     read_map(args.label_std), cfg.gamma, cfg.k_weight)
    print(f"loss = {loss!r}")
    print(f"active_count = {active}")


def cmd_prune(args) -> None:
    cfg = _config(args)
    patch = args.patch if args.patch is not None else cfg.prune_patch
    quantile = args.quantile if args.quantile is not None else cfg.prune_quantile
    if patch < 1 or not 0 < quantile < 1:
        raise UsageError("--patch must be >= 1 and --quantile in (0, 1)")
    pruned = prune_labels(read_map(args.labels), read_map(args.uncertainty), patch, quantile)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_raster_u8(pruned, args.out)
    print(f"kept {int(pruned.sum())} labelled pixels; wrote {args.out}")


def cmd_pipeline(args) -> None:
    cfg = _config(args)
    image_path = Path(args.image)
    image = read_map(image_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifact, needle = _segment_to_dir(image, out, cfg, args.seed, args.figures)
    art_soft, ndl_soft = _transform_to_dir(image, artifact, needle, out, cfg,
                                           args.dump_stages, args.figures)
    labels_dir = Path(args.labels) if args.labels else image_path.parent / "labels"
    if (labels_dir / "manifest.txt").exists():
        report = compute_metrics(art_soft.mean, ndl_soft.mean, RegionLabels.load(labels_dir), cfg)
        _report(report, out / "metrics.txt", args.figures, name=image_path.parent.name or "result")
    elif args.labels:
        raise FileNotFoundError(labels_dir / "manifest.txt")
    else:
        print(f"no region labels next to {image_path}; skipped metrics")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> ArgumentParser:
    fmt = HelpFormatter
    parser = ArgumentParser(prog="reverbseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def figures_flag(p):
        p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True,
                       help="render PNG figures next to the outputs")

    p = sub.add_parser("simulate", help="generate synthetic phantoms", formatter_class=fmt)
    p.add_argument("--spec", metavar="FILE", default=None,
                   help="phantom spec as JSON; random one-needle layouts when omitted")
    p.add_argument("--out", metavar="DIR", required=True, help="output directory")
    p.add_argument("--n", type=int, default=1, help="number of phantoms")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--size", type=int, default=256, help="image side length for random layouts")
    p.add_argument("--noise", type=float, default=0.0, help="additive noise std for random layouts")
    p.add_argument("--overlabel-dilation", type=int, default=2,
                   help="dilation of the simulated over-labelled annotations")
    figures_flag(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("segment", help="run the baseline segmenter ensemble", formatter_class=fmt)
    p.add_argument("--image", metavar="FILE", required=True, help="input PGM or RF32 image")
    p.add_argument("--out", metavar="DIR", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="base seed of the ensemble")
    _add_config_args(p, {"samples"})
    figures_flag(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("transform", help="turn hard maps into soft labels", formatter_class=fmt)
    p.add_argument("--image", metavar="FILE", required=True, help="input image")
    p.add_argument("--artifact-mean", metavar="FILE", required=True, help="hard artifact mean map")
    p.add_argument("--artifact-std", metavar="FILE", default=None, help="hard artifact std map (zeros if omitted)")
    p.add_argument("--needle-mean", metavar="FILE", required=True, help="hard needle mean map")
    p.add_argument("--needle-std", metavar="FILE", default=None, help="hard needle std map (zeros if omitted)")
    p.add_argument("--out", metavar="DIR", required=True, help="output directory")
    p.add_argument("--dump-stages", action="store_true", help="also write intermediate maps")
    _add_config_args(p)
    figures_flag(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("metrics", help="evaluate soft labels against region labels", formatter_class=fmt)
    p.add_argument("--pred", metavar="DIR", required=True,
                   help="directory with artifact_soft.rf32 and needle_soft.rf32")
    p.add_argument("--labels", metavar="DIR", required=True, help="region label directory")
    p.add_argument("--out", metavar="FILE", required=True, help="metrics key-value file")
    _add_config_args(p, {"artifact_pos_thresh", "needle_pos_thresh"})
    figures_flag(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("compound", help="artifact-aware multi-view compounding", formatter_class=fmt)
    p.add_argument("--views", nargs="+", metavar="IMAGE:ARTIFACT", required=True,
                   help="view images paired with their artifact soft labels")
    p.add_argument("--t", type=float, default=None,
                   help=f"confidence-gap threshold (default: {PipelineConfig().compound_t})")
    p.add_argument("--out", metavar="FILE", required=True, help="compounded PGM")
    p.add_argument("--source-map", metavar="FILE", default=None,
                   help="RF32 map of the view index chosen per pixel")
    p.add_argument("--references", action="store_true",
                   help="also write average and max compounding for comparison")
    _add_config_args(p, {"compound_t"})
    figures_flag(p)
    p.set_defaults(func=cmd_compound)

    p = sub.add_parser("loss", help="soft-label loss between a prediction and a label", formatter_class=fmt)
    p.add_argument("--pred", metavar="FILE", required=True, help="predicted mean map")
    p.add_argument("--label-mean", metavar="FILE", required=True, help="label mean map")
    p.add_argument("--label-std", metavar="FILE", required=True, help="label std map")
    _add_config_args(p, {"gamma", "k_weight"})
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("prune", help="prune hard labels by local uncertainty", formatter_class=fmt)
    p.add_argument("--labels", metavar="FILE", required=True, help="binary label PGM")
    p.add_argument("--uncertainty", metavar="FILE", required=True, help="uncertainty map")
    p.add_argument("--patch", type=int, default=None,
                   help=f"block size in pixels (default: {PipelineConfig().prune_patch})")
    p.add_argument("--quantile", type=float, default=None,
                   help=f"per-block keep quantile (default: {PipelineConfig().prune_quantile})")
    p.add_argument("--out", metavar="FILE", required=True, help="pruned label PGM")
    _add_config_args(p, set())
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("pipeline", help="segment, transform and evaluate one image", formatter_class=fmt)
    p.add_argument("--image", metavar="FILE", required=True, help="input image")
    p.add_argument("--out", metavar="DIR", required=True, help="output directory")
    p.add_argument("--labels", metavar="DIR", default=None,
                   help="region labels (default: a labels/ directory next to the image)")
    p.add_argument("--seed", type=int, default=0, help="base seed of the ensemble")
    p.add_argument("--dump-stages", action="store_true", help="also write intermediate maps")
    _add_config_args(p)
    figures_flag(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"reverbseg {args.command}: usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"reverbseg {args.command}: file not found: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (FormatError, ValueError) as exc:
        print(f"reverbseg {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
