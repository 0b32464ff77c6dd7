import numpy as np
import pytest

from reverbseg.cli import HelpFormatter, build_parser, main
from reverbseg.core import PipelineConfig, read_raster_f32, read_raster_u8, write_raster_f32, write_raster_u8
from reverbseg.metrics import MetricsReport
from reverbseg.phantom import NeedleSpec, PhantomSpec


@pytest.fixture(scope="module")
def phantoms(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--n", "2", "--seed", "3", "--size", "64"]) == 0
    return out


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_simulate_layout(phantoms):
    d = phantoms / "phantom_0000"
    for name in ("image.pgm", "gt_artifact.rf32", "gt_needle.rf32", "artifact_overlabel.pgm",
                 "needle_overlabel.pgm", "labels/manifest.txt", "spec.json", "phantom.png"):
        assert (d / name).is_file(), name
    assert "phantom_0001 = 4" in (phantoms / "manifest.txt").read_text()


def test_simulate_fixed_spec(tmp_path):
    spec = PhantomSpec(48, 48, needles=(NeedleSpec(8, 4, 30),), contrast=0.0)
    (tmp_path / "spec.json").write_text(spec.to_json())
    assert main(["simulate", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "o"),
                 "--no-figures"]) == 0
    img = read_raster_u8(tmp_path / "o/phantom_0000/image.pgm")
    assert img.shape == (48, 48)
    assert not (tmp_path / "o/phantom_0000/phantom.png").exists()


def test_pipeline_outputs(phantoms, tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["pipeline", "--image", str(phantoms / "phantom_0000/image.pgm"), "--out", str(out),
               "--samples", "3", "--dump-stages"])
    assert rc == 0
    for name in ("artifact_soft.rf32", "needle_soft.rf32", "metrics.txt", "metrics.png",
                 "transform.png", "segment.png", "uncertainty.rf32", "stages/y2.rf32",
                 "prob_stack/manifest.txt", "prob_stack/sample_002_needle.rf32"):
        assert (out / name).is_file(), name
    report = MetricsReport.load(out / "metrics.txt")
    assert report.FAR is not None
    assert "FAR" in capsys.readouterr().out


def test_pipeline_reproducible(phantoms, tmp_path):
    args = ["--image", str(phantoms / "phantom_0001/image.pgm"), "--samples", "2", "--seed", "7"]
    assert main(["pipeline", *args, "--out", str(tmp_path / "a")]) == 0
    assert main(["pipeline", *args, "--out", str(tmp_path / "b")]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_segment_transform_metrics_chain(phantoms, tmp_path):
    d = phantoms / "phantom_0000"
    seg, soft = tmp_path / "seg", tmp_path / "soft"
    assert main(["segment", "--image", str(d / "image.pgm"), "--out", str(seg), "--samples", "2",
                 "--no-figures"]) == 0
    assert main(["transform", "--image", str(d / "image.pgm"),
                 "--artifact-mean", str(seg / "artifact_mean.rf32"),
                 "--artifact-std", str(seg / "artifact_std.rf32"),
                 "--needle-mean", str(seg / "needle_mean.rf32"),
                 "--needle-std", str(seg / "needle_std.rf32"), "--out", str(soft), "--no-figures"]) == 0
    assert main(["metrics", "--pred", str(soft), "--labels", str(d / "labels"),
                 "--out", str(tmp_path / "m.txt")]) == 0
    assert (tmp_path / "m.png").is_file()


def test_transform_from_overlabel(phantoms, tmp_path):
    d = phantoms / "phantom_0000"
    assert main(["transform", "--image", str(d / "image.pgm"),
                 "--artifact-mean", str(d / "artifact_overlabel.pgm"),
                 "--needle-mean", str(d / "needle_overlabel.pgm"), "--out", str(tmp_path), "--no-figures"]) == 0
    soft = read_raster_f32(tmp_path / "artifact_soft.rf32")
    assert soft.max() <= 1 and soft.max() > 0.1


def test_compound_identical_masks_is_max(tmp_path, rng):
    a, b = rng.random((16, 16)), rng.random((16, 16))
    write_raster_u8(a, tmp_path / "a.pgm")
    write_raster_u8(b, tmp_path / "b.pgm")
    write_raster_f32(np.full((16, 16), 0.4), tmp_path / "m.rf32")
    rc = main(["compound", "--views", f"{tmp_path}/a.pgm:{tmp_path}/m.rf32", f"{tmp_path}/b.pgm:{tmp_path}/m.rf32",
               "--t", "0.1", "--out", str(tmp_path / "c.pgm"), "--source-map", str(tmp_path / "s.rf32"),
               "--references", "--no-figures"])
    assert rc == 0
    out = read_raster_u8(tmp_path / "c.pgm")
    expect = np.maximum(read_raster_u8(tmp_path / "a.pgm"), read_raster_u8(tmp_path / "b.pgm"))
    assert np.array_equal(out, expect)
    assert (tmp_path / "c_max.pgm").is_file() and (tmp_path / "s.rf32").is_file()


def test_loss_output(tmp_path, capsys):
    write_raster_f32(np.array([[0.5]]), tmp_path / "p.rf32")
    write_raster_f32(np.array([[0.75]]), tmp_path / "l.rf32")
    write_raster_f32(np.array([[0.5]]), tmp_path / "s.rf32")
    assert main(["loss", "--pred", str(tmp_path / "p.rf32"), "--label-mean", str(tmp_path / "l.rf32"),
                 "--label-std", str(tmp_path / "s.rf32")]) == 0
    out = capsys.readouterr().out
    assert "loss = 0.03125" in out and "active_count = 1" in out


def test_prune(tmp_path):
    write_raster_u8(np.ones((4, 4)), tmp_path / "l.pgm")
    write_raster_f32(np.full((4, 4), 0.2), tmp_path / "u.rf32")
    assert main(["prune", "--labels", str(tmp_path / "l.pgm"), "--uncertainty", str(tmp_path / "u.rf32"),
                 "--out", str(tmp_path / "o.pgm")]) == 0
    assert read_raster_u8(tmp_path / "o.pgm").all()
    assert main(["prune", "--labels", str(tmp_path / "l.pgm"), "--uncertainty", str(tmp_path / "u.rf32"),
                 "--quantile", "1.5", "--out", str(tmp_path / "o.pgm")]) == 1


def test_missing_file_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.pgm"
    assert main(["segment", "--image", str(missing), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "file not found" in err and str(missing) in err


def test_format_error_exit_2(tmp_path, capsys):
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    assert main(["segment", "--image", str(tmp_path / "bad.pgm"), "--out", str(tmp_path)]) == 2
    assert "data error" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main(["pipeline", "--bogus"]) == 1
    assert "usage error" in capsys.readouterr().err
    assert main(["pipeline", "--image", "x", "--out", "y", "--alpha", "-1"]) == 1
    assert "alpha" in capsys.readouterr().err
    assert main([]) == 1


@pytest.mark.parametrize("cmd", ["simulate", "segment", "transform", "metrics", "compound", "loss", "prune", "pipeline"])
def test_help_lists_defaults(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    text = " ".join(capsys.readouterr().out.split())
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    fmt = HelpFormatter(cmd)
    for action in sub._actions:
        if action.option_strings and not action.required and action.dest != "help":
            rendered = fmt._get_help_string(action) % {"default": action.default}
            assert "(default:" in rendered, action.dest
            assert " ".join(rendered.split()) in text
    assert "(default: None) (default" not in text


def test_config_file_and_flag_override(tmp_path, capsys):
    PipelineConfig(k_weight=1.0 - 1e-9, gamma=0.01).save(tmp_path / "cfg.txt")
    write_raster_f32(np.array([[0.5]]), tmp_path / "p.rf32")
    write_raster_f32(np.array([[0.75]]), tmp_path / "l.rf32")
    write_raster_f32(np.array([[0.5]]), tmp_path / "s.rf32")
    base = ["loss", "--pred", str(tmp_path / "p.rf32"), "--label-mean", str(tmp_path / "l.rf32"),
            "--label-std", str(tmp_path / "s.rf32"), "--config", str(tmp_path / "cfg.txt")]
    assert main(base) == 0
    assert "loss = 0.0624999" in capsys.readouterr().out
    assert main(base + ["--k-weight", "0.25"]) == 0
    assert "loss = 0.015625" in capsys.readouterr().out
    (tmp_path / "bad.txt").write_text("nonsense = 3\n")
    assert main(base[:-1] + [str(tmp_path / "bad.txt")]) == 2
