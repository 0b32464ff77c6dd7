from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reverbseg.core import ProbMap
from reverbseg.phantom import random_spec, simulate
from reverbseg.probseg import (
    BaselineSegmenter,
    aleatoric_uncertainty,
    baseline_segment,
    class_probabilities,
    prune_labels,
    segment_ensemble,
    weighted_mse_loss,
)


def sse_oracle(pred, label, gamma):
    total, n = 0.0, 0
    for p, l in zip(np.ravel(pred), np.ravel(label)):
        if p > gamma or l > gamma:
            total += (p - l) ** 2
            n += 1
    return total, n


def exact_loss(pred, label, std, k):
    err = Fraction(pred) - Fraction(label)
    w = Fraction(k) if abs(err) < Fraction(std) else 1
    return float(w * err * err)


def test_loss_worked_example():
    loss, n = weighted_mse_loss(np.array([[0.5]]), np.array([[0.8]]), np.array([[0.4]]), 0.05, 0.5)
    assert n == 1
    # correctly rounded value of the formula on the stored doubles; 0.8 - 0.5 is not 0.3 in binary
    assert loss == exact_loss(0.5, 0.8, 0.4, 0.5)
    assert abs(loss - 0.045) <= 2 * np.spacing(0.045)


def test_loss_zero_residual(rng):
    a = rng.random((8, 8))
    assert weighted_mse_loss(a, a, rng.random((8, 8)))[0] == 0.0


def test_loss_threshold_exclusion():
    a = np.full((4, 4), 0.05)
    b = np.full((4, 4), 0.01)
    assert weighted_mse_loss(a, b, np.zeros((4, 4))) == (0.0, 0)


def test_loss_weight_boundary():
    # |err| == std is not "within" the std: full weight
    loss, _ = weighted_mse_loss(np.array([[0.5]]), np.array([[0.75]]), np.array([[0.25]]), 0.05, 0.5)
    assert loss == pytest.approx(0.0625, rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loss_k1_is_sse(seed):
    r = np.random.default_rng(seed)
    pred, label, std = r.random((9, 7)) * 0.3, r.random((9, 7)) * 0.3, r.random((9, 7))
    loss, n = weighted_mse_loss(pred, label, std, 0.05, 1.0)
    ref, m = sse_oracle(pred, label, 0.05)
    assert n == m
    assert abs(loss - ref) <= 1e-12 * max(1.0, ref)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loss_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b, s = r.random((6, 6)), r.random((6, 6)), r.random((6, 6)) * 0.3
    assert weighted_mse_loss(a, b, s)[0] == pytest.approx(weighted_mse_loss(b, a, s)[0], rel=1e-14)


def test_loss_monotone_in_error():
    label, std = np.array([[0.5]]), np.array([[0.2]])
    errs = np.linspace(0, 0.5, 51)
    losses = [weighted_mse_loss(np.array([[0.5 + e]]), label, std)[0] for e in errs]
    assert np.all(np.diff(losses) >= 0)


def test_uncertainty_examples():
    uniform = np.full((3, 2, 1, 1), 0.5)
    var, tr = aleatoric_uncertainty(uniform)
    assert np.all(var == 0.25) and tr[0, 0] == 0.5
    onehot = np.zeros((2, 2, 1, 1))
    onehot[0, 0] = onehot[1, 1] = 1.0
    var, tr = aleatoric_uncertainty(onehot)
    assert not var.any() and tr[0, 0] == 0.0


def full_matrix_trace(stack):
    # average of diag(p) - p p^T with the full matrix formed per pixel
    t, c, h, w = stack.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            m = np.zeros((c, c))
            for k in range(t):
                p = stack[k, :, i, j]
                m += np.diag(p) - np.outer(p, p)
            out[i, j] = np.trace(m / t)
    return out


def test_uncertainty_matches_full_matrix(rng):
    raw = rng.random((5, 3, 4, 4))
    stack = raw / raw.sum(axis=1, keepdims=True)
    _, tr = aleatoric_uncertainty(stack)
    np.testing.assert_allclose(tr, full_matrix_trace(stack), rtol=1e-12)
    assert np.all(tr <= 2 / 3 + 1e-12)


def test_uncertainty_rejects_bad_sums():
    with pytest.raises(ValueError, match="sum to 1"):
        aleatoric_uncertainty(np.full((2, 2, 1, 1), 0.6))
    with pytest.raises(ValueError):
        aleatoric_uncertainty(np.zeros((2, 2)))


def test_class_probabilities_sum_to_one(rng):
    p = class_probabilities(rng.random((5, 5)), rng.random((5, 5)))
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)
    assert p.min() >= 0


def test_prune_uniform_keeps_all():
    labels = np.ones((8, 8))
    out = prune_labels(labels, np.full((8, 8), 0.3), patch=4)
    assert np.array_equal(out, labels)


def test_prune_singletons_kept():
    labels = np.zeros((8, 8))
    labels[1, 1] = labels[5, 6] = 1
    out = prune_labels(labels, np.arange(64.0).reshape(8, 8), patch=4)
    assert np.array_equal(out, labels)


def test_prune_order_statistic():
    labels = np.zeros((4, 4))
    labels[:2, :2] = 1
    labels[3, 3] = 1
    u = np.zeros((4, 4))
    u[:2, :2] = [[4.0, 3.0], [2.0, 1.0]]
    u[3, 3] = 5.0  # global max sits in another block, so the first block's inverses are {1,2,3,4}
    out = prune_labels(labels, u, patch=2, quantile=0.5)
    # the ceil(0.5*4) = 2nd smallest inverse is 2: inverse 1 (u = 4) is dropped
    assert out[:2, :2].tolist() == [[0.0, 1.0], [1.0, 1.0]]
    assert out[3, 3] == 1.0


def test_prune_is_subset(rng):
    labels = (rng.random((33, 40)) < 0.5).astype(float)
    out = prune_labels(labels, rng.random((33, 40)), patch=8, quantile=0.7)
    assert np.all(out <= labels)
    assert set(np.unique(out)) <= {0.0, 1.0}


class FixedSegmenter:
    def __init__(self, values):
        self.values = values

    def segment(self, image, seed):
        v = self.values[seed % len(self.values)]
        return ProbMap.deterministic(np.full(image.shape, v)), ProbMap.deterministic(np.zeros(image.shape))


def test_ensemble_statistics():
    a, n, stack = segment_ensemble(FixedSegmenter([0.2, 0.4]), np.zeros((3, 3)), T=2)
    assert np.allclose(a.mean, 0.3) and np.allclose(a.std, 0.1)
    assert stack.shape == (2, 3, 3, 3)
    same, _, _ = segment_ensemble(FixedSegmenter([0.7]), np.zeros((3, 3)), T=4)
    assert not same.std.any()
    with pytest.raises(ValueError):
        segment_ensemble(FixedSegmenter([0.1]), np.zeros((2, 2)), T=1)


def test_baseline_blank_image():
    a, n = baseline_segment(np.zeros((32, 32)))
    assert not a.mean.any() and not n.mean.any() and not a.std.any()


def test_baseline_deterministic(one_needle_phantom):
    _, ph = one_needle_phantom
    a1, n1 = baseline_segment(ph.image, seed=3)
    a2, n2 = baseline_segment(ph.image, seed=3)
    for x, y in ((a1.mean, a2.mean), (a1.std, a2.std), (n1.mean, n2.mean)):
        assert x.tobytes() == y.tobytes()
    e1 = segment_ensemble(BaselineSegmenter(), ph.image, T=8, seed=5)
    e2 = segment_ensemble(BaselineSegmenter(), ph.image, T=8, seed=5)
    assert e1[2].tobytes() == e2[2].tobytes()


def test_baseline_finds_needle_and_lines(one_needle_phantom):
    _, ph = one_needle_phantom
    a, n = baseline_segment(ph.image)
    true_needle = ph.gt_needle > 0
    assert (n.mean[true_needle] > 0.5).mean() >= 0.8
    lines = ph.gt_artifact_soft > 0
    assert (a.mean[lines] > 0.5).mean() >= 0.8


@pytest.mark.parametrize("seed", range(5))
def test_baseline_needle_recall_speckle(seed):
    ph = simulate(random_spec(np.random.default_rng(seed)), seed)
    _, n = baseline_segment(ph.image)
    assert (n.mean[ph.gt_needle > 0] > 0.5).mean() >= 0.8
