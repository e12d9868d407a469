import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gssplat.errors import ContractError
from gssplat.gradcheck import check_gradients
from gssplat.neural import Tensor, parameter
from gssplat.objective import (IGNORE_INDEX, LossWeights, color_loss, confusion_matrix,
                               cross_entropy, metrics, psnr, psnr_from_mse, segmentation_metrics,
                               segmentation_scores, semantic_loss, smooth_l1, ssim, total_loss)

from oracles import confusion_by_enumeration, scores_by_enumeration, ssim_direct

finite = st.floats(0, 1e3)


@given(finite, finite, finite, finite, st.floats(0, 5), st.booleans())
def test_total_is_weighted_sum(lc, ls, lf, ld, lam, depth):
    w = LossWeights(offset=lam, depth_supervision=depth)
    total, report = total_loss((lc, ls, lf, ld), w)
    assert total == lc + ls + lam * lf + (ld if depth else 0.0)
    assert report.total == total


def test_total_keeps_graph():
    parts = [parameter(np.array(v)) for v in (1.0, 2.0, 3.0, 4.0)]
    total, _ = total_loss(parts, LossWeights(offset=0.2, depth_supervision=True))
    total.backward()
    assert [float(p.grad) for p in parts] == [1.0, 1.0, 0.2, 1.0]


def test_losses_zero_on_exact_match(rng):
    img = rng.uniform(size=(5, 6, 3))
    assert float(color_loss(img, img).data) == 0.0
    logits = np.full((4, 4, 3), -50.0)
    labels = rng.integers(0, 3, size=(4, 4))
    np.put_along_axis(logits, labels[..., None], 50.0, axis=-1)
    assert float(cross_entropy(logits, labels)[0].data) < 1e-40
    assert float(smooth_l1(img, img).data) == 0.0


@given(st.integers(0, 2 ** 16))
def test_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(2, 4, 4, 3))
    w = LossWeights(perceptual_proxy=True)
    assert float(color_loss(a, b, w).data) >= 0
    labels = rng.integers(0, 3, size=(4, 4))
    assert float(cross_entropy(rng.normal(size=(4, 4, 3)), labels)[0].data) >= 0
    assert float(smooth_l1(a, b, 0.3).data) >= 0


def test_color_loss_is_weighted_mse(rng):
    a, b = rng.uniform(size=(2, 3, 3, 3))
    assert float(color_loss(a, b).data) == pytest.approx(10 * np.mean((a - b) ** 2))


def test_cross_entropy_ignores_label(rng):
    logits = rng.normal(size=(2, 2, 3))
    labels = np.array([[0, IGNORE_INDEX], [2, 1]])
    loss, n = cross_entropy(logits, labels)
    z = logits.reshape(-1, 3)
    lp = z - np.log(np.exp(z).sum(1, keepdims=True))
    ref = -(lp[0, 0] + lp[2, 2] + lp[3, 1]) / 3
    assert n == 3 and float(loss.data) == pytest.approx(ref)
    with pytest.raises(ContractError):
        cross_entropy(logits, np.array([[0, 7], [1, 1]]))


def test_semantic_loss_adds_view_terms(rng):
    logits = rng.normal(size=(3, 3, 4))
    labels = rng.integers(0, 4, size=(3, 3))
    views = rng.normal(size=(2, 3, 3, 4))
    vlab = rng.integers(0, 4, size=(2, 3, 3))
    loss, empty = semantic_loss(logits, labels, Tensor(views), vlab)
    parts = [cross_entropy(logits, labels)[0]] + [cross_entropy(views[v], vlab[v])[0]
                                                  for v in range(2)]
    assert not empty and float(loss.data) == pytest.approx(sum(float(p.data) for p in parts))
    with pytest.warns(RuntimeWarning):
        _, empty = semantic_loss(logits, np.full((3, 3), IGNORE_INDEX))
    assert empty


def test_loss_gradients(rng):
    target = rng.uniform(size=(4, 4, 3))
    w = LossWeights(perceptual_proxy=True)
    assert check_gradients(lambda x: color_loss(x, target, w),
                           [rng.uniform(size=(4, 4, 3))], eps=1e-6) < 1e-3
    labels = rng.integers(0, 3, size=(4, 4))
    assert check_gradients(lambda x: semantic_loss(x, labels)[0],
                           [rng.normal(size=(4, 4, 3))], eps=1e-5) < 1e-3


def test_psnr_definition():
    assert abs(psnr_from_mse(0.01) - 20.0) < 1e-6
    a = np.zeros((4, 4, 3))
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-6
    assert psnr(a, a) == 99.0


def test_ssim_identity_and_oracle(rng):
    x = rng.uniform(size=(20, 18, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    y = np.clip(x + rng.normal(0, 0.1, size=x.shape), 0, 1)
    ref = np.mean([ssim_direct(x[..., c], y[..., c]) for c in range(3)])
    assert ssim(x, y) == pytest.approx(ref, rel=1e-9)


def test_metrics_clamp_inputs():
    a = np.full((12, 12, 3), 1.5)
    assert psnr(a, np.ones_like(a)) == 99.0


@pytest.mark.parametrize("case", [
    (np.array([[0, 1, 2, 3], [0, 1, 2, 3], [1, 1, 2, 2], [3, 3, 0, 0]]),
     np.array([[0, 1, 2, 3], [0, 0, 2, 3], [1, 1, 3, 2], [3, 3, 0, 1]])),
    (np.array([[2, 2, 2, 2]] * 4), np.array([[0, 1, 2, 3]] * 4)),
    (np.array([[0, 0, 1, 1]] * 4), np.array([[0, 0, 1, 255]] * 4)),
])
def test_segmentation_against_enumeration(case):
    pred, labels = case
    conf = confusion_matrix(pred, labels, 4)
    assert np.array_equal(conf, confusion_by_enumeration(pred, labels, 4))
    got = segmentation_scores(conf)
    ref = scores_by_enumeration(pred, labels, 4)
    for k in ("miou", "acc", "class_acc"):
        assert got[k] == pytest.approx(ref[k], abs=1e-12)


@given(st.integers(0, 2 ** 16), st.integers(2, 6))
def test_segmentation_random_against_enumeration(seed, eta):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, eta, size=(5, 5))
    labels[rng.uniform(size=labels.shape) < 0.2] = 255
    pred = rng.integers(0, eta, size=(5, 5))
    if (labels == 255).all():
        return
    got = segmentation_metrics(pred, labels, eta)
    ref = scores_by_enumeration(pred, labels, eta)
    assert all(got[k] == pytest.approx(ref[k], abs=1e-12) for k in ref)


def test_hand_computed_confusion():
    conf = np.array([[3, 1, 0, 0], [0, 2, 2, 0], [0, 0, 4, 0], [1, 0, 0, 3]])
    s = segmentation_scores(conf)
    ious = [3 / 5, 2 / 5, 4 / 6, 3 / 4]
    assert s["miou"] == pytest.approx(np.mean(ious))
    assert s["acc"] == pytest.approx(12 / 16)
    assert s["class_acc"] == pytest.approx(np.mean([3 / 4, 2 / 4, 1, 3 / 4]))
    assert np.isnan(segmentation_scores(np.zeros((3, 3)))["miou"])


def test_metrics_bundle(rng):
    img = rng.uniform(size=(12, 12, 3))
    out = metrics(img, img, np.zeros((2, 2)), np.zeros((2, 2)), 2)
    assert out["psnr"] == 99.0 and out["miou"] == 1.0
