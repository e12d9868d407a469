"""Training losses and evaluation metrics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractError
from .neural import ops
from .neural.tensor import Tensor, as_tensor, make

IGNORE_INDEX = 255
PSNR_CAP = 99.0


@dataclass(frozen=True)
class LossWeights:
    mse: float = 10.0        # λ1
    offset: float = 0.2      # λ_f
    perceptual_proxy: bool = False
    proxy: float = 1.0
    depth_supervision: bool = False

    def __post_init__(self):
        if min(self.mse, self.offset, self.proxy) < 0:
            raise ContractError("loss weights must be non-negative")


@dataclass
class LossReport:
    color: float
    semantic: float
    offset: float
    depth: float
    total: float
    breakdown: dict = field(default_factory=dict)

    def as_dict(self):
        return {"L_C": self.color, "L_S": self.semantic, "L_f": self.offset,
                "L_D": self.depth, "total": self.total, **self.breakdown}


def _grad_diff(img):
    dx = img[:, 1:] - img[:, :-1]
    dy = img[1:] - img[:-1]
    return dx, dy


def color_loss(rendered, target, weights: LossWeights = LossWeights()):
    """λ1·MSE(rendered, target) plus the optional gradient-difference proxy."""
    rendered = as_tensor(rendered)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ContractError(f"rendered {rendered.shape} vs target {target.shape}")
    diff = rendered - Tensor(target)
    loss = ops.mean(ops.square(diff)) * weights.mse
    if weights.perceptual_proxy:
        tdx, tdy = _grad_diff(target)
        rdx = rendered[:, 1:] - rendered[:, :-1]
        rdy = rendered[1:] - rendered[:-1]
        proxy = ops.mean(ops.abs(rdx - Tensor(tdx))) + ops.mean(ops.abs(rdy - Tensor(tdy)))
        loss = loss + proxy * weights.proxy
    return loss


def cross_entropy(logits, labels, ignore_index=IGNORE_INDEX):
    """Mean cross-entropy over pixels whose label is not ``ignore_index``.

    ``logits``: (..., η) tensor; ``labels``: integer array of the leading shape.
    Returns ``(loss tensor, n_valid)``.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    eta = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ContractError(f"labels {labels.shape} vs logits {logits.shape}")
    flat = logits.data.reshape(-1, eta)
    lab = labels.reshape(-1).astype(np.int64)
    valid = lab != ignore_index
    if np.any(valid & ((lab < 0) | (lab >= eta))):
        raise ContractError("labels outside [0, η) that are not the ignore index")
    n_valid = int(valid.sum())
    if n_valid == 0:
        return Tensor(0.0), 0
    z = flat - flat.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = np.nonzero(valid)[0]
    loss = -logp[idx, lab[idx]].sum() / n_valid

    def backward(g):
        grad = np.exp(logp)
        grad[idx, lab[idx]] -= 1.0
        grad[~valid] = 0.0
        return ((g / n_valid) * grad.reshape(logits.shape),)

    return make(np.asarray(loss), (logits,), backward), n_valid


def semantic_loss(rendered_logits, labels, view_logits=None, view_labels=None):
    """CE on the rendered score map plus Σ_v CE on each source view's 2-D logits.

    Returns ``(loss tensor, empty_flag)``; ``empty_flag`` is set when no term had a valid
    pixel (the loss is then 0).
    """
    loss, n = cross_entropy(rendered_logits, labels)
    any_valid = n > 0
    if view_logits is not None and view_labels is not None:
        view_labels = np.asarray(view_labels)
        for v in range(view_labels.shape[0]):
            lv, nv = cross_entropy(view_logits[v], view_labels[v])
            loss = loss + lv
            any_valid |= nv > 0
    if not any_valid:
        warnings.warn("semantic_loss: no labelled pixel", RuntimeWarning, stacklevel=2)
    return loss, not any_valid


def smooth_l1(pred, target, beta=1.0):
    """Mean over elements of 0.5 e²/β (|e| < β) or |e| - 0.5β."""
    pred = as_tensor(pred)
    return ops.mean(ops.smooth_l1(pred - Tensor(np.asarray(target, dtype=np.float64)), beta))


def total_loss(parts, weights: LossWeights = LossWeights()):
    """Loss = L_C + L_S + λ_f·L_f + L_D (L_D only with depth supervision).

    ``parts`` is ``(L_C, L_S, L_f, L_D)`` of floats or tensors. Returns
    ``(total, LossReport)`` where ``total`` keeps the tensor graph when given tensors.
    """
    lc, ls, lf, ld = parts
    total = lc + ls + weights.offset * lf
    if weights.depth_supervision:
        total = total + ld
    val = lambda x: float(x.data) if isinstance(x, Tensor) else float(x)  # noqa: E731
    report = LossReport(val(lc), val(ls), val(lf), val(ld) if weights.depth_supervision else 0.0,
                        val(total))
    return total, report


# --- metrics ---------------------------------------------------------------------------

def psnr(img, ref):
    img = np.clip(np.asarray(img, dtype=np.float64), 0, 1)
    ref = np.clip(np.asarray(ref, dtype=np.float64), 0, 1)
    mse = float(np.mean((img - ref) ** 2))
    return psnr_from_mse(mse)


def psnr_from_mse(mse):
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def ssim(img, ref, window=11, sigma=1.5):
    """Mean SSIM over channels (Gaussian window, K1=0.01, K2=0.03, data range 1)."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0, 1)
    ref = np.clip(np.asarray(ref, dtype=np.float64), 0, 1)
    if img.shape != ref.shape:
        raise ContractError("ssim inputs differ in shape")
    if img.ndim == 2:
        img, ref = img[..., None], ref[..., None]
    win = _gaussian_window(window, sigma)

    def blur(a):
        a = correlate1d(a, win, axis=0, mode="reflect")
        return correlate1d(a, win, axis=1, mode="reflect")

    c1, c2 = 0.01 ** 2, 0.03 ** 2
    pad = window // 2
    crop = (slice(pad, -pad), slice(pad, -pad)) if min(img.shape[:2]) > 2 * pad else \
        (slice(None), slice(None))
    vals = []
    for ch in range(img.shape[2]):
        x, y = img[..., ch], ref[..., ch]
        mx, my = blur(x), blur(y)
        sxx = blur(x * x) - mx * mx
        syy = blur(y * y) - my * my
        sxy = blur(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        vals.append(s[crop].mean())
    return float(np.mean(vals))


def confusion_matrix(pred, labels, n_classes, ignore_index=IGNORE_INDEX):
    """Rows = ground truth, columns = prediction, over non-ignored pixels."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    keep = labels != ignore_index
    pred, labels = pred[keep], labels[keep]
    pred = np.clip(pred, 0, n_classes - 1)
    return np.bincount(labels * n_classes + pred, minlength=n_classes ** 2) \
        .reshape(n_classes, n_classes)


def segmentation_scores(conf):
    conf = np.asarray(conf, dtype=np.float64)
    total = conf.sum()
    tp = np.diag(conf)
    gt = conf.sum(axis=1)
    pr = conf.sum(axis=0)
    present = gt > 0
    if total == 0 or not present.any():
        return {"miou": float("nan"), "acc": float("nan"), "class_acc": float("nan")}
    iou = tp[present] / (gt[present] + pr[present] - tp[present])
    cls = tp[present] / gt[present]
    return {"miou": float(iou.mean()), "acc": float(tp.sum() / total),
            "class_acc": float(cls.mean())}


def segmentation_metrics(pred, labels, n_classes, ignore_index=IGNORE_INDEX):
    return segmentation_scores(confusion_matrix(pred, labels, n_classes, ignore_index))


def metrics(image=None, image_ref=None, pred_labels=None, labels=None, n_classes=None):
    """PSNR/SSIM for an image pair and mIoU/acc/class acc for a label pair."""
    out = {}
    if image is not None:
        out["psnr"] = psnr(image, image_ref)
        out["ssim"] = ssim(image, image_ref)
    if pred_labels is not None:
        out.update(segmentation_metrics(pred_labels, labels, n_classes))
    return out
