"""Answer and box losses. Boxes are (cx, cy, w, h) in normalized image units."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.intp)
    logp = ad.log_softmax(logits, axis=-1)
    picked = logp[np.arange(labels.size), labels]
    return -picked.mean()


def _corners(box: Tensor):
    cx, cy, w, h = box[:, 0], box[:, 1], box[:, 2], box[:, 3]
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def giou(pred: Tensor, target: Tensor) -> Tensor:
    """Per-row generalized IoU, shape (n,)."""
    px1, py1, px2, py2 = _corners(pred)
    tx1, ty1, tx2, ty2 = _corners(target)
    iw = ad.maximum(ad.minimum(px2, tx2) - ad.maximum(px1, tx1), 0.0)
    ih = ad.maximum(ad.minimum(py2, ty2) - ad.maximum(py1, ty1), 0.0)
    inter = iw * ih
    union = pred[:, 2] * pred[:, 3] + target[:, 2] * target[:, 3] - inter
    hull = ((ad.maximum(px2, tx2) - ad.minimum(px1, tx1))
            * (ad.maximum(py2, ty2) - ad.minimum(py1, ty1)))
    return inter / union - (hull - union) / hull


def loss_total(answer_logits: Tensor, bbox: Tensor, answers, target_boxes,
               lambda_l1: float = 1.0, lambda_giou: float = 1.0) -> Tensor:
    """CE(answer) + lambda_l1 * L1(box) + lambda_giou * (1 - GIoU(box)), batch mean."""
    tb = ad.as_tensor(target_boxes)
    ce = cross_entropy(answer_logits, answers)
    l1 = ad.abs_(bbox - tb).mean()
    g = (1.0 - giou(bbox, tb)).mean()
    return ce + l1 * lambda_l1 + g * lambda_giou


# numpy versions for evaluation


def box_corners_np(b: np.ndarray) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return np.stack([b[..., 0] - b[..., 2] / 2, b[..., 1] - b[..., 3] / 2,
                     b[..., 0] + b[..., 2] / 2, b[..., 1] + b[..., 3] / 2], axis=-1)


def box_iou_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ca, cb = box_corners_np(a), box_corners_np(b)
    iw = np.clip(np.minimum(ca[..., 2], cb[..., 2]) - np.maximum(ca[..., 0], cb[..., 0]), 0, None)
    ih = np.clip(np.minimum(ca[..., 3], cb[..., 3]) - np.maximum(ca[..., 1], cb[..., 1]), 0, None)
    inter = iw * ih
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    return inter / union


def giou_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return giou(Tensor(np.atleast_2d(a)), Tensor(np.atleast_2d(b))).data
