"""Answer accuracy, macro F-score and box mIoU."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..errors import ContractError
from .losses import box_iou_np


def accuracy(pred, target) -> float:
    pred, target = np.asarray(pred), np.asarray(target)
    return float(np.mean(pred == target))


def macro_f1(pred, target) -> float:
    """Unweighted mean of per-class F1 over every label seen in either array."""
    pred, target = np.asarray(pred), np.asarray(target)
    scores = []
    for c in np.union1d(pred, target):
        tp = np.sum((pred == c) & (target == c))
        fp = np.sum((pred == c) & (target != c))
        fn = np.sum((pred != c) & (target == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def miou(pred_boxes, target_boxes) -> float:
    return float(np.mean(box_iou_np(np.asarray(pred_boxes), np.asarray(target_boxes))))


def predict(model, data, batch_size: int = 64):
    """Argmax answers and boxes for every sample, in eval mode without gradients."""
    was_training = model.training
    model.eval()
    answers, boxes = [], []
    try:
        with ad.no_grad():
            for s in range(0, len(data), batch_size):
                out = model(data.patches[s:s + batch_size], data.questions[s:s + batch_size])
                answers.append(np.argmax(out.answer_logits.data, axis=-1))
                boxes.append(out.bbox.data)
    finally:
        model.train(was_training)
    return np.concatenate(answers), np.concatenate(boxes)


def evaluate(model, data, batch_size: int = 64) -> dict:
    if len(data) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    answers, boxes = predict(model, data, batch_size)
    return {
        "acc": accuracy(answers, data.answers),
        "f_score": macro_f1(answers, data.answers),
        "miou": miou(boxes, data.boxes),
    }
