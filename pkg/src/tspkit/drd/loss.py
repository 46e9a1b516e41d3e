from __future__ import annotations

import numpy as np

from ..data.registry import IGNORE_LABEL
from ..tensor import Tensor, TensorError, make_op


class LossError(ValueError):
    pass


def downsample_labels(labels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbour resize of (..., H, W) integer labels (pixel-centre sampling)."""
    H, W = labels.shape[-2:]
    rows = np.minimum(((np.arange(out_h) + 0.5) * H / out_h).astype(np.int64), H - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * W / out_w).astype(np.int64), W - 1)
    return labels[..., rows[:, None], cols[None, :]]


def cross_entropy_loss(logits: Tensor, target: np.ndarray, ignore_index: int = IGNORE_LABEL) -> Tensor:
    """Mean negative log-softmax over non-ignored pixels.

    ``logits`` is (B, K, h, w); ``target`` is (B, h, w) integer labels.
    """
    if logits.ndim != 4:
        raise TensorError(f"logits must be (B, K, h, w), got {logits.shape}")
    B, K, h, w = logits.shape
    target = np.asarray(target)
    if target.shape != (B, h, w):
        raise TensorError(f"target shape {target.shape} does not match logits {logits.shape}")
    target = target.astype(np.int64)
    valid = target != ignore_index
    bad = valid & ((target < 0) | (target >= K))
    if bad.any():
        raise LossError(f"label {int(target[bad][0])} outside [0, {K})")
    count = int(valid.sum())
    if count == 0:
        raise LossError("every target pixel is ignored")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))
    logp = x - lse
    safe_t = np.where(valid, target, 0)
    picked = np.take_along_axis(logp, safe_t[:, None], axis=1)[:, 0]
    loss = -(picked * valid).sum() / count

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, safe_t[:, None], np.take_along_axis(grad, safe_t[:, None], axis=1) - 1.0, axis=1)
        grad *= valid[:, None] / count
        return (grad * g,)

    return make_op(np.array(loss), (logits,), backward, "cross_entropy")
