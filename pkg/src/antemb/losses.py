"""Prediction losses drawn from the Bregman divergences of exponential
families: squared error (Gaussian emission) and cross-entropy
(multinomial emission).
"""

from __future__ import annotations

import warnings
from enum import Enum

import numpy as np

__all__ = ["LossKind", "bregman_loss", "bregman_grad", "softmax"]

# Probabilities are clamped here before taking logs so a zero predicted
# probability under a positive target yields a large finite loss.
PROB_EPS = 1e-12


class LossKind(str, Enum):
    SQUARED_ERROR = "squared_error"
    CROSS_ENTROPY = "cross_entropy"


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check_lengths(y: np.ndarray, yhat: np.ndarray) -> None:
    if y.shape != yhat.shape:
        raise ValueError(f"dimension mismatch: {y.shape} vs {yhat.shape}")


def bregman_loss(y, yhat, kind: LossKind | str) -> float:
    """Divergence between target ``y`` and prediction ``yhat``.

    squared_error: ``0.5 * ||y - yhat||^2``.

    cross_entropy: ``-sum_j y_j log(yhat_j)`` with ``yhat`` a probability
    vector and ``y`` one-hot or a distribution.  The additive term that
    depends only on ``y`` (its negative entropy) is omitted: it is
    constant in the prediction and has zero gradient.
    """
    kind = LossKind(kind)
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    _check_lengths(y, yhat)
    if kind is LossKind.SQUARED_ERROR:
        diff = y - yhat
        return 0.5 * float(diff @ diff)
    if abs(yhat.sum() - 1.0) > 1e-6 or np.any(yhat < 0):
        raise ValueError("cross_entropy expects yhat to be a probability vector")
    clamped = np.maximum(yhat, PROB_EPS)
    if np.any((yhat < PROB_EPS) & (y > 0)):
        warnings.warn(
            "predicted probability clamped to %g under a positive target" % PROB_EPS,
            RuntimeWarning,
            stacklevel=2,
        )
    return float(-(y * np.log(clamped)).sum())


def bregman_grad(y, yhat, kind: LossKind | str) -> np.ndarray:
    """Gradient of the loss with respect to the prediction.

    squared_error: gradient w.r.t. ``yhat`` is ``yhat - y``.

    cross_entropy: ``yhat`` is interpreted as pre-softmax scores and the
    gradient is taken through the softmax: ``softmax(yhat) - y``.
    """
    kind = LossKind(kind)
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    _check_lengths(y, yhat)
    if kind is LossKind.SQUARED_ERROR:
        return yhat - y
    return softmax(yhat) - y
