"""Soft-set class memberships and multiclass confusion matrices.

Class indices are 1-based at this module's boundary (``1..d``) and
0-based inside numpy arrays.  A confusion matrix is a plain ``(d, d)``
float array with rows indexed by the true class and columns by the
(soft) predicted class.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .heaviside import check_temperature, heaviside_linear_op, heaviside_linear_vec

SIMPLEX_TOL = 1e-9


class BinaryCardinalities(NamedTuple):
    tp: float
    fn: float
    fp: float
    tn: float


def check_prob_vector(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] < 2:
        raise ValueError("probability vectors need at least two components")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probability components must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("probability vector does not sum to 1")
    return p


def _check_class(k: int, d: int) -> int:
    if not 1 <= int(k) <= d:
        raise ValueError(f"class index {k} outside 1..{d}")
    return int(k) - 1


def predict_hard(p) -> np.ndarray:
    """One-hot encoding of the argmax (lowest index wins ties); works on batches."""
    p = check_prob_vector(p)
    out = np.zeros_like(p)
    np.put_along_axis(out, np.argmax(p, axis=-1)[..., None], 1.0, axis=-1)
    return out


def predict_soft(p, T: float) -> np.ndarray:
    """L1-normalised soft step memberships of ``p`` at temperature ``T``."""
    p = check_prob_vector(p)
    h = heaviside_linear_vec(p, T)
    norm = h.sum(axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ValueError("soft membership has L1 norm below 1e-12")
    return h / norm


def predict_soft_op(p: ad.Tensor, T: float, detach_threshold: bool = False) -> ad.Tensor:
    """Graph version of :func:`predict_soft` for a batch of probability rows."""
    check_temperature(T)
    return ad.l1_normalize(heaviside_linear_op(p, T, detach_threshold=detach_threshold))


def phi(y: int, yhat, d: int) -> np.ndarray:
    """Confusion mass of one example: row ``y`` holds the membership vector."""
    row = _check_class(y, d)
    yhat = np.asarray(yhat, dtype=np.float64)
    if yhat.shape != (d,):
        raise ValueError(f"membership vector must have length {d}")
    out = np.zeros((d, d))
    out[row] = yhat
    return out


def one_hot(labels, d: int) -> np.ndarray:
    """``(n, d)`` indicator matrix for 1-based labels."""
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ValueError("labels must be a 1-D sequence")
    if labels.size and (labels.min() < 1 or labels.max() > d):
        raise ValueError(f"labels must lie in 1..{d}")
    out = np.zeros((labels.size, d))
    out[np.arange(labels.size), labels.astype(int) - 1] = 1.0
    return out


def _check_batch(labels, predictions) -> tuple[np.ndarray, int]:
    n_labels = len(labels)
    n_preds = predictions.shape[0] if hasattr(predictions, "shape") else len(predictions)
    if n_labels == 0:
        raise ValueError("confusion matrix of an empty batch")
    if n_labels != n_preds:
        raise ValueError(f"{n_labels} labels but {n_preds} predictions")
    return np.asarray(labels), n_labels


def confusion(labels: Sequence[int], predictions, d: int) -> np.ndarray:
    """Sum of :func:`phi` over the batch; one-hot predictions give the usual counts."""
    labels, _ = _check_batch(labels, predictions)
    predictions = np.asarray(predictions, dtype=np.float64)
    if predictions.ndim != 2 or predictions.shape[1] != d:
        raise ValueError(f"predictions must have shape (n, {d})")
    return one_hot(labels, d).T @ predictions


def confusion_op(labels: Sequence[int], predictions: ad.Tensor, d: int) -> ad.Tensor:
    """Graph version of :func:`confusion` (labels are constants)."""
    labels, _ = _check_batch(labels, predictions)
    return ad.matmul(ad.Tensor(one_hot(labels, d).T), predictions)


def confusion_from_indices(true_idx: np.ndarray, pred_idx: np.ndarray, d: int) -> np.ndarray:
    """Integer confusion counts from 0-based index arrays."""
    out = np.zeros((d, d))
    np.add.at(out, (np.asarray(true_idx), np.asarray(pred_idx)), 1.0)
    return out


def binary_cardinalities(C, k: int) -> BinaryCardinalities:
    """One-versus-rest TP/FN/FP/TN of class ``k``."""
    C = np.asarray(C, dtype=np.float64)
    i = _check_class(k, C.shape[0])
    tp = C[i, i]
    fn = C[i].sum() - tp
    fp = C[:, i].sum() - tp
    rest = np.delete(np.delete(C, i, axis=0), i, axis=1)
    tn = rest.sum()
    return BinaryCardinalities(float(tp), float(fn), float(fp), float(tn))


def scale(C, factor: float) -> np.ndarray:
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    return np.asarray(C, dtype=np.float64) * factor
