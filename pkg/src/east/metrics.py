"""Confusion-matrix metrics, their differentiable counterparts, and baseline losses.

Plain functions (``macro_f_beta``, ``accuracy``, ``mcc``...) evaluate a
numpy confusion matrix.  The ``*_op`` functions build the same quantity
inside an autodiff graph so it can be trained against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .softset import binary_cardinalities, one_hot

KINDS = ("macro_f_beta", "accuracy", "mcc")
DICE_SMOOTH = 1e-7
CE_CLAMP = 1e-12


@dataclass(frozen=True)
class MetricSpec:
    """Which confusion-matrix metric to surrogate.

    ``betas`` is only used by ``macro_f_beta``; a single value is broadcast
    to every class.
    """

    kind: str = "macro_f_beta"
    betas: tuple[float, ...] | float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}; expected one of {KINDS}")
        betas = self.betas
        if np.ndim(betas) == 0:
            betas = float(betas)
            bad = betas <= 0
        else:
            betas = tuple(float(b) for b in betas)
            bad = any(b <= 0 for b in betas)
        if bad:
            raise ValueError("every beta must be positive")
        object.__setattr__(self, "betas", betas)

    def beta_vector(self, d: int) -> np.ndarray:
        if isinstance(self.betas, float):
            return np.full(d, self.betas)
        if len(self.betas) != d:
            raise ValueError(f"got {len(self.betas)} betas for {d} classes")
        return np.asarray(self.betas)

    @property
    def name(self) -> str:
        if self.kind != "macro_f_beta":
            return self.kind
        if isinstance(self.betas, float):
            return f"macro_f{self.betas:g}"
        return "macro_f_beta[" + ",".join(f"{b:g}" for b in self.betas) + "]"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "betas": self.betas}

    @classmethod
    def from_dict(cls, data: dict) -> "MetricSpec":
        betas = data.get("betas", 1.0)
        return cls(data.get("kind", "macro_f_beta"), betas if np.ndim(betas) == 0 else tuple(betas))


def _ratio(num: float, den: float) -> float:
    return num / den if den != 0 else 0.0


# --------------------------------------------------------------------------
# hard (numpy) metrics

def precision_recall(C, k: int) -> tuple[float, float]:
    card = binary_cardinalities(C, k)
    return _ratio(card.tp, card.tp + card.fp), _ratio(card.tp, card.tp + card.fn)


def f_beta_class(C, k: int, beta: float) -> float:
    if beta <= 0:
        raise ValueError("beta must be positive")
    p, r = precision_recall(C, k)
    b2 = beta * beta
    return _ratio((1 + b2) * p * r, b2 * p + r)


def macro_f_beta(C, betas: Sequence[float] | float = 1.0) -> float:
    C = np.asarray(C, dtype=np.float64)
    d = C.shape[0]
    betas = MetricSpec("macro_f_beta", betas).beta_vector(d)
    return float(np.mean([f_beta_class(C, k + 1, betas[k]) for k in range(d)]))


def accuracy(C) -> float:
    C = np.asarray(C, dtype=np.float64)
    total = C.sum()
    if total <= 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(C) / total)


def mcc(C) -> float:
    """Multiclass Matthews correlation (Gorodkin's R_K)."""
    C = np.asarray(C, dtype=np.float64)
    s = C.sum()
    if s <= 0:
        raise ValueError("MCC of an empty confusion matrix")
    t = C.sum(axis=1)
    p = C.sum(axis=0)
    cov = s * np.trace(C) - t @ p
    var_t = s * s - t @ t
    var_p = s * s - p @ p
    den = np.sqrt(max(var_t, 0.0) * max(var_p, 0.0))
    return float(cov / den) if den > 0 else 0.0


def evaluate(spec: MetricSpec, C) -> float:
    if spec.kind == "macro_f_beta":
        return macro_f_beta(C, spec.beta_vector(np.shape(C)[0]))
    if spec.kind == "accuracy":
        return accuracy(C)
    return mcc(C)


def per_class_report(C, betas: Sequence[float] | float = 1.0) -> list[dict]:
    C = np.asarray(C, dtype=np.float64)
    d = C.shape[0]
    betas = MetricSpec("macro_f_beta", betas).beta_vector(d)
    rows = []
    for k in range(1, d + 1):
        p, r = precision_recall(C, k)
        rows.append({
            "class": k,
            "support": float(C[k - 1].sum()),
            "precision": p,
            "recall": r,
            "f1": f_beta_class(C, k, 1.0),
            "beta": float(betas[k - 1]),
            "f_beta": f_beta_class(C, k, betas[k - 1]),
        })
    return rows


def summary(C, betas: Sequence[float] | float = 1.0) -> dict:
    """Table-style metrics of a hard confusion matrix: F1, Acc, MCC plus per-class rows."""
    return {
        "f1": macro_f_beta(C, 1.0),
        "f_beta": macro_f_beta(C, betas),
        "accuracy": accuracy(C),
        "mcc": mcc(C),
        "per_class": per_class_report(C, betas),
    }


# --------------------------------------------------------------------------
# graph metrics

def _diag_rows_cols(C: ad.Tensor):
    d = C.shape[0]
    tp = ad.sum(C * np.eye(d), axis=1)
    return tp, ad.sum(C, axis=1), ad.sum(C, axis=0)


def macro_f_beta_op(C: ad.Tensor, betas: np.ndarray) -> ad.Tensor:
    # (1+b^2) P R / (b^2 P + R) == (1+b^2) tp / (b^2 (tp+fn) + (tp+fp))
    tp, rows, cols = _diag_rows_cols(C)
    b2 = np.asarray(betas, dtype=np.float64) ** 2
    f = ad.safe_divide(tp * (1.0 + b2), rows * b2 + cols)
    return ad.mean(f)


def accuracy_op(C: ad.Tensor) -> ad.Tensor:
    tp, _, _ = _diag_rows_cols(C)
    return ad.divide(ad.sum(tp), ad.sum(C))


def mcc_op(C: ad.Tensor) -> ad.Tensor:
    tp, t, p = _diag_rows_cols(C)
    s = ad.sum(C)
    cov = s * ad.sum(tp) - ad.sum(t * p)
    var_t = ad.maximum(s * s - ad.sum(t * t), 0.0)
    var_p = ad.maximum(s * s - ad.sum(p * p), 0.0)
    return ad.safe_divide(cov, ad.sqrt(var_t * var_p))


def metric_op(spec: MetricSpec, C: ad.Tensor) -> ad.Tensor:
    if spec.kind == "macro_f_beta":
        return macro_f_beta_op(C, spec.beta_vector(C.shape[0]))
    if spec.kind == "accuracy":
        return accuracy_op(C)
    return mcc_op(C)


def surrogate_loss(spec: MetricSpec, C_T: ad.Tensor) -> ad.Tensor:
    """Map the soft metric into a loss in ``[0, 1]``: ``1 - M``, or ``(1 - M) / 2`` for MCC."""
    m = metric_op(spec, ad.constant(C_T))
    if spec.kind == "mcc":
        return (1.0 - m) * 0.5
    return 1.0 - m


def cross_entropy(p: ad.Tensor, labels) -> ad.Tensor:
    """Mean negative log-probability of the true class (1-based labels)."""
    p = ad.constant(p)
    y = one_hot(labels, p.shape[1])
    if y.shape[0] == 0:
        raise ValueError("cross entropy of an empty batch")
    picked = ad.sum(p * y, axis=1)
    return -ad.mean(ad.log(ad.maximum(picked, CE_CLAMP)))


def dice_loss(p: ad.Tensor, labels) -> ad.Tensor:
    """One minus the smoothed soft Dice coefficient averaged over classes."""
    p = ad.constant(p)
    y = one_hot(labels, p.shape[1])
    if y.shape[0] == 0:
        raise ValueError("dice loss of an empty batch")
    overlap = ad.sum(p * y, axis=0)
    mass = ad.sum(p, axis=0) + y.sum(axis=0)
    dice = (overlap * 2.0 + DICE_SMOOTH) / (mass + DICE_SMOOTH)
    return 1.0 - ad.mean(dice)
