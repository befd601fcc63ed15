"""The four reported metrics: MAPE and RMSE for the return task, accuracy and
binary F1 for the movement task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, MetricError

# Targets with |y| below this are excluded from MAPE (division guard).
MAPE_EXCLUSION_THRESHOLD = 1e-8


@dataclass
class MetricCounts:
    n_reg: int
    n_cls: int
    n_excluded_mape: int


@dataclass
class MetricsRecord:
    accuracy: float
    f1: float
    mape: float
    rmse: float
    counts: MetricCounts

    def to_json_dict(self) -> dict:
        """The four metric fields, as printed by the eval command."""
        return {"accuracy": self.accuracy, "f1": self.f1,
                "mape": self.mape, "rmse": self.rmse}


def _paired(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1 or y.size < 1:
        raise ContractError(f"metric inputs must be equal-length 1-D, got {y.shape} and {yhat.shape}")
    return y, yhat


def mape(y, yhat) -> tuple[float, int]:
    """Mean absolute percentage error as a fraction, plus the excluded count.

    Entries with |y_i| < 1e-8 are excluded; if everything is excluded the
    metric is undefined.
    """
    y, yhat = _paired(y, yhat)
    keep = np.abs(y) >= MAPE_EXCLUSION_THRESHOLD
    excluded = int(y.size - keep.sum())
    if excluded == y.size:
        raise MetricError("mape: all targets below the exclusion threshold")
    value = float(np.mean(np.abs(y[keep] - yhat[keep]) / np.abs(y[keep])))
    return value, excluded


def rmse(y, yhat) -> float:
    y, yhat = _paired(y, yhat)
    return float(np.sqrt(np.mean((y - yhat) ** 2)))


def _predicted_classes(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != 2:
        raise ContractError(f"probs must be [n, 2], got {probs.shape}")
    # tie-break to class 0
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def accuracy(labels, probs) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    pred = _predicted_classes(probs)
    if labels.shape != pred.shape:
        raise ContractError(f"labels shape {labels.shape} does not match probs rows {pred.shape}")
    return float(np.mean(pred == labels))


def f1(labels, probs) -> float:
    """Binary F1 on the positive class (movement up = 1); 0 when P + R == 0."""
    labels = np.asarray(labels, dtype=np.int64)
    pred = _predicted_classes(probs)
    if labels.shape != pred.shape:
        raise ContractError(f"labels shape {labels.shape} does not match probs rows {pred.shape}")
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def compute_metrics(returns, return_hat, movements, movement_probs) -> MetricsRecord:
    mape_value, excluded = mape(returns, return_hat)
    counts = MetricCounts(n_reg=int(np.asarray(returns).size),
                          n_cls=int(np.asarray(movements).size),
                          n_excluded_mape=excluded)
    return MetricsRecord(accuracy=accuracy(movements, movement_probs),
                         f1=f1(movements, movement_probs),
                         mape=mape_value,
                         rmse=rmse(returns, return_hat),
                         counts=counts)
