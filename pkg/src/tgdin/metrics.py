"""Evaluation metrics and their record type.

RMSE and relative MAE pool all (window, user) points of a cell;
Pearson r is computed per (user, trace) series and averaged, with
zero-variance series excluded and counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class MetricRecord:
    model: str
    source: str
    target_capacity_mbps: float
    scenario: str
    rmse_mbps: float
    rel_mae: float
    pearson_r: float           # nan when undefined
    n_windows: int
    pearson_excluded: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def rmse(pred: np.ndarray, true: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError("length mismatch")
    if pred.size == 0:
        raise ValueError("empty series")
    e = pred - true
    return float(np.sqrt(np.mean(e * e)))


def relative_mae(pred: np.ndarray, true: np.ndarray) -> float:
    """Mean absolute error divided by the mean true value."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError("length mismatch")
    if pred.size == 0:
        raise ValueError("empty series")
    denom = float(np.mean(true))
    if denom <= 0:
        raise ValueError("relative MAE undefined: mean(true) is not positive")
    return float(np.mean(np.abs(pred - true)) / denom)


def pearson_r(pred: np.ndarray, true: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    true = np.asarray(true, dtype=np.float64).ravel()
    if pred.shape != true.shape:
        raise ValueError("length mismatch")
    if pred.size < 2:
        raise ValueError("need at least two points")
    pc = pred - pred.mean()
    tc = true - true.mean()
    denom = np.sqrt((pc * pc).sum() * (tc * tc).sum())
    if denom == 0:
        raise ValueError("pearson undefined: zero variance")
    return float(np.clip((pc * tc).sum() / denom, -1.0, 1.0))


def mean_pearson_per_series(preds: list[np.ndarray],
                            trues: list[np.ndarray]) -> tuple[float, int]:
    """Unweighted mean of per-series Pearson r; returns (mean, n_excluded)."""
    vals = []
    excluded = 0
    for p, t in zip(preds, trues):
        try:
            vals.append(pearson_r(p, t))
        except ValueError:
            excluded += 1
    return (float(np.mean(vals)) if vals else float("nan")), excluded


def cell_record(model: str, source: str, capacity: float, scenario: str,
                pred_windows: np.ndarray, true_windows: np.ndarray,
                series_pred: list[np.ndarray],
                series_true: list[np.ndarray]) -> MetricRecord:
    """Build one record from pooled points plus per-(user, trace) series."""
    r, excl = mean_pearson_per_series(series_pred, series_true)
    return MetricRecord(
        model=model, source=source, target_capacity_mbps=float(capacity),
        scenario=scenario,
        rmse_mbps=rmse(pred_windows, true_windows),
        rel_mae=relative_mae(pred_windows, true_windows),
        pearson_r=r, n_windows=int(pred_windows.size),
        pearson_excluded=excl)
