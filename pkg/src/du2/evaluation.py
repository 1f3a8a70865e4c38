"""Evaluation runs: per-sample and aggregate weighted metrics, CSV output.

Metric rows follow the fixed schema
    sample_id, mae, rmse, bad_1.25, bad_2, bad_3, occ_mae, occ_rmse,
    occ_bad_2, occ_bad_3
with an ``aggregate`` row pooling pixels across samples. The optional
affine-fit path corrects each prediction with the confidence-weighted
least-squares affine map before scoring (the protocol used when comparing
against methods that only predict disparity up to an affine transform).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .losses import eval_affine_fit, eval_metrics

__all__ = ["metric_row", "evaluate_predictions", "write_metrics_csv", "write_affine_csv"]

CSV_FIELDS = ["sample_id", "mae", "rmse", "bad_1.25", "bad_2", "bad_3",
              "occ_mae", "occ_rmse", "occ_bad_2", "occ_bad_3"]


def metric_row(sample_id, prediction, d_gt, c_gt, c_occ) -> dict:
    all_px = eval_metrics(prediction, d_gt, c_gt, thresholds=(1.25, 2.0, 3.0))
    occ = eval_metrics(prediction, d_gt, c_occ, thresholds=(2.0, 3.0))
    return {
        "sample_id": sample_id,
        "mae": all_px["mae"],
        "rmse": all_px["rmse"],
        "bad_1.25": all_px["bad_1.25"],
        "bad_2": all_px["bad_2"],
        "bad_3": all_px["bad_3"],
        "occ_mae": occ["mae"],
        "occ_rmse": occ["rmse"],
        "occ_bad_2": occ["bad_2"],
        "occ_bad_3": occ["bad_3"],
    }


def evaluate_predictions(predictions, samples, affine_fit: bool = False):
    """Rows for each sample plus a pixel-pooled aggregate row."""
    rows = []
    pooled_pred, pooled_gt, pooled_c, pooled_occ = [], [], [], []
    for i, (pred, sample) in enumerate(zip(predictions, samples)):
        pred = np.asarray(pred, dtype=np.float64)
        if affine_fit:
            pred = eval_affine_fit(pred, sample.gt.d_r, sample.gt.c_r)
        rows.append(metric_row(f"{i:05d}", pred, sample.gt.d_r, sample.gt.c_r,
                               sample.gt.c_occ))
        pooled_pred.append(pred.ravel())
        pooled_gt.append(sample.gt.d_r.ravel())
        pooled_c.append(sample.gt.c_r.ravel())
        pooled_occ.append(sample.gt.c_occ.ravel())
    rows.append(metric_row(
        "aggregate",
        np.concatenate(pooled_pred),
        np.concatenate(pooled_gt),
        np.concatenate(pooled_c),
        np.concatenate(pooled_occ),
    ))
    return rows


def write_metrics_csv(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            formatted = {"sample_id": row["sample_id"]}
            for key in CSV_FIELDS[1:]:
                formatted[key] = f"{row[key]:.6f}"
            writer.writerow(formatted)


def write_affine_csv(path, entries) -> None:
    """Debug dump of the fitted (alpha, beta) per sample."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "alpha", "beta"])
        for sample_id, alpha, beta in entries:
            writer.writerow([sample_id, f"{alpha:.9f}", f"{beta:.9f}"])
