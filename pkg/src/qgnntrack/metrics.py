"""ROC/AUC and CSV reports over training histories."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, DegenerateClassError

CURVE_HEADER = ["step", "metric", "mean", "std", "n_runs"]
SUMMARY_HEADER = ["model", "ansatz", "n_hidden", "n_iterations", "param_count", "final_val_auc"]


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending; first entry +inf gives the (0, 0) point
    fpr: np.ndarray
    tpr: np.ndarray


def _counts(scores, labels):
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size != y.size:
        raise ValueError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClassError("ROC needs at least one positive and one negative label")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    pos_sorted = pos[order]
    # Last index of each group of tied scores.
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp = np.cumsum(pos_sorted)[ends]
    fp = (ends + 1) - tp
    return s_sorted[ends], np.r_[0, tp], np.r_[0, fp], n_pos, n_neg


def roc_curve(scores, labels) -> RocCurve:
    """One point per distinct threshold plus (0, 0); ties are grouped."""
    thr, tp, fp, n_pos, n_neg = _counts(scores, labels)
    return RocCurve(np.r_[np.inf, thr], fp / n_neg, tp / n_pos)


def auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve.

    Accumulated in integer counts, so the result equals the Mann-Whitney
    pair statistic (ties counted one half) up to a single final division.
    """
    _, tp, fp, n_pos, n_neg = _counts(scores, labels)
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return twice_area / (2.0 * n_pos * n_neg)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

_METRICS = ("train_loss", "val_loss", "val_auc")


def _grid(history, metric):
    return [(r.step, getattr(r, metric)) for r in history.records if not math.isnan(getattr(r, metric))]


def learning_curves(histories) -> list:
    """Rows (step, metric, mean, std, n_runs) across runs; std is the population std."""
    histories = list(histories)
    if not histories:
        raise AlignmentError("need at least one history")
    rows = []
    for metric in _METRICS:
        grids = [_grid(h, metric) for h in histories]
        steps = [s for s, _ in grids[0]]
        for g in grids[1:]:
            if [s for s, _ in g] != steps:
                raise AlignmentError(f"runs disagree on the {metric} step grid")
        values = np.array([[v for _, v in g] for g in grids], dtype=float)
        for j, step in enumerate(steps):
            col = values[:, j]
            if np.all(col == col[0]):
                # Summation rounding would otherwise leave a spurious nonzero std.
                mean, std = float(col[0]), 0.0
            else:
                mean, std = float(col.mean()), float(col.std())
            rows.append((step, metric, mean, std, len(histories)))
    return rows


def summary_row(histories) -> tuple:
    """(model, ansatz, n_hidden, n_iterations, param_count, mean final val AUC)."""
    h0 = histories[0]
    cfg = h0.model_config
    aucs = [h.final_val_auc() for h in histories]
    ansatz = "classical" if cfg.classical_baseline else cfg.ansatz.value
    return (cfg.label(), ansatz, cfg.n_hidden, cfg.n_iterations, h0.param_count, float(np.mean(aucs)))


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def emit_history(histories, out_dir, append_summary: bool = False) -> tuple:
    """Write learning_curves.csv and summary.csv into ``out_dir``.

    ``histories`` are runs of one model configuration. Returns the two paths.
    """
    histories = list(histories)
    rows = learning_curves(histories)
    os.makedirs(out_dir, exist_ok=True)
    curve_path = os.path.join(out_dir, "learning_curves.csv")
    with open(curve_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    summary_path = os.path.join(out_dir, "summary.csv")
    append_summary_row(summary_path, summary_row(histories), append=append_summary)
    return curve_path, summary_path


def append_summary_row(path, row, append: bool = True) -> None:
    exists = append and os.path.exists(path)
    with open(path, "a" if exists else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(SUMMARY_HEADER)
        w.writerow([_fmt(v) for v in row])
