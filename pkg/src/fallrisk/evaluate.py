"""Confusion metrics, threshold choice, ROC/AUC and leave-one-out CV."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from ._parallel import map_ordered
from .bma import NORMALIZED_MARGINAL, bma_predict, build_ensemble
from .datamodel import CohortDataset, encode, iter_pool
from .exceptions import DegenerateFold, NumericError, SingleClass
from .laplace import fit_design
from .predict import predict_fit
from .selection import forward_select

logger = logging.getLogger(__name__)

PATIENT = "patient"
FALL = "fall"
FIXED = "fixed"
PIPELINE = "pipeline"


def _labels(labels):
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return y.astype(bool)


def _check_both(y):
    if y.all() or not y.any():
        raise SingleClass("both outcome classes are needed")


def _rate(num, den):
    return num / den if den else float("nan")


def confusion_metrics(labels, probabilities, threshold):
    """Rates and counts when ``probability >= threshold`` is called positive."""
    y = _labels(labels)
    p = np.asarray(probabilities, dtype=float)
    pred = p >= threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    tn = int(np.sum(~pred & ~y))
    fn = int(np.sum(~pred & y))
    return {
        "sensitivity": _rate(tp, tp + fn),
        "specificity": _rate(tn, tn + fp),
        "accuracy": _rate(tp + tn, y.size),
        "counts": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
    }


def _counts_at(y, p, thresholds):
    """(TP, TN) at each threshold, positive meaning p >= threshold."""
    pos = np.sort(p[y])
    neg = np.sort(p[~y])
    tp = pos.size - np.searchsorted(pos, thresholds, side="left")
    tn = np.searchsorted(neg, thresholds, side="left")
    return tp, tn


def choose_threshold(labels, probabilities):
    """Threshold maximising Youden's J over the observed scores plus 0 and 1.

    J is compared in exact integer form (J * P * N), and ties go to the
    smallest threshold.
    """
    y = _labels(labels)
    _check_both(y)
    p = np.asarray(probabilities, dtype=float)
    candidates = np.unique(np.concatenate([p, [0.0, 1.0]]))
    tp, tn = _counts_at(y, p, candidates)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    score = tp.astype(np.int64) * n_neg + tn.astype(np.int64) * n_pos
    return float(candidates[int(np.argmax(score))])


def youden_j(labels, probabilities, threshold):
    m = confusion_metrics(labels, probabilities, threshold)
    return m["sensitivity"] + m["specificity"] - 1.0


def roc_auc(labels, probabilities):
    """ROC points ``(threshold, fpr, tpr)`` and the trapezoid AUC.

    Thresholds sweep the distinct scores from high to low; the first point
    (threshold ``inf``) is (0, 0). The AUC numerator is accumulated in
    integers, so it equals the Mann-Whitney statistic with ties counted
    one half exactly.
    """
    y = _labels(labels)
    _check_both(y)
    p = np.asarray(probabilities, dtype=float)
    thresholds = np.unique(p)[::-1]
    tp, tn = _counts_at(y, p, thresholds)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    fp = n_neg - tn
    points = [(float("inf"), 0.0, 0.0)]
    numerator = 0
    prev_tp = prev_fp = 0
    for t, a, b in zip(thresholds, tp.tolist(), fp.tolist()):
        numerator += (b - prev_fp) * (a + prev_tp)
        prev_tp, prev_fp = a, b
        points.append((float(t), b / n_neg, a / n_pos))
    return points, numerator / (2 * n_pos * n_neg)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    row_ids: list
    labels: np.ndarray
    probabilities: np.ndarray
    threshold: float | None = None
    sensitivity: float | None = None
    specificity: float | None = None
    accuracy: float | None = None
    counts: dict | None = None
    roc_points: list = field(default_factory=list)
    auc: float | None = None
    skipped: list = field(default_factory=list)
    label: str = ""

    def to_dict(self):
        return {
            "label": self.label,
            "n": len(self.row_ids),
            "threshold": self.threshold,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "counts": self.counts,
            "auc": self.auc,
            "skipped_folds": [{"unit": u, "reason": r} for u, r in self.skipped],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    def write_roc_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["threshold", "fpr", "tpr"])
            for t, fpr, tpr in self.roc_points:
                writer.writerow([repr(t), repr(fpr), repr(tpr)])

    def write_predictions_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row_id", "true_label", "loo_probability"])
            for rid, y, p in zip(self.row_ids, self.labels, self.probabilities):
                writer.writerow([rid, int(y), repr(float(p))])

    def write(self, directory, prefix=""):
        os.makedirs(directory, exist_ok=True)
        self.write_roc_csv(os.path.join(directory, f"{prefix}roc_points.csv"))
        self.write_predictions_csv(os.path.join(directory, f"{prefix}loo_predictions.csv"))


def evaluate_predictions(row_ids, labels, probabilities, skipped=(), label=""):
    """Threshold, confusion rates and ROC for a set of predictions.

    With a single outcome class the rates and ROC are left empty.
    """
    y = np.asarray(labels, dtype=int)
    p = np.asarray(probabilities, dtype=float)
    report = EvalReport(list(row_ids), y, p, skipped=list(skipped), label=label)
    try:
        report.threshold = choose_threshold(y, p)
        report.roc_points, report.auc = roc_auc(y, p)
    except SingleClass:
        return report
    m = confusion_metrics(y, p, report.threshold)
    report.sensitivity = m["sensitivity"]
    report.specificity = m["specificity"]
    report.accuracy = m["accuracy"]
    report.counts = m["counts"]
    return report


# ---------------------------------------------------------------------------
# Leave-one-out
# ---------------------------------------------------------------------------


@dataclass
class LooResult:
    """Per-target LOO predictions (``fixed``, or ``selected`` and ``bma``)."""

    reports: dict
    unit: str
    mode: str
    stage: int

    def to_dict(self):
        return {
            "unit": self.unit,
            "mode": self.mode,
            "stage": self.stage,
            "reports": {k: r.to_dict() for k, r in self.reports.items()},
        }


def _folds(design, unit):
    """(unit id, held-out row indices) in row order of first appearance."""
    if design.stage == 1 or unit == FALL:
        return [(str(rid), np.array([i])) for i, rid in enumerate(design.row_ids)]
    folds = []
    for g, pid in enumerate(design.group_ids):
        folds.append((str(pid), np.flatnonzero(design.groups == g)))
    return folds


def loo_cv(dataset, stage=1, unit=None, mode=FIXED, variables=(), pool=None, prior=None,
           fit_settings=None, grid_settings=None, mc=None, weight_rule=NORMALIZED_MARGINAL,
           threads=1, standardize=False, on_degenerate="skip"):
    """Leave-one-out predictions and reports.

    ``mode="fixed"`` refits the model ``variables`` on every training fold.
    ``mode="pipeline"`` re-runs forward selection over ``pool`` inside each
    fold and predicts with both the selected model and the BMA ensemble.
    Stage-2 folds hold out a whole patient (``unit="patient"``, predicted as
    a new patient) or a single fall (``unit="fall"``, predicted through the
    patient's estimated random intercept when the patient keeps other falls
    in training). A training fold with one outcome class is skipped and
    recorded, or fitted anyway with ``on_degenerate="fit"``.
    """
    stage = int(stage)
    unit = unit or PATIENT
    if unit not in (PATIENT, FALL):
        raise ValueError(f"unit must be {PATIENT!r} or {FALL!r}")
    if mode not in (FIXED, PIPELINE):
        raise ValueError(f"mode must be {FIXED!r} or {PIPELINE!r}")
    if on_degenerate not in ("skip", "fit"):
        raise ValueError("on_degenerate must be 'skip' or 'fit'")
    if isinstance(dataset, CohortDataset):
        names = list(iter_pool(dataset, pool, stage)) if mode == PIPELINE else list(variables)
        design = encode(dataset, names, stage=stage, standardize=standardize)
    else:
        design = dataset
    if mode == FIXED:
        design = design.subset(variables)
    folds = _folds(design, unit)

    def run_fold(fold):
        unit_id, test = fold
        train = np.setdiff1d(np.arange(design.n_rows), test)
        train_design = design.take(train)
        test_design = design.take(test)
        y_train = train_design.y
        if y_train.size == 0 or y_train.min() == y_train.max():
            if on_degenerate == "skip":
                return unit_id, test, None, "training fold has a single outcome class"
        known = (stage == 2 and unit == FALL
                 and test_design.group_ids[0] in set(train_design.group_ids))

        def predict(fit, rows):
            return predict_fit(fit, rows, patient_known=known, mc=mc).probabilities

        try:
            if mode == FIXED:
                fit = fit_design(train_design, prior, fit_settings, grid_settings)
                return unit_id, test, {"fixed": predict(fit, test_design)}, None
            trace = forward_select(train_design, None, stage, prior, fit_settings,
                                   grid_settings)
            selected = trace.final_fit
            ensemble = build_ensemble(trace, weight_rule)
            return unit_id, test, {
                "selected": predict(selected, test_design.subset(selected.model)),
                "bma": bma_predict(ensemble, test_design, predict),
            }, None
        except (NumericError, DegenerateFold, np.linalg.LinAlgError) as exc:
            return unit_id, test, None, f"{type(exc).__name__}: {exc}"

    results = map_ordered(run_fold, folds, threads)
    targets = ["fixed"] if mode == FIXED else ["selected", "bma"]
    preds = {t: np.full(design.n_rows, np.nan) for t in targets}
    skipped = []
    for unit_id, test, out, reason in results:
        if out is None:
            logger.info("fold %s skipped: %s", unit_id, reason)
            skipped.append((unit_id, reason))
            continue
        for t in targets:
            preds[t][test] = out[t]
    reports = {}
    for t in targets:
        keep = ~np.isnan(preds[t])
        reports[t] = evaluate_predictions(
            [rid for rid, k in zip(design.row_ids, keep) if k],
            design.y[keep].astype(int),
            preds[t][keep],
            skipped,
            label=t,
        )
    return LooResult(reports, unit, mode, stage)
