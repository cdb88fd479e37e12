from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..dataset import CLASSES, WindowInstance, stack_windows
from .base import N_CLASSES, Classifier

PREDICTION_COLUMNS = ("instance_id", *(f"p_{c}" for c in CLASSES))


class LevelsOracle(Classifier):
    """Thresholds the window mean of the metric channel: below t1 Normal, below t2 NoFan, else UnderVolt."""

    def __init__(self, t1: float, t2: float, eps: float = 1e-3):
        super().__init__()
        if not t1 < t2:
            raise ValueError("thresholds must satisfy t1 < t2")
        if not 0 <= eps < 1 / 3:
            raise ValueError("eps must be in [0, 1/3)")
        self.t1, self.t2, self.eps = float(t1), float(t2), float(eps)

    def _predict_batch(self, batch):
        m = batch[:, 1, :].mean(axis=1)
        cls = np.where(m < self.t1, 0, np.where(m < self.t2, 1, 2))
        p = np.full((len(batch), N_CLASSES), self.eps)
        p[np.arange(len(batch)), cls] = 1.0 - (N_CLASSES - 1) * self.eps
        return p


def make_levels_oracle(thresholds, eps: float = 1e-3) -> LevelsOracle:
    t1, t2 = thresholds
    return LevelsOracle(t1, t2, eps)


class ConstantClassifier(Classifier):
    """Ignores its input. Useful as a dummy-axiom probe."""

    def __init__(self, probs):
        super().__init__()
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (N_CLASSES,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("probs must be a probability vector over 3 classes")
        self.probs = p

    def _predict_batch(self, batch):
        return np.tile(self.probs, (len(batch), 1))


class ExternalPredictions(Classifier):
    """Probabilities looked up by instance id from a predictions file.

    Only usable for evaluation: masked hybrids have no id, so SHAP rejects it.
    """

    supports_masking = False

    def __init__(self, table: dict):
        super().__init__()
        self.table = table

    def predict_proba(self, x):
        if isinstance(x, WindowInstance):
            self.n_evaluations += 1
            return self.lookup(x.instance_id)
        if isinstance(x, (list, tuple)) and x and isinstance(x[0], WindowInstance):
            self.n_evaluations += len(x)
            return np.stack([self.lookup(w.instance_id) for w in x])
        raise TypeError("external predictions can only be looked up by WindowInstance")

    def lookup(self, instance_id: str) -> np.ndarray:
        try:
            return self.table[instance_id].copy()
        except KeyError:
            raise KeyError(f"no prediction for instance {instance_id!r}") from None


def load_external_predictions(path, manifest: dict | None = None, tol: float = 1e-6) -> ExternalPredictions:
    table = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PREDICTION_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(PREDICTION_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(PREDICTION_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(PREDICTION_COLUMNS)} columns")
            p = np.array([float(v) for v in row[1:]])
            if np.any(p < 0) or abs(p.sum() - 1.0) > tol:
                raise ValueError(f"{path}:{lineno}: probabilities must be >= 0 and sum to 1 (sum={p.sum()!r})")
            table[row[0]] = p
    if manifest is not None:
        missing = [i["id"] for i in manifest.get("instances", []) if i["id"] not in table]
        if missing:
            raise ValueError(f"{path}: {len(missing)} manifest instances lack predictions, e.g. {missing[0]}")
    return ExternalPredictions(table)


def export_predictions(model: Classifier, instances: Sequence[WindowInstance], path) -> Path:
    x, _ = stack_windows(instances)
    probs = model.predict_proba(x) if len(instances) else np.zeros((0, N_CLASSES))
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for inst, p in zip(instances, probs):
            w.writerow([inst.instance_id, *(repr(float(v)) for v in p)])
    return Path(path)


@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted
    precision: np.ndarray
    recall: np.ndarray
    misclassified: list = field(default_factory=list)  # (instance_id, true, predicted)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "precision": dict(zip(CLASSES, self.precision.tolist())),
            "recall": dict(zip(CLASSES, self.recall.tolist())),
            "n_misclassified": len(self.misclassified),
        }


def metrics_from_predictions(y_true, y_pred, ids=None) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.nan_to_num(np.diag(conf) / conf.sum(0))
        recall = np.nan_to_num(np.diag(conf) / conf.sum(1))
    acc = float(np.trace(conf) / max(len(y_true), 1))
    ids = ids if ids is not None else [str(i) for i in range(len(y_true))]
    mis = [(i, int(t), int(p)) for i, t, p in zip(ids, y_true, y_pred) if t != p]
    return Metrics(acc, conf, precision, recall, mis)


def predict_instances(model: Classifier, instances: Sequence[WindowInstance]) -> np.ndarray:
    if isinstance(model, ExternalPredictions):
        return model.predict_proba(list(instances))
    x, _ = stack_windows(instances)
    return model.predict_proba(x)


def evaluate(model: Classifier, instances: Sequence[WindowInstance]) -> Metrics:
    if not instances:
        raise ValueError("cannot evaluate on an empty set")
    probs = predict_instances(model, instances)
    return metrics_from_predictions(
        [w.label for w in instances], np.argmax(probs, axis=1), [w.instance_id for w in instances]
    )


def write_misclassified(metrics: Metrics, path) -> Path:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "true", "predicted"])
        for iid, t, p in metrics.misclassified:
            w.writerow([iid, CLASSES[t], CLASSES[p]])
    return Path(path)
