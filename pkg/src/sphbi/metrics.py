"""Confusion matrices, per-class recall/precision and evaluation reports."""

from __future__ import annotations

import csv
import json

import numpy as np

from .codec import images
from .labeling import CLASS_NAMES

BINARY_NAMES = ("Normal", "Attack")


class ConfusionMatrix:
    """Rows are true labels, columns predicted labels."""

    def __init__(self, names):
        self.names = tuple(names)
        k = len(self.names)
        self.counts = np.zeros((k, k), dtype=np.int64)

    @classmethod
    def from_labels(cls, y_true, y_pred, names) -> "ConfusionMatrix":
        cm = cls(names)
        cm.add(y_true, y_pred)
        return cm

    def add(self, y_true, y_pred) -> None:
        k = len(self.names)
        idx = np.asarray(y_true, dtype=np.int64) * k + np.asarray(y_pred, dtype=np.int64)
        self.counts += np.bincount(idx, minlength=k * k).reshape(k, k)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        out = ConfusionMatrix(self.names)
        out.counts = self.counts + other.counts
        return out

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else float("nan")

    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def recall(self) -> np.ndarray:
        """Per-class recall; NaN where the class has no true samples."""
        rows = self.support().astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, np.diag(self.counts) / rows, np.nan)

    def precision(self) -> np.ndarray:
        cols = self.counts.sum(axis=0).astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(cols > 0, np.diag(self.counts) / cols, np.nan)

    def normalized(self) -> np.ndarray:
        rows = self.support()[:, None].astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rows > 0, self.counts / rows, np.nan)

    def attack_precision(self, normal: int = 0) -> float:
        """TP / (TP + FP) with every non-normal class counted as 'attack'."""
        attack_pred = np.ones(len(self.names), dtype=bool)
        attack_pred[normal] = False
        pred_attack = self.counts[:, attack_pred].sum()
        tp = self.counts[np.ix_(attack_pred, attack_pred)].sum()
        return float(tp / pred_attack) if pred_attack else float("nan")

    def to_dict(self) -> dict:
        rec, prec, sup = self.recall(), self.precision(), self.support()
        per = {
            name: {
                "recall": None if np.isnan(rec[i]) else float(rec[i]),
                "precision": None if np.isnan(prec[i]) else float(prec[i]),
                "support": int(sup[i]),
            }
            for i, name in enumerate(self.names)
        }
        norm = self.normalized()
        return {
            "accuracy": self.accuracy(),
            "attack_precision": self.attack_precision(),
            "total": self.total,
            "per_class": per,
            "matrix": self.counts.tolist(),
            "normalized": [[None if np.isnan(v) else float(v) for v in row] for row in norm],
            "labels": list(self.names),
        }

    def write_csv(self, path, normalized: bool = False) -> None:
        data = self.normalized() if normalized else self.counts
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\pred"] + list(self.names))
            for name, row in zip(self.names, data):
                w.writerow([name] + [("" if np.isnan(v) else f"{v:.6f}") if normalized else int(v) for v in row])


def evaluate(clf, store, chunk: int = 8192) -> ConfusionMatrix:
    """Stream the (uncapped) test set through ``clf`` in chunks."""
    names = BINARY_NAMES if clf.task == "binary" else CLASS_NAMES
    cm = ConfusionMatrix(names)
    y_all = store.targets(clf.task)
    for i in range(0, len(store), chunk):
        x = images(store.vectors[i : i + chunk], clf.approach, dtype=clf.net.dtype)
        cm.add(y_all[i : i + chunk], clf.predict(x))
    return cm


def false_alarm_projection(normal_recall: float, normal_count: int) -> float:
    if not 0.0 <= normal_recall <= 1.0:
        raise ValueError("recall must lie in [0, 1]")
    return (1.0 - normal_recall) * normal_count


def write_report(cm: ConfusionMatrix, path, meta: dict | None = None) -> dict:
    rep = {"meta": meta or {}, **cm.to_dict()}
    with open(path, "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return rep
