"""Classification metrics: confusion matrix, accuracy, chance-corrected kappa."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise UsageError("prediction/label lengths disagree")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (y_true, y_pred), 1)
    return out


def accuracy(conf: np.ndarray) -> float:
    total = conf.sum()
    if total == 0:
        raise UsageError("empty confusion matrix")
    return float(np.trace(conf) / total)


def cohen_kappa(conf: np.ndarray) -> float:
    """(p_o - p_e) / (1 - p_e); reported as 1 when chance agreement p_e is 1."""
    total = conf.sum()
    if total == 0:
        raise UsageError("empty confusion matrix")
    p_o = np.trace(conf) / total
    rows = conf.sum(axis=1) / total
    cols = conf.sum(axis=0) / total
    p_e = float((rows * cols).sum())
    if abs(1.0 - p_e) < 1e-15:
        return 1.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass
class Metrics:
    fold_accuracy: list = field(default_factory=list)
    fold_kappa: list = field(default_factory=list)

    def add_fold(self, conf: np.ndarray):
        self.fold_accuracy.append(accuracy(conf))
        self.fold_kappa.append(cohen_kappa(conf))

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.fold_accuracy))

    @property
    def mean_kappa(self) -> float:
        return float(np.mean(self.fold_kappa))

    @property
    def std_kappa(self) -> float:
        return float(np.std(self.fold_kappa))

    def rows(self) -> list[dict]:
        out = [
            {"fold": i, "accuracy": a, "kappa": k}
            for i, (a, k) in enumerate(zip(self.fold_accuracy, self.fold_kappa))
        ]
        out.append(
            {
                "fold": "mean",
                "accuracy": self.mean_accuracy,
                "kappa": self.mean_kappa,
            }
        )
        out.append(
            {"fold": "std", "accuracy": self.std_accuracy, "kappa": self.std_kappa}
        )
        return out
