"""Sequence-level evaluation: per-frame top-1 predictions are aggregated
into one label per sequence by majority vote, and all headline metrics are
computed over sequences, not frames.

Conventions, stated once and used everywhere:
  - vote ties break toward the lowest class index;
  - confusion matrices are rows = true class, columns = predicted class;
  - zero-division in precision/recall yields 0.0 and the class is flagged;
  - macro averages are arithmetic means over classes (exactly rounded
    via fsum, so summation order can never change a reported number);
  - macro-F1 is the harmonic mean of macro precision and macro recall;
  - fold aggregation pools confusion matrices elementwise and recomputes
    metrics from the pooled matrix; per-fold means are reported alongside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import SceneDataset
from .model import ClassMismatchError, ComposedNetwork, classify


class EvaluationError(ValueError):
    """Inputs that cannot be evaluated."""


# ------------------------------------------------------------------ votes


def majority_vote(frame_predictions) -> int:
    """Most frequent class index; ties break toward the lowest index."""
    votes = np.asarray(frame_predictions)
    if votes.size == 0:
        raise EvaluationError("majority_vote: empty prediction vector")
    if not np.issubdtype(votes.dtype, np.integer):
        raise EvaluationError(f"majority_vote: predictions must be integers, got {votes.dtype}")
    if (votes < 0).any():
        raise EvaluationError("majority_vote: negative class index")
    # bincount + argmax returns the first (lowest) index among maxima
    return int(np.bincount(votes).argmax())


def sequence_level_accuracy(predicted_labels, true_labels) -> float:
    pred = np.asarray(predicted_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise EvaluationError(
            f"label vectors must be 1-D and equal length, got {pred.shape} vs {true.shape}"
        )
    if pred.size == 0:
        raise EvaluationError("cannot compute accuracy of zero sequences")
    return float(np.count_nonzero(pred == true)) / pred.size


# -------------------------------------------------------------- confusion


@dataclass(frozen=True)
class ConfusionMatrix:
    """Integer counts at [true_class, predicted_class]."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise EvaluationError(f"confusion matrix must be square, got {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            raise EvaluationError("confusion matrix entries must be integers")
        if (counts < 0).any():
            raise EvaluationError("confusion matrix entries must be non-negative")
        names = tuple(self.class_names)
        if len(names) != counts.shape[0]:
            raise EvaluationError(
                f"{len(names)} class names for a {counts.shape[0]}-class matrix"
            )
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "class_names", names)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_matrix(predicted_labels, true_labels, n_classes: int, class_names=None) -> ConfusionMatrix:
    pred = np.asarray(predicted_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise EvaluationError(
            f"label vectors must be 1-D and equal length, got {pred.shape} vs {true.shape}"
        )
    for name, vec in (("predicted", pred), ("true", true)):
        if vec.size and not np.issubdtype(vec.dtype, np.integer):
            raise EvaluationError(f"{name} labels must be integers, got {vec.dtype}")
        if ((vec < 0) | (vec >= n_classes)).any():
            raise EvaluationError(f"{name} labels must lie in [0, {n_classes})")
    if class_names is None:
        class_names = tuple(f"class_{i}" for i in range(n_classes))
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    # unbuffered accumulation: order-independent integer sums
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(counts, class_names)


def _per_class(cm: ConfusionMatrix) -> tuple[list[float], list[float], list[int], list[int]]:
    """Per-class precision/recall with the zero-division-is-0.0 convention.

    The arithmetic is deliberately elementary (one float division per class,
    fsum for means) so an independent implementation lands on identical bits.
    """
    counts = cm.counts
    precisions: list[float] = []
    recalls: list[float] = []
    rows: list[int] = []
    cols: list[int] = []
    for i in range(cm.n_classes):
        tp = float(counts[i, i])
        col = int(counts[:, i].sum())
        row = int(counts[i, :].sum())
        precisions.append(tp / col if col > 0 else 0.0)
        recalls.append(tp / row if row > 0 else 0.0)
        rows.append(row)
        cols.append(col)
    return precisions, recalls, rows, cols


def macro_metrics(cm: ConfusionMatrix) -> tuple[float, float, float]:
    """(macro precision, macro recall, macro F1) over all classes."""
    if cm.total == 0:
        raise EvaluationError("cannot compute metrics of an empty confusion matrix")
    precisions, recalls, _, _ = _per_class(cm)
    macro_p = math.fsum(precisions) / cm.n_classes
    macro_r = math.fsum(recalls) / cm.n_classes
    if macro_p + macro_r > 0.0:
        macro_f1 = 2.0 * macro_p * macro_r / (macro_p + macro_r)
    else:
        macro_f1 = 0.0
    return macro_p, macro_r, macro_f1


def per_class_accuracy(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class sequence recall; NaN marks classes with zero support."""
    if cm.total == 0:
        raise EvaluationError("cannot compute metrics of an empty confusion matrix")
    rows = cm.counts.sum(axis=1)
    out = np.full(cm.n_classes, np.nan)
    present = rows > 0
    out[present] = np.diag(cm.counts)[present] / rows[present]
    return out


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class EvaluationReport:
    confusion: ConfusionMatrix
    sla: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_accuracy: dict[str, float | None]
    zero_support_classes: tuple[str, ...]
    never_predicted_classes: tuple[str, ...]
    metadata: dict = field(default_factory=dict)
    per_fold: tuple["EvaluationReport", ...] = ()
    fold_means: dict[str, float] | None = None

    def __post_init__(self) -> None:
        for name in ("sla", "macro_precision", "macro_recall", "macro_f1"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise EvaluationError(f"{name} = {value} lies outside [0, 1]")
        trace = int(np.trace(self.confusion.counts))
        if self.sla != trace / self.confusion.total:
            raise EvaluationError(
                f"sla {self.sla} inconsistent with confusion diagonal "
                f"{trace}/{self.confusion.total}"
            )

    def to_dict(self) -> dict:
        """Plain built-in types only, safe for structured-text dumps."""
        doc = {
            "class_names": list(self.confusion.class_names),
            "sla": self.sla,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class_accuracy": dict(self.per_class_accuracy),
            "zero_support_classes": list(self.zero_support_classes),
            "never_predicted_classes": list(self.never_predicted_classes),
            "confusion": [[int(v) for v in row] for row in self.confusion.counts],
            "metadata": dict(self.metadata),
        }
        if self.per_fold:
            doc["per_fold"] = [r.to_dict() for r in self.per_fold]
        if self.fold_means is not None:
            doc["fold_means"] = dict(self.fold_means)
        return doc


def report_from_confusion(cm: ConfusionMatrix, metadata: dict | None = None,
                          per_fold: tuple = (), fold_means: dict | None = None) -> EvaluationReport:
    """Derive every report field from a confusion matrix."""
    macro_p, macro_r, macro_f1 = macro_metrics(cm)
    _, _, rows, cols = _per_class(cm)
    accuracy = per_class_accuracy(cm)
    acc_map: dict[str, float | None] = {}
    zero_support = []
    never_predicted = []
    for i, name in enumerate(cm.class_names):
        acc_map[name] = None if np.isnan(accuracy[i]) else float(accuracy[i])
        if rows[i] == 0:
            zero_support.append(name)
        if cols[i] == 0:
            never_predicted.append(name)
    return EvaluationReport(
        confusion=cm,
        sla=int(np.trace(cm.counts)) / cm.total,
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f1,
        per_class_accuracy=acc_map,
        zero_support_classes=tuple(zero_support),
        never_predicted_classes=tuple(never_predicted),
        metadata=dict(metadata or {}),
        per_fold=per_fold,
        fold_means=fold_means,
    )


def predict_sequence_labels(net: ComposedNetwork, dataset: SceneDataset) -> tuple[np.ndarray, np.ndarray]:
    """(predicted, true) label-index vectors, one entry per sequence."""
    if tuple(dataset.class_names) != net.class_names:
        raise ClassMismatchError(
            f"cannot evaluate: dataset classes {list(dataset.class_names)} != "
            f"network classes {list(net.class_names)}"
        )
    index = dataset.class_index
    predicted = np.empty(len(dataset.sequences), dtype=np.int64)
    true = np.empty(len(dataset.sequences), dtype=np.int64)
    for i, seq in enumerate(dataset.sequences):
        logits = classify(net, seq.frame_array)
        predicted[i] = majority_vote(logits.argmax(axis=1))
        true[i] = index[seq.label]
    return predicted, true


def evaluate_model(net: ComposedNetwork, dataset: SceneDataset,
                   metadata: dict | None = None) -> EvaluationReport:
    """Frame top-1 -> per-sequence majority vote -> sequence-level report."""
    if not dataset.sequences:
        raise EvaluationError("cannot evaluate on a dataset with no sequences")
    predicted, true = predict_sequence_labels(net, dataset)
    cm = confusion_matrix(predicted, true, len(dataset.class_names), dataset.class_names)
    return report_from_confusion(cm, metadata)


def aggregate_folds(per_fold_reports) -> EvaluationReport:
    """Pool fold confusion matrices, recompute metrics from the pooled counts.

    Per-fold reports are retained, and plain means of the fold-level scalar
    metrics are reported alongside the pooled numbers because the two
    conventions genuinely differ.
    """
    reports = list(per_fold_reports)
    if not reports:
        raise EvaluationError("aggregate_folds needs at least one report")
    names = reports[0].confusion.class_names
    for rep in reports[1:]:
        if rep.confusion.class_names != names:
            raise ClassMismatchError(
                f"cannot pool folds over different class lists: "
                f"{list(names)} vs {list(rep.confusion.class_names)}"
            )
    pooled = ConfusionMatrix(
        np.sum([rep.confusion.counts for rep in reports], axis=0),
        names,
    )
    fold_means = {
        "sla": math.fsum(r.sla for r in reports) / len(reports),
        "macro_precision": math.fsum(r.macro_precision for r in reports) / len(reports),
        "macro_recall": math.fsum(r.macro_recall for r in reports) / len(reports),
        "macro_f1": math.fsum(r.macro_f1 for r in reports) / len(reports),
    }
    shared = dict(reports[0].metadata)
    for rep in reports[1:]:
        shared = {k: v for k, v in shared.items() if rep.metadata.get(k) == v}
    shared["n_folds"] = len(reports)
    return report_from_confusion(
        pooled, metadata=shared, per_fold=tuple(reports), fold_means=fold_means
    )
