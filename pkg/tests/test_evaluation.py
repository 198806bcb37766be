"""Tests for sequence-level evaluation against brute-force oracles."""

import math

import numpy as np
import pytest
import yaml

from scenetransfer.dataset import GeneratorConfig, PatternSpec, generate_target
from scenetransfer.evaluation import (
    ConfusionMatrix,
    EvaluationError,
    EvaluationReport,
    aggregate_folds,
    confusion_matrix,
    evaluate_model,
    macro_metrics,
    majority_vote,
    per_class_accuracy,
    predict_sequence_labels,
    report_from_confusion,
    sequence_level_accuracy,
)
from scenetransfer.model import ClassMismatchError, DEFAULT_ARCH, build_network

CLASSES = ("Vehicle", "Home", "Restaurant", "Workplace")


# ---------------------------------------------------------------- oracles


def oracle_vote(votes) -> int:
    """Independent tally: dict counts, lowest index among maxima."""
    tally: dict[int, int] = {}
    for v in votes:
        tally[int(v)] = tally.get(int(v), 0) + 1
    best = max(tally.values())
    return min(k for k, n in tally.items() if n == best)


def oracle_macro(counts_list):
    """Independent per-class loops over a plain list-of-lists matrix."""
    n = len(counts_list)
    precisions, recalls = [], []
    for i in range(n):
        tp = float(counts_list[i][i])
        col = sum(counts_list[j][i] for j in range(n))
        row = sum(counts_list[i][j] for j in range(n))
        precisions.append(tp / col if col else 0.0)
        recalls.append(tp / row if row else 0.0)
    p = math.fsum(precisions) / n
    r = math.fsum(recalls) / n
    f1 = 2.0 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def oracle_recalls(counts_list):
    n = len(counts_list)
    out = []
    for i in range(n):
        row = sum(counts_list[i][j] for j in range(n))
        out.append(float(counts_list[i][i]) / row if row else None)
    return out


def random_cm(rng: np.random.Generator) -> ConfusionMatrix:
    n = int(rng.integers(2, 7))
    counts = rng.integers(0, 25, size=(n, n))
    # knock out whole rows/columns sometimes to exercise the conventions
    if rng.random() < 0.3:
        counts[rng.integers(0, n), :] = 0
    if rng.random() < 0.3:
        counts[:, rng.integers(0, n)] = 0
    if counts.sum() == 0:
        counts[0, 0] = 1
    return ConfusionMatrix(counts, tuple(f"c{i}" for i in range(n)))


# ----------------------------------------------------------------- voting


def test_vote_hand_cases():
    assert majority_vote([0, 0, 1]) == 0
    assert majority_vote([1, 1, 2, 2]) == 1  # tie -> lowest index
    assert majority_vote([3]) == 3


def test_vote_empty_rejected():
    with pytest.raises(EvaluationError, match="empty"):
        majority_vote([])


def test_vote_matches_brute_force_on_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(50):
        votes = rng.integers(0, 6, size=int(rng.integers(1, 10_000)))
        assert majority_vote(votes) == oracle_vote(votes)


def test_vote_is_permutation_invariant():
    rng = np.random.default_rng(1)
    votes = rng.integers(0, 4, size=501)
    expected = majority_vote(votes)
    for _ in range(10):
        assert majority_vote(rng.permutation(votes)) == expected


# --------------------------------------------------------------- accuracy


def test_sla_hand_cases():
    assert sequence_level_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    true = np.zeros(89, dtype=int)
    pred = true.copy()
    pred[[4, 40, 77]] = 1  # 3 of 89 wrong
    sla = sequence_level_accuracy(pred, true)
    assert sla == 86 / 89
    assert abs(100.0 * sla - 96.63) < 0.01


def test_sla_rejects_bad_inputs():
    with pytest.raises(EvaluationError, match="equal length"):
        sequence_level_accuracy([1, 2], [1])
    with pytest.raises(EvaluationError, match="zero sequences"):
        sequence_level_accuracy([], [])


# -------------------------------------------------------------- confusion


def test_confusion_hand_case():
    cm = confusion_matrix([0, 1], [1, 1], 2)
    assert cm.counts.tolist() == [[0, 0], [1, 1]]


def test_confusion_perfect_predictions_are_diagonal():
    true = np.array([0, 1, 2, 2, 1, 0, 0])
    cm = confusion_matrix(true, true, 3)
    assert (cm.counts == np.diag(np.bincount(true, minlength=3))).all()


def test_confusion_total_equals_input_length():
    rng = np.random.default_rng(2)
    pred = rng.integers(0, 5, size=137)
    true = rng.integers(0, 5, size=137)
    assert confusion_matrix(pred, true, 5).total == 137


def test_confusion_rejects_out_of_range_labels():
    with pytest.raises(EvaluationError, match=r"\[0, 2\)"):
        confusion_matrix([0, 2], [0, 1], 2)
    with pytest.raises(EvaluationError, match="true"):
        confusion_matrix([0, 0], [0, -1], 2)


def test_confusion_matrix_type_validation():
    with pytest.raises(EvaluationError, match="square"):
        ConfusionMatrix(np.zeros((2, 3), dtype=int), ("a", "b"))
    with pytest.raises(EvaluationError, match="integers"):
        ConfusionMatrix(np.zeros((2, 2)), ("a", "b"))
    with pytest.raises(EvaluationError, match="non-negative"):
        ConfusionMatrix(np.array([[1, -1], [0, 2]]), ("a", "b"))
    with pytest.raises(EvaluationError, match="class names"):
        ConfusionMatrix(np.zeros((2, 2), dtype=int), ("a",))


# ---------------------------------------------------------- macro metrics


def test_macro_metrics_hand_case():
    cm = ConfusionMatrix(np.array([[3, 1], [2, 4]]), ("a", "b"))
    p, r, f1 = macro_metrics(cm)
    assert p == pytest.approx(0.7, abs=1e-12)
    assert r == pytest.approx(17 / 24, abs=1e-12)
    assert abs(f1 - 119 / 169) < 1e-9


def test_macro_metrics_identity_matrix():
    cm = ConfusionMatrix(np.eye(4, dtype=int) * 3, CLASSES)
    assert macro_metrics(cm) == (1.0, 1.0, 1.0)


def test_macro_metrics_zero_division_contributes_zero():
    # third class never true and never predicted
    counts = np.array([[2, 0, 0], [0, 3, 0], [0, 0, 0]])
    cm = ConfusionMatrix(counts, ("a", "b", "c"))
    p, r, _ = macro_metrics(cm)
    assert p == pytest.approx(2 / 3, abs=1e-15)
    assert r == pytest.approx(2 / 3, abs=1e-15)


def test_macro_metrics_all_wrong_is_all_zero():
    cm = ConfusionMatrix(np.array([[0, 2], [3, 0]]), ("a", "b"))
    assert macro_metrics(cm) == (0.0, 0.0, 0.0)


def test_macro_metrics_empty_matrix_rejected():
    cm = ConfusionMatrix(np.zeros((2, 2), dtype=int), ("a", "b"))
    with pytest.raises(EvaluationError, match="empty"):
        macro_metrics(cm)


def test_macro_metrics_equals_brute_force_exactly():
    rng = np.random.default_rng(3)
    for _ in range(300):
        cm = random_cm(rng)
        assert macro_metrics(cm) == oracle_macro(cm.counts.tolist())


def test_macro_f1_between_min_and_arithmetic_mean():
    rng = np.random.default_rng(4)
    for _ in range(200):
        cm = random_cm(rng)
        p, r, f1 = macro_metrics(cm)
        if p + r > 0:
            assert min(p, r) - 1e-15 <= f1 <= (p + r) / 2 + 1e-15


def test_macro_metrics_invariant_under_class_relabeling():
    rng = np.random.default_rng(5)
    for _ in range(50):
        cm = random_cm(rng)
        perm = rng.permutation(cm.n_classes)
        relabeled = ConfusionMatrix(
            cm.counts[np.ix_(perm, perm)],
            tuple(cm.class_names[i] for i in perm),
        )
        # fsum makes the macro means exactly order-independent
        assert macro_metrics(relabeled) == macro_metrics(cm)
        acc = per_class_accuracy(cm)
        acc_rel = per_class_accuracy(relabeled)
        np.testing.assert_array_equal(acc[perm], acc_rel)


# ----------------------------------------------------- per-class accuracy


def test_per_class_accuracy_hand_cases():
    counts = np.array([
        [1, 1, 0, 0],
        [0, 60, 2, 2],
        [0, 1, 12, 0],
        [0, 0, 0, 10],
    ])
    acc = per_class_accuracy(ConfusionMatrix(counts, CLASSES))
    assert acc[0] == 0.5
    assert acc[3] == 1.0
    diag = ConfusionMatrix(np.eye(3, dtype=int) * 2, ("a", "b", "c"))
    assert per_class_accuracy(diag).tolist() == [1.0, 1.0, 1.0]


def test_per_class_accuracy_zero_support_is_nan():
    counts = np.array([[2, 1], [0, 0]])
    acc = per_class_accuracy(ConfusionMatrix(counts, ("a", "b")))
    assert acc[0] == 2 / 3
    assert np.isnan(acc[1])


def test_per_class_accuracy_matches_brute_force():
    rng = np.random.default_rng(6)
    for _ in range(200):
        cm = random_cm(rng)
        got = per_class_accuracy(cm)
        want = oracle_recalls(cm.counts.tolist())
        for g, w in zip(got, want):
            if w is None:
                assert np.isnan(g)
            else:
                assert g == w


# ---------------------------------------------------------------- reports


def test_report_flags_and_consistency():
    counts = np.array([[0, 2, 0], [0, 5, 0], [0, 1, 0]])
    report = report_from_confusion(ConfusionMatrix(counts, ("a", "b", "c")))
    assert report.sla == 5 / 8
    assert report.never_predicted_classes == ("a", "c")
    assert report.zero_support_classes == ()
    assert report.per_class_accuracy == {"a": 0.0, "b": 1.0, "c": 0.0}


def test_report_rejects_inconsistent_sla():
    cm = ConfusionMatrix(np.array([[3, 1], [1, 3]]), ("a", "b"))
    good = report_from_confusion(cm)
    with pytest.raises(EvaluationError, match="inconsistent"):
        EvaluationReport(
            confusion=cm,
            sla=0.5,  # true value is 6/8
            macro_precision=good.macro_precision,
            macro_recall=good.macro_recall,
            macro_f1=good.macro_f1,
            per_class_accuracy=good.per_class_accuracy,
            zero_support_classes=(),
            never_predicted_classes=(),
        )


def test_report_dict_round_trips_through_yaml():
    counts = np.array([[1, 1, 0, 0], [0, 60, 2, 2], [0, 1, 12, 0], [0, 0, 0, 10]])
    report = report_from_confusion(
        ConfusionMatrix(counts, CLASSES), metadata={"strategy": 4, "mode": "WL", "seed": 3}
    )
    doc = yaml.safe_load(yaml.safe_dump(report.to_dict()))
    assert doc["sla"] == report.sla
    assert doc["macro_f1"] == report.macro_f1
    assert doc["confusion"] == report.confusion.counts.tolist()
    assert doc["metadata"] == {"strategy": 4, "mode": "WL", "seed": 3}


# ----------------------------------------------------------- model bridge


def _tiny_dataset(seed=0):
    cfg = GeneratorConfig(
        class_counts={"Vehicle": 2, "Home": 6, "Restaurant": 3, "Workplace": 3},
        frames_per_sequence=(3, 5),
        height=16,
        width=16,
        pattern=PatternSpec(),
        seed=seed,
    )
    return generate_target(cfg)


def _always_predicts(class_names, index):
    net = build_network(DEFAULT_ARCH, class_names, seed=0)
    net.classifier.weight = np.zeros_like(net.classifier.weight)
    bias = np.zeros_like(net.classifier.bias)
    bias[index] = 100.0
    net.classifier.bias = bias
    return net


def test_degenerate_predictor_scores_majority_share():
    data = _tiny_dataset()
    home = data.class_index["Home"]
    net = _always_predicts(data.class_names, home)
    report = evaluate_model(net, data)
    assert report.sla == 6 / 14
    assert report.per_class_accuracy["Home"] == 1.0
    assert report.per_class_accuracy["Vehicle"] == 0.0
    assert set(report.never_predicted_classes) == {"Vehicle", "Restaurant", "Workplace"}


def test_report_sla_matches_its_own_label_vectors():
    data = _tiny_dataset(seed=1)
    net = build_network(DEFAULT_ARCH, data.class_names, seed=2)
    report = evaluate_model(net, data)
    pred, true = predict_sequence_labels(net, data)
    assert report.sla == sequence_level_accuracy(pred, true)


def test_evaluate_is_deterministic():
    data = _tiny_dataset(seed=2)
    net = build_network(DEFAULT_ARCH, data.class_names, seed=3)
    a = evaluate_model(net, data, metadata={"seed": 3})
    b = evaluate_model(net, data, metadata={"seed": 3})
    assert a.to_dict() == b.to_dict()


def test_evaluate_rejects_class_mismatch():
    data = _tiny_dataset()
    net = build_network(DEFAULT_ARCH, ("a", "b", "c", "d"), seed=0)
    with pytest.raises(ClassMismatchError):
        evaluate_model(net, data)


# ------------------------------------------------------------ aggregation


def _fold_report(counts, **metadata):
    return report_from_confusion(
        ConfusionMatrix(np.asarray(counts), ("a", "b")), metadata=metadata
    )


def test_single_fold_aggregation_is_identity():
    fold = _fold_report([[3, 1], [0, 4]], strategy=4)
    agg = aggregate_folds([fold])
    assert agg.sla == fold.sla
    assert agg.macro_f1 == fold.macro_f1
    assert agg.confusion.counts.tolist() == fold.confusion.counts.tolist()
    assert agg.per_fold == (fold,)
    assert agg.fold_means["sla"] == fold.sla


def test_two_diagonal_folds_pool_to_perfect_metrics():
    agg = aggregate_folds([
        _fold_report([[2, 0], [0, 3]]),
        _fold_report([[4, 0], [0, 1]]),
    ])
    assert agg.sla == 1.0
    assert (agg.macro_precision, agg.macro_recall, agg.macro_f1) == (1.0, 1.0, 1.0)


def test_pooled_sla_is_total_correct_over_total():
    folds = [
        _fold_report([[2, 1], [1, 2]]),   # 4 of 6
        _fold_report([[3, 0], [2, 1]]),   # 4 of 6
        _fold_report([[1, 1], [0, 2]]),   # 3 of 4
    ]
    agg = aggregate_folds(folds)
    assert agg.sla == 11 / 16
    assert agg.fold_means["sla"] == pytest.approx((4 / 6 + 4 / 6 + 3 / 4) / 3, abs=1e-15)


def test_aggregation_keeps_only_shared_metadata():
    folds = [
        _fold_report([[2, 0], [0, 2]], strategy=4, fold=0),
        _fold_report([[2, 0], [0, 2]], strategy=4, fold=1),
    ]
    agg = aggregate_folds(folds)
    assert agg.metadata["strategy"] == 4
    assert "fold" not in agg.metadata
    assert agg.metadata["n_folds"] == 2


def test_aggregation_rejects_mismatched_class_lists():
    a = _fold_report([[1, 0], [0, 1]])
    b = report_from_confusion(ConfusionMatrix(np.eye(2, dtype=int), ("x", "y")))
    with pytest.raises(ClassMismatchError):
        aggregate_folds([a, b])
