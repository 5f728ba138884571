import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsibf.errors import UndefinedMetricError, ValidationError
from nsibf.evaluation import (
    best_f1_search,
    candidate_thresholds,
    evaluate,
    point_adjust,
    roc_auc,
    row_granularity,
    segments,
    sweep_counts,
    write_report,
)
from oracles import brute_best_f1, brute_point_adjust, mann_whitney_auc


def random_instance(rng, n_max=200, levels=None):
    n = int(rng.integers(2, n_max + 1))
    labels = np.zeros(n, dtype=bool)
    for _ in range(int(rng.integers(1, 5))):
        a = int(rng.integers(0, n))
        labels[a : a + int(rng.integers(1, 20))] = True
    scores = rng.integers(0, levels, size=n).astype(float) if levels else rng.normal(size=n) + labels
    return scores, labels


# ---------------------------------------------------------------- point adjustment


def test_point_adjust_fills_segment():
    labels = np.zeros(8, dtype=bool)
    labels[3:6] = True
    flags = np.zeros(8, dtype=bool)
    flags[4] = True
    assert np.flatnonzero(point_adjust(flags, labels)).tolist() == [3, 4, 5]


def test_point_adjust_leaves_misses_and_false_positives():
    labels = np.array([0, 1, 1, 0, 0], dtype=bool)
    flags = np.array([0, 0, 0, 1, 0], dtype=bool)
    assert point_adjust(flags, labels).tolist() == flags.tolist()


def test_point_adjust_idempotent_and_monotone(rng):
    for _ in range(50):
        s, labels = random_instance(rng)
        flags = rng.random(s.size) < 0.2
        once = point_adjust(flags, labels)
        assert np.array_equal(point_adjust(once, labels), once)
        assert np.all(once >= flags)


def test_point_adjust_shape_mismatch():
    with pytest.raises(ValidationError):
        point_adjust([True], [True, False])


def test_segments():
    assert segments([0, 1, 1, 0, 1]) == [(1, 3), (4, 5)]
    assert segments([0, 0]) == []


# ---------------------------------------------------------------- best F1


def test_separable_case():
    rep = best_f1_search([0.1, 0.9, 0.2], [0, 1, 0])
    assert rep.f1 == 1.0 and 0.2 <= rep.threshold < 0.9


def test_all_scores_equal():
    rep = best_f1_search([0.5] * 4, [0, 1, 1, 0])
    # everything flagged: precision 0.5, recall 1
    assert rep.f1 == pytest.approx(2 / 3) and rep.tp == 2 and rep.fp == 2


def test_no_positive_labels_undefined():
    with pytest.raises(UndefinedMetricError):
        best_f1_search([0.1, 0.2], [0, 0])
    with pytest.raises(UndefinedMetricError):
        best_f1_search([], [])


def test_nonfinite_scores_rejected():
    with pytest.raises(ValidationError):
        best_f1_search([np.nan, 1.0], [0, 1])


def test_candidates_cover_all_flag_sets():
    thr = candidate_thresholds([3.0, 1.0, 2.0, 1.0])
    assert thr[0] < 1.0 and thr[1:].tolist() == [1.0, 2.0, 3.0]


@pytest.mark.parametrize("adjusted", [True, False])
@pytest.mark.parametrize("levels", [None, 4])
def test_best_f1_matches_brute_force(rng, adjusted, levels):
    for _ in range(100):
        scores, labels = random_instance(rng, levels=levels)
        rep = best_f1_search(scores, labels, adjusted)
        f1, p, rank, counts = brute_best_f1(scores, labels, adjusted)
        assert (rep.f1, rep.precision) == (f1, p)
        assert (rep.tp, rep.fp, rep.fn) == counts
        assert rep.threshold == candidate_thresholds(scores)[rank]


def test_sweep_counts_match_direct_flags(rng):
    scores, labels = random_instance(rng)
    thr, tp, fp, fn = sweep_counts(scores, labels, adjusted=True)
    for k, c in enumerate(thr):
        flags = np.array(brute_point_adjust(scores > c, labels))
        assert tp[k] == np.sum(flags & labels) and fp[k] == np.sum(flags & ~labels)
        assert fn[k] == np.sum(~flags & labels)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-50, 50))
def test_best_f1_invariant_to_affine_rescaling(seed, a, b):
    scores, labels = random_instance(np.random.default_rng(seed), levels=6)
    base = best_f1_search(scores, labels)
    moved = best_f1_search(a * scores + b, labels)
    assert (moved.f1, moved.tp, moved.fp) == (base.f1, base.tp, base.fp)


def test_adjusted_f1_not_below_raw(rng):
    for _ in range(50):
        scores, labels = random_instance(rng)
        assert best_f1_search(scores, labels).f1 >= best_f1_search(scores, labels, adjusted=False).f1


# ---------------------------------------------------------------- ROC


def test_auc_separable_and_constant():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).auc == 1.0
    assert roc_auc([1.0] * 6, [0, 1, 0, 1, 1, 0]).auc == 0.5


def test_auc_matches_mann_whitney(rng):
    for levels in (None, 5):
        for _ in range(20):
            scores, labels = random_instance(rng, n_max=100, levels=levels)
            if labels.all():
                continue
            assert abs(roc_auc(scores, labels).auc - mann_whitney_auc(scores, labels)) < 1e-10


def test_roc_monotone(rng):
    scores, labels = random_instance(rng)
    for adjusted in (False, True):
        roc = roc_auc(scores, labels, adjusted)
        assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
        assert roc.fpr[0] == 0 and roc.fpr[-1] == 1 and roc.tpr[-1] == 1


def test_single_class_roc_undefined():
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.1, 0.2], [1, 1])


# ---------------------------------------------------------------- reports


def test_evaluate_and_write(tmp_path, rng):
    scores, labels = random_instance(rng)
    reports = evaluate(scores, labels)
    assert set(reports) == {"adjusted", "raw"}
    assert reports["raw"].auc == roc_auc(scores, labels).auc
    write_report(reports, tmp_path / "r.json")
    text = (tmp_path / "r.json").read_text()
    write_report(evaluate(scores, labels), tmp_path / "s.json")
    assert (tmp_path / "s.json").read_text() == text


def test_row_granularity():
    row_labels = np.zeros(12, dtype=bool)
    row_labels[7] = True
    scores, labels = row_granularity([1, 2], [0.5, 0.7], 3, row_labels)
    assert scores.tolist() == [0.5] * 3 + [0.7] * 3
    assert labels.tolist() == [False, False, False, False, True, False]
    with pytest.raises(ValidationError):
        row_granularity([4], [0.1], 3, row_labels)
