"""ROC, verification accuracy and top-k error against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bridgedistill.evaluation import (
    best_threshold_accuracy,
    cosine_similarity,
    roc_curve,
    topk_errors,
    verify_features,
)


def auc_oracle(scores, labels):
    """Probability a random positive outscores a random negative (ties count half)."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def accuracy_oracle(scores, labels):
    best = 0.0
    for thr in list(scores) + [np.inf]:
        pred = [s >= thr for s in scores]
        best = max(best, np.mean([p == l for p, l in zip(pred, labels)]))
    return best


def topk_oracle(logits, labels, k):
    errs = 0
    for row, y in zip(logits, labels):
        ranked = sorted(range(len(row)), key=lambda j: (-row[j], j))
        errs += y not in ranked[:k]
    return errs / len(labels)


score_sets = st.integers(2, 40).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-5, 5).map(float), min_size=n, max_size=n),
    st.lists(st.booleans(), min_size=n, max_size=n)).filter(lambda t: 0 < sum(t[1]) < n))


class TestCosine:
    def test_examples(self):
        v = np.array([1.0, 2.0, 3.0])
        assert cosine_similarity(v, v) == pytest.approx(1.0)
        assert cosine_similarity(v, -v) == pytest.approx(-1.0)
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])


class TestRoc:
    @given(score_sets)
    @settings(max_examples=200, deadline=None)
    def test_invariants_and_auc_oracle(self, data):
        scores, labels = data
        roc = roc_curve(scores, labels)
        assert roc.fpr[0] == 0 and roc.tpr[0] == 0 and roc.fpr[-1] == 1 and roc.tpr[-1] == 1
        assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
        assert 0.0 <= roc.auc <= 1.0
        assert roc.auc == pytest.approx(auc_oracle(scores, labels), abs=1e-12)

    def test_separable_scores(self):
        roc = roc_curve([0.9, 0.8, 0.3, 0.1], [True, True, False, False])
        assert roc.auc == 1.0

    def test_constant_scores_give_diagonal(self):
        roc = roc_curve([0.5] * 6, [True, False] * 3)
        assert roc.auc == 0.5
        assert roc.points() == [(0.0, 0.0, np.inf), (1.0, 1.0, 0.5)]

    def test_needs_both_classes(self):
        with pytest.raises(ValueError):
            roc_curve([0.1, 0.2], [True, True])

    def test_tpr_at_fpr(self):
        roc = roc_curve([0.9, 0.8, 0.7, 0.6], [True, False, True, False])
        assert roc.tpr_at_fpr(0.0) == 0.5
        assert roc.tpr_at_fpr(0.5) == 1.0

    def test_text_export(self):
        txt = roc_curve([0.9, 0.1], [True, False]).to_text().splitlines()
        assert txt[0] == "0.000000 0.000000" and txt[-1] == "1.000000 1.000000"


class TestAccuracy:
    @given(score_sets)
    @settings(max_examples=200, deadline=None)
    def test_best_threshold_matches_exhaustive(self, data):
        scores, labels = data
        acc, _ = best_threshold_accuracy(np.array(scores), np.array(labels))
        assert acc == pytest.approx(accuracy_oracle(scores, labels), abs=1e-12)
        assert acc >= max(np.mean(labels), 1 - np.mean(labels)) - 1e-12

    def test_oracle_features_verify_perfectly(self):
        rng = np.random.default_rng(0)
        centres = rng.standard_normal((5, 8))
        ia, ib = rng.integers(0, 5, 50), rng.integers(0, 5, 50)
        same = ia == ib
        rep = verify_features(centres[ia], centres[ib], same)
        assert rep.metrics["accuracy"] == 1.0 and rep.metrics["auc"] == 1.0

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            verify_features(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, bool))


class TestTopK:
    @given(st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_matches_sort_and_count(self, seed):
        rng = np.random.default_rng(seed)
        # small integer logits create plenty of ties
        logits = rng.integers(0, 4, size=(12, 5)).astype(float)
        labels = rng.integers(0, 5, 12)
        got = topk_errors(logits, labels, (1, 2, 5))
        for k in (1, 2, 5):
            assert got[k] == pytest.approx(topk_oracle(logits, labels, k))
        assert got[1] >= got[2] >= got[5] == 0.0

    def test_always_wrong_predictor(self):
        logits = np.tile([5.0, 0.0, 0.0], (4, 1))
        assert topk_errors(logits, np.array([1, 2, 1, 2]), (1,))[1] == 1.0

    def test_k_above_class_count(self):
        with pytest.raises(ValueError):
            topk_errors(np.zeros((2, 3)), np.array([0, 1]), (5,))
