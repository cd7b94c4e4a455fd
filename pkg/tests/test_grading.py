"""Decode, confusion, and quadratic-weighted-kappa tests."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drgrade import grading as gr
from drgrade.grading import DegenerateAgreementError


# ---------------------------------------------------------------------------
# oracles


def naive_qwk(truth, pred, k):
    """Direct double-sum with explicit loops over O, E, W."""
    n = len(truth)
    observed = [[0.0] * k for _ in range(k)]
    hist_t = [0.0] * k
    hist_p = [0.0] * k
    for t, p in zip(truth, pred):
        observed[t][p] += 1.0
        hist_t[t] += 1.0
        hist_p[p] += 1.0
    num = den = 0.0
    for i in range(k):
        for j in range(k):
            w = (i - j) ** 2 / (k - 1) ** 2
            num += w * observed[i][j]
            den += w * hist_t[i] * hist_p[j] / n
    if den == 0.0:
        raise DegenerateAgreementError("degenerate")
    return 1.0 - num / den


def dict_count_confusion(truth, pred, k):
    counts = {}
    for t, p in zip(truth, pred):
        counts[(t, p)] = counts.get((t, p), 0) + 1
    out = np.zeros((k, k), dtype=np.int64)
    for (t, p), c in counts.items():
        out[t, p] = c
    return out


# ---------------------------------------------------------------------------
# decode_score


@pytest.mark.parametrize("score,grade", [
    (-0.7, 0),    # clamped to the bottom of the range
    (4.9, 4),     # clamped to the top
    (2.49, 2),
    (2.5, 3),     # ties round away from zero
    (0.0, 0),
    (4.0, 4),
    (1.5, 2),
    (3.4999, 3),
])
def test_decode_examples(score, grade):
    assert gr.decode_score(score) == grade


def test_decode_rejects_non_finite():
    for bad in (float("nan"), float("inf"), float("-inf")):
        with pytest.raises(ValueError):
            gr.decode_score(bad)


@settings(max_examples=200, deadline=None)
@given(st.floats(-100, 100), st.floats(-100, 100))
def test_decode_monotone(a, b):
    lo, hi = sorted((a, b))
    assert gr.decode_score(lo) <= gr.decode_score(hi)


# ---------------------------------------------------------------------------
# confusion


def test_confusion_identity_diagonal():
    cm = gr.confusion([0, 1, 2, 3, 4], [0, 1, 2, 3, 4], 5)
    assert np.array_equal(cm, np.eye(5, dtype=np.int64))


def test_confusion_off_diagonal():
    cm = gr.confusion([0, 0], [4, 4], 5)
    expected = np.zeros((5, 5), dtype=np.int64)
    expected[0, 4] = 2
    assert np.array_equal(cm, expected)


def test_confusion_matches_dict_count_oracle():
    rng = np.random.RandomState(21)
    truth = rng.randint(0, 5, 200).tolist()
    pred = rng.randint(0, 5, 200).tolist()
    assert np.array_equal(gr.confusion(truth, pred, 5),
                          dict_count_confusion(truth, pred, 5))


def test_confusion_errors():
    with pytest.raises(ValueError, match="length mismatch"):
        gr.confusion([0, 1], [0], 5)
    with pytest.raises(ValueError, match="out of range"):
        gr.confusion([0, 5], [0, 1], 5)
    with pytest.raises(ValueError, match="out of range"):
        gr.confusion([0, 1], [0, -1], 5)
    with pytest.raises(ValueError, match="empty"):
        gr.confusion([], [], 5)


# ---------------------------------------------------------------------------
# qwk


def test_qwk_perfect_diagonal_is_exactly_one():
    cm = np.diag([3, 1, 4, 1, 5])
    assert gr.qwk(cm).qwk == 1.0


def test_qwk_k3_antidiagonal_anchor():
    # truth [0, 2], pred [2, 0]: oracle gives num 2, den 1, qwk -1 exactly
    truth, pred = [0, 2], [2, 0]
    assert naive_qwk(truth, pred, 3) == -1.0
    b = gr.qwk(gr.confusion(truth, pred, 3))
    assert b.qwk == -1.0
    assert b.numerator == 2.0
    assert b.denominator == 1.0


def test_qwk_matches_naive_oracle_on_random_pairs():
    rng = np.random.RandomState(22)
    done = 0
    while done < 300:
        k = rng.randint(2, 7)
        n = rng.randint(2, 201)
        truth = rng.randint(0, k, n).tolist()
        pred = rng.randint(0, k, n).tolist()
        try:
            expected = naive_qwk(truth, pred, k)
        except DegenerateAgreementError:
            with pytest.raises(DegenerateAgreementError):
                gr.qwk(gr.confusion(truth, pred, k))
            continue
        got = gr.qwk(gr.confusion(truth, pred, k)).qwk
        assert got == pytest.approx(expected, abs=1e-12)
        done += 1


def test_qwk_breakdown_invariants():
    rng = np.random.RandomState(23)
    truth = rng.randint(0, 5, 120).tolist()
    pred = rng.randint(0, 5, 120).tolist()
    cm = gr.confusion(truth, pred, 5)
    b = gr.qwk(cm)
    assert np.array_equal(b.weights, b.weights.T)
    assert (np.diag(b.weights) == 0).all()
    idx = np.arange(5)
    assert np.array_equal(b.weights, (idx[:, None] - idx[None, :]) ** 2 / 16.0)
    # expected marginals match the observed marginals, total preserved
    assert b.expected.sum() == pytest.approx(cm.sum(), abs=1e-9)
    assert b.expected.sum(axis=1) == pytest.approx(cm.sum(axis=1), abs=1e-9)
    assert b.expected.sum(axis=0) == pytest.approx(cm.sum(axis=0), abs=1e-9)


def test_qwk_degenerate_and_empty_errors():
    constant = np.zeros((5, 5), dtype=np.int64)
    constant[2, 2] = 10
    with pytest.raises(DegenerateAgreementError):
        gr.qwk(constant)
    with pytest.raises(ValueError, match="empty"):
        gr.qwk(np.zeros((5, 5), dtype=np.int64))
    with pytest.raises(ValueError):
        gr.qwk(np.zeros((1, 1), dtype=np.int64))


@st.composite
def label_pairs(draw):
    k = draw(st.integers(2, 6))
    n = draw(st.integers(2, 60))
    truth = draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n))
    pred = draw(st.lists(st.integers(0, k - 1), min_size=n, max_size=n))
    return truth, pred, k


def _non_degenerate(truth, pred, k):
    return not (len(set(truth)) == 1 and truth == pred)


@settings(max_examples=200, deadline=None)
@given(label_pairs())
def test_qwk_range_property(pair):
    truth, pred, k = pair
    if not _non_degenerate(truth, pred, k):
        return
    value = gr.qwk(gr.confusion(truth, pred, k)).qwk
    assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12


@settings(max_examples=150, deadline=None)
@given(label_pairs())
def test_qwk_symmetry_property(pair):
    truth, pred, k = pair
    if not _non_degenerate(truth, pred, k):
        return
    a = gr.qwk(gr.confusion(truth, pred, k)).qwk
    b = gr.qwk(gr.confusion(pred, truth, k)).qwk
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(label_pairs(), st.randoms(use_true_random=False))
def test_qwk_joint_permutation_invariance(pair, rnd):
    truth, pred, k = pair
    if not _non_degenerate(truth, pred, k):
        return
    order = list(range(len(truth)))
    rnd.shuffle(order)
    a = gr.qwk(gr.confusion(truth, pred, k)).qwk
    b = gr.qwk(gr.confusion([truth[i] for i in order], [pred[i] for i in order], k)).qwk
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(label_pairs(), st.integers(2, 9))
def test_qwk_count_scaling_invariance(pair, factor):
    truth, pred, k = pair
    if not _non_degenerate(truth, pred, k):
        return
    cm = gr.confusion(truth, pred, k)
    a = gr.qwk(cm).qwk
    b = gr.qwk(cm * factor).qwk
    assert a == pytest.approx(b, abs=1e-12)


def test_qwk_perfect_agreement_any_distribution():
    rng = np.random.RandomState(24)
    for _ in range(20):
        k = rng.randint(2, 7)
        labels = rng.randint(0, k, rng.randint(2, 50)).tolist()
        if len(set(labels)) < 2:
            continue
        assert gr.qwk(gr.confusion(labels, labels, k)).qwk == 1.0


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_exact_scores():
    truth = [0, 1, 2, 3, 4, 2]
    rep = gr.evaluate(truth, [float(t) for t in truth])
    assert rep.qwk.qwk == 1.0
    assert rep.accuracy == 1.0
    assert rep.mse == 0.0
    assert rep.n == 6
    assert rep.class_counts == [1, 1, 2, 1, 1]


def test_evaluate_offset_scores():
    truth = [0, 1, 2, 3, 4]
    rep = gr.evaluate(truth, [t + 0.4 for t in truth])
    assert rep.accuracy == 1.0       # 0.4 rounds back to the label
    assert rep.mse == pytest.approx(0.16, abs=1e-12)


def test_evaluate_matches_independent_recomputation():
    rng = np.random.RandomState(25)
    truth = rng.randint(0, 5, 150).tolist()
    scores = (rng.rand(150) * 6.0 - 1.0).tolist()
    rep = gr.evaluate(truth, scores)
    decoded = [gr.decode_score(s) for s in scores]
    cm = dict_count_confusion(truth, decoded, 5)
    assert np.array_equal(rep.confusion, cm)
    assert rep.accuracy == pytest.approx(sum(t == d for t, d in zip(truth, decoded)) / 150)
    assert rep.mse == pytest.approx(
        sum((s - t) ** 2 for s, t in zip(scores, truth)) / 150, rel=1e-12)
    assert rep.qwk.qwk == pytest.approx(naive_qwk(truth, decoded, 5), abs=1e-12)


def test_evaluate_report_json_shape():
    rep = gr.evaluate([0, 1, 2, 3, 4], [0.1, 1.2, 1.8, 3.3, 3.9])
    doc = json.loads(json.dumps(rep.to_json_dict()))
    assert set(doc) == {"qwk", "accuracy", "mse", "confusion", "n", "class_counts"}
    assert doc["n"] == 5
    assert len(doc["confusion"]) == 5


def test_evaluate_length_errors():
    with pytest.raises(ValueError):
        gr.evaluate([0, 1], [0.0])
    with pytest.raises(ValueError):
        gr.evaluate([], [])


# ---------------------------------------------------------------------------
# csv join


def test_evaluate_joined_matches_evaluate():
    rng = np.random.RandomState(26)
    ids = [f"img{i:03d}" for i in range(40)]
    truth = rng.randint(0, 5, 40).tolist()
    scores = (rng.rand(40) * 5.0).tolist()
    rep = gr.evaluate_joined(list(zip(ids, truth)), list(zip(ids, scores)))
    direct = gr.evaluate(truth, scores)
    assert rep.qwk.qwk == direct.qwk.qwk
    assert rep.mse == direct.mse


def test_evaluate_joined_reports_offending_ids():
    truth = [("a", 0), ("b", 1), ("c", 2)]
    preds = [("a", 0.1), ("d", 3.0)]
    with pytest.raises(ValueError) as exc:
        gr.evaluate_joined(truth, preds)
    msg = str(exc.value)
    assert "'b'" in msg and "'c'" in msg and "'d'" in msg
