from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mope_baf.errors import InputError
from mope_baf.metrics import aggregate_runs, binary_metrics, multiclass_metrics


# --------------------------------------------------------------- worked examples

def test_binary_perfect():
    m = binary_metrics([0, 1, 0, 1], [0, 1, 0, 1], positive_class=1)
    assert m == {"accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}


def test_binary_hand_computed():
    # tp=2 fp=1 fn=1 tn=4 -> P=R=F1=2/3, acc=0.75
    golds = [1, 1, 1, 0, 0, 0, 0, 0]
    preds = [1, 1, 0, 1, 0, 0, 0, 0]
    m = binary_metrics(preds, golds, positive_class=1)
    assert m["accuracy"] == 0.75
    assert m["precision"] == 2 / 3
    assert m["recall"] == 2 / 3
    assert m["f1"] == 2 * (2 / 3) * (2 / 3) / (2 / 3 + 2 / 3)


def test_binary_zero_convention():
    m = binary_metrics([0, 0, 0], [0, 0, 0], positive_class=1)
    assert m == {"accuracy": 1.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}


def test_multiclass_perfect():
    m = multiclass_metrics([0, 1, 2], [0, 1, 2], 3)
    assert m == {"accuracy": 1.0, "macro_f1": 1.0, "weighted_f1": 1.0}


def test_multiclass_hand_computed():
    m = multiclass_metrics([0, 1, 1, 2], [0, 0, 1, 2], 3)
    assert m["accuracy"] == 0.75
    assert m["macro_f1"] == (2 / 3 + 2 / 3 + 1.0) / 3
    assert m["weighted_f1"] == (2 * (2 / 3) + 1 * (2 / 3) + 1 * 1.0) / 4


def test_multiclass_single_class_predictions():
    # all predictions class 0, uniform golds over 3 classes:
    # class 0: P=1/3, R=1 -> F1=1/2; classes 1,2: F1=0 -> macro 1/6
    m = multiclass_metrics([0, 0, 0], [0, 1, 2], 3)
    assert m["macro_f1"] == (0.5) / 3


def test_aggregate_hand_computed():
    out = aggregate_runs([{"acc": 60.0}, {"acc": 64.0}])
    assert out["acc"] == (62.0, 2.0)


def test_aggregate_single_run_sd_zero():
    out = aggregate_runs([{"acc": 0.7, "f1": 0.6}])
    assert out == {"acc": (0.7, 0.0), "f1": (0.6, 0.0)}


def test_aggregate_order_invariant():
    runs = [{"a": 1.0}, {"a": 5.0}, {"a": 3.0}]
    assert aggregate_runs(runs) == aggregate_runs(runs[::-1])


# ------------------------------------------------------------------ error cases

def test_length_mismatch():
    with pytest.raises(InputError):
        binary_metrics([0], [0, 1], positive_class=1)
    with pytest.raises(InputError):
        multiclass_metrics([0], [0, 1], 3)


def test_empty_inputs():
    with pytest.raises(InputError):
        binary_metrics([], [], positive_class=1)


def test_label_out_of_range():
    with pytest.raises(InputError):
        multiclass_metrics([0, 3], [0, 1], 3)


def test_aggregate_key_mismatch():
    with pytest.raises(InputError):
        aggregate_runs([{"a": 1.0}, {"b": 1.0}])
    with pytest.raises(InputError):
        aggregate_runs([])


# -------------------------------------------------- brute-force confusion oracle

def _brute_binary(preds, golds, pos):
    tp = fp = fn = tn = 0
    for p, g in zip(preds, golds):
        if g == pos:
            tp, fn = tp + (p == pos), fn + (p != pos)
        else:
            fp, tn = fp + (p == pos), tn + (p != pos)
    P = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    R = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    F = 2 * P * R / (P + R) if P + R else Fraction(0)
    return {"accuracy": Fraction(tp + tn, len(golds)), "precision": P,
            "recall": R, "f1": F}


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)),
                min_size=1, max_size=40))
def test_binary_matches_bruteforce(pairs):
    preds = [p for p, _ in pairs]
    golds = [g for _, g in pairs]
    got = binary_metrics(preds, golds, positive_class=1)
    ref = _brute_binary(preds, golds, 1)
    for k in got:
        assert got[k] == pytest.approx(float(ref[k]), abs=1e-12)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)),
                min_size=1, max_size=40))
def test_multiclass_matches_bruteforce(pairs):
    preds = [p for p, _ in pairs]
    golds = [g for _, g in pairs]
    got = multiclass_metrics(preds, golds, 3)
    f1s, supports = [], []
    for c in range(3):
        ref = _brute_binary(preds, golds, c)
        f1s.append(ref["f1"])
        supports.append(sum(1 for g in golds if g == c))
    assert got["accuracy"] == sum(1 for p, g in pairs if p == g) / len(pairs)
    assert got["macro_f1"] == pytest.approx(float(sum(f1s) / 3), abs=1e-12)
    assert got["weighted_f1"] == pytest.approx(
        float(sum(f * s for f, s in zip(f1s, supports)) / len(pairs)), abs=1e-12)


# -------------------------------------------------------------------- properties

@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)),
                min_size=3, max_size=30))
def test_metric_ranges(pairs):
    preds = [p for p, _ in pairs]
    golds = [g for _, g in pairs]
    m = multiclass_metrics(preds, golds, 3)
    assert all(0.0 <= v <= 1.0 for v in m.values())


def test_weighted_equals_macro_on_balanced_golds():
    golds = [0, 0, 1, 1, 2, 2]
    preds = [0, 1, 1, 2, 2, 0]
    m = multiclass_metrics(preds, golds, 3)
    assert m["weighted_f1"] == pytest.approx(m["macro_f1"], abs=1e-12)


def test_aggregate_population_sd():
    vals = [1.0, 2.0, 4.0]
    out = aggregate_runs([{"x": v} for v in vals])
    mu, sd = out["x"]
    assert mu == pytest.approx(np.mean(vals))
    assert sd == pytest.approx(np.std(vals))  # N divisor
