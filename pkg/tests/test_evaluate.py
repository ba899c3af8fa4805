import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voiceshield.evaluate import (LABELS, AccountPrediction, attack_success_rate, compose_final,
                                  compute_metrics, confusion_matrix, label_of, macro_f1,
                                  precision_recall_f1, predict_account, timing_report,
                                  timing_table, vote, write_confusion_csv)

L, A, T = LABELS


def test_vote_examples():
    assert vote([L] * 4 + [A] * 6) == A
    assert vote([L] * 5 + [A] * 5) == A
    assert vote([T] * 10) == T
    assert vote([0, 0, 2, 2]) == T
    with pytest.raises(ValueError):
        vote([])


def test_compose_examples():
    assert compose_final("Triggered", L) == (T, False)
    assert compose_final("Legitimate", A) == (A, False)
    assert compose_final("Deferred", L) == (L, True)


def test_predict_account():
    p = predict_account("x", [0, 1, 1], "Legitimate")
    assert p.vote_label == A and p.final_label == A and not p.reviewed
    assert json.loads(json.dumps(p.to_json()))["per_pair_labels"] == [L, A, A]


def pred(aid, final, reviewed=False):
    return AccountPrediction(aid, (), final, "Legitimate", final, reviewed)


def test_asr_ratio():
    truth = {f"t{i}": "triggered" for i in range(24)}
    final = {a: pred(a, T) for a in truth}
    final["t0"] = pred("t0", L)
    assert attack_success_rate(final, truth) == pytest.approx(1 / 24)
    assert round(100 * attack_success_rate(final, truth), 2) == 4.17
    final["t0"] = pred("t0", L, reviewed=True)
    assert attack_success_rate(final, truth) == 0.0


def test_attack_recall_example():
    truth = {f"a{i}": "attacked" for i in range(100)}
    final = {a: pred(a, A if i < 93 else L) for i, a in enumerate(truth)}
    report = compute_metrics(final, truth)
    assert report.recall[1] == pytest.approx(0.93)
    assert report.asr == 0.0


def test_perfect_predictions():
    truth = {"a": "legitimate", "b": "attacked", "c": "triggered"}
    final = {k: pred(k, label_of(v)) for k, v in truth.items()}
    r = compute_metrics(final, truth)
    assert np.all(r.precision == 1) and np.all(r.recall == 1) and np.all(r.f1 == 1)
    assert r.asr == 0.0


def test_metrics_errors():
    with pytest.raises(ValueError):
        compute_metrics({}, {})
    with pytest.raises(ValueError):
        compute_metrics({}, {"a": "legitimate"})


def test_zero_division_is_zero():
    cm = np.array([[5, 0, 0], [3, 0, 0], [0, 0, 0]])
    p, r, f = precision_recall_f1(cm)
    assert p[1] == 0 and r[1] == 0 and f[2] == 0


@settings(max_examples=100, deadline=None)
@given(pairs=st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
def test_metric_invariants(pairs):
    t, p = zip(*pairs)
    cm = confusion_matrix(t, p)
    assert cm.sum(axis=1).tolist() == np.bincount(t, minlength=3).tolist()
    prec, rec, f1 = precision_recall_f1(cm)
    for arr in (prec, rec, f1):
        assert np.all((arr >= 0) & (arr <= 1))
    # support-weighted recall is accuracy
    support = cm.sum(axis=1)
    assert np.sum(rec * support) / support.sum() == pytest.approx(np.mean(np.equal(t, p)))
    assert 0 <= macro_f1(t, p) <= 1


def test_report_outputs(tmp_path):
    truth = {"a": "legitimate", "b": "attacked", "c": "triggered", "d": "attacked"}
    final = {"a": pred("a", L), "b": pred("b", A), "c": pred("c", T), "d": pred("d", L)}
    r = compute_metrics(final, truth)
    doc = r.to_json()
    assert doc["classes"]["Attacked"]["recall"] == 0.5
    assert doc["confusion"]["matrix"][1] == [1, 1, 0]
    assert doc["accuracy"] == 0.75
    assert "Triggered" in r.table() and "0.00%" in r.table()
    write_confusion_csv(tmp_path / "c.csv", r)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[2] == "Attacked,1,1,0"


def test_timing_report():
    rep = timing_report({"synth": 2.0, "detect": 40.0}, n_accounts=200)
    assert rep["total"] == 42.0
    assert rep["detection_per_account"] == 0.2 and rep["detection_within_bound"]
    assert "per account" in timing_table(rep)
    with pytest.raises(ValueError):
        timing_report({"detect": -1.0})
