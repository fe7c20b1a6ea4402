import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slmr.detect import (
    best_f1_threshold,
    best_f1_threshold_bruteforce,
    candidate_thresholds,
    combine_score,
    evaluate,
    f1_curve,
    localize,
    point_adjust,
    pooled_report,
    report_from_predictions,
    score,
    segments,
    write_metrics_json,
    write_scores_csv,
)
from slmr.model import SlmrConfig, SlmrModel

from oracles import best_f1_enumerate, f1_counts, point_adjust_loop

binary = st.lists(st.integers(0, 1), min_size=1, max_size=60)


# -- scoring -------------------------------------------------------------------

def bias_model(f_bias, r_bias, k=2, w=4):
    cfg = SlmrConfig(window=w, n_features=k, channels=4, groups=2, hidden=3)
    model = SlmrModel(cfg, seed=0)
    for name, b in (("forecast", f_bias), ("recon", r_bias)):
        model.params[f"{name}.w"].data[...] = 0.0
        model.params[f"{name}.b"].data = np.asarray(b, dtype=float)
    return model


def test_zero_residual_scores_zero():
    s = score(bias_model([0.5, 0.5], [0.5, 0.5]), np.full((10, 2), 0.5))
    assert np.all(s.scores == 0.0)


def test_three_four_five_score():
    s = score(bias_model([3.5, 4.5], [3.5, 4.5]), np.full((10, 2), 0.5))
    assert np.all(s.forecast_term == 5.0) and np.all(s.recon_term == 5.0)
    assert np.all(s.scores == 5.0)


def test_gamma_zero_keeps_forecast_only():
    s = score(bias_model([3.5, 4.5], [100.0, -7.0]), np.full((10, 2), 0.5), gamma_score=0.0)
    assert np.all(s.scores == 2.5)
    assert np.all(s.with_gamma(1.0).scores > 2.5)


def test_combine_score_arithmetic():
    assert combine_score(5.0, 5.0, 1.0, 2) == 5.0
    assert combine_score(3.0, 8.0, 0.0, 3) == 1.0


def test_score_alignment_matches_direct_windows():
    cfg = SlmrConfig(window=4, n_features=2, channels=4, groups=2, hidden=3)
    model = SlmrModel(cfg, seed=1)
    x = np.random.default_rng(1).normal(size=(13, 2))
    s = score(model, x, gamma_score=0.7, batch_size=3)
    assert s.timestamps.tolist() == list(range(4, 13))
    for i, t in enumerate(s.timestamps):
        f, _ = model.forward(x[t - 4:t].T[None])
        _, r = model.forward(x[t - 3:t + 1].T[None])
        f_term = np.sqrt(((f.data[0] - x[t]) ** 2).sum())
        r_term = np.sqrt(((r.data[0, -1] - x[t]) ** 2).sum())
        assert s.scores[i] == pytest.approx((f_term + 0.7 * r_term) / 2, abs=1e-12)


def test_full_window_recon_flag():
    model = bias_model([0.5, 0.5], [3.5, 4.5], w=4)
    s = score(model, np.full((10, 2), 0.5), full_window_recon=True)
    assert np.allclose(s.recon_term, 10.0)   # sqrt(4 rows * 25)


def test_disabled_head_term_is_zero():
    cfg = SlmrConfig(window=4, n_features=2, channels=4, groups=2, hidden=3, forecast_head=False)
    s = score(SlmrModel(cfg), np.random.default_rng(2).normal(size=(9, 2)))
    assert np.all(s.forecast_term == 0.0) and np.all(s.recon_term > 0.0)


def test_score_errors():
    model = bias_model([0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError, match="features"):
        score(model, np.zeros((10, 3)))
    with pytest.raises(ValueError, match="short"):
        score(model, np.zeros((4, 2)))
    model.params["gru.u"].data[0, 0] = np.nan
    with pytest.raises(FloatingPointError):
        score(model, np.zeros((10, 2)))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(-1e3, 1e3))
def test_scores_finite_and_non_negative(seed, scale):
    cfg = SlmrConfig(window=4, n_features=2, channels=4, groups=2, hidden=3)
    x = np.random.default_rng(seed).normal(size=(12, 2)) * scale
    s = score(SlmrModel(cfg, seed=seed), x)
    assert len(s) == 8 and np.all(np.isfinite(s.scores)) and np.all(s.scores >= 0)


# -- point adjust --------------------------------------------------------------

def test_point_adjust_fills_segment():
    assert point_adjust([0, 0, 1, 0, 0], [0, 1, 1, 1, 0]).tolist() == [0, 1, 1, 1, 0]


def test_point_adjust_all_zero_unchanged():
    assert point_adjust([0, 0, 0], [1, 1, 0]).tolist() == [0, 0, 0]


def test_point_adjust_keeps_false_positives():
    assert point_adjust([1, 0, 0, 0, 1], [0, 1, 1, 0, 0]).tolist() == [1, 0, 0, 0, 1]


def test_point_adjust_fixture_multi_segment():
    truth = [0, 1, 1, 0, 1, 1, 1, 0, 1, 0, 1, 1]
    pred = [0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0]
    assert point_adjust(pred, truth).tolist() == [0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0]


def test_point_adjust_length_mismatch():
    with pytest.raises(ValueError):
        point_adjust([0, 1], [0, 1, 1])


@settings(max_examples=200, deadline=None)
@given(binary, st.data())
def test_point_adjust_matches_loop_and_is_idempotent(truth, data):
    pred = data.draw(st.lists(st.integers(0, 1), min_size=len(truth), max_size=len(truth)))
    adj = point_adjust(pred, truth)
    assert adj.tolist() == point_adjust_loop(pred, truth)
    assert np.array_equal(point_adjust(adj, truth), adj)


@settings(max_examples=200, deadline=None)
@given(binary, st.data())
def test_point_adjust_monotone_recall(truth, data):
    pred = data.draw(st.lists(st.integers(0, 1), min_size=len(truth), max_size=len(truth)))
    i = data.draw(st.integers(0, len(truth) - 1))
    more = list(pred)
    more[i] = 1
    tp0 = f1_counts(point_adjust(pred, truth), truth)[0]
    tp1 = f1_counts(point_adjust(more, truth), truth)[0]
    assert tp1 >= tp0


def test_segments_helper():
    assert segments([1, 1, 0, 1, 0, 0, 1]) == [(0, 2), (3, 4), (6, 7)]
    assert segments([0, 0]) == []


# -- metrics -------------------------------------------------------------------

def test_report_counts_and_f1():
    rep = report_from_predictions([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (rep.tp, rep.fp, rep.fn, rep.tn) == (2, 1, 1, 1)
    assert rep.precision == pytest.approx(2 / 3) and rep.recall == pytest.approx(2 / 3)
    assert rep.f1 == pytest.approx(2 * rep.precision * rep.recall / (rep.precision + rep.recall))


def test_report_zero_f1_when_nothing_predicted():
    rep = report_from_predictions([0, 0, 0], [0, 1, 0])
    assert (rep.precision, rep.recall, rep.f1) == (0.0, 0.0, 0.0)


def test_evaluate_adjusts_by_default():
    rep, pred = evaluate([0.1, 0.9, 0.2, 0.1], [0, 1, 1, 0], threshold=0.5)
    assert pred.tolist() == [0, 1, 1, 0] and rep.f1 == 1.0
    rep, pred = evaluate([0.1, 0.9, 0.2, 0.1], [0, 1, 1, 0], threshold=0.5, adjust=False)
    assert rep.recall == 0.5


def test_pooled_report_counts_all_entities():
    rep = pooled_report([(np.array([1, 0]), np.array([1, 1])), (np.array([1, 1]), np.array([0, 1]))])
    assert (rep.tp, rep.fp, rep.fn) == (2, 1, 1)
    with pytest.raises(ValueError):
        pooled_report([])


# -- best-F1 -------------------------------------------------------------------

def test_separable_case():
    thr, rep = best_f1_threshold([1.0, 2.0, 9.0], [0, 0, 1])
    assert 2.0 < thr < 9.0 and rep.f1 == 1.0


def test_all_equal_scores_predict_everything():
    thr, rep = best_f1_threshold([0.3] * 4, [0, 1, 1, 0])
    # two candidates: all-positive (F1 = 2/3) and all-negative (F1 = 0)
    assert thr < 0.3 and rep.f1 == pytest.approx(2 / 3) and rep.fp == 2


def test_no_anomalies_is_an_error():
    with pytest.raises(ValueError, match="no anomalies"):
        best_f1_threshold([1.0, 2.0], [0, 0])


def test_tie_prefers_higher_precision():
    # all-positive: tp=4 fp=4 fn=0 -> F1 2/3, P 0.5; tau in [3, 5): tp=2 fp=0 fn=2 -> F1 2/3, P 1
    scores = [5.0, 5.0, 3.0, 3.0, 3.0, 3.0, 1.0, 1.0]
    truth = [1, 1, 0, 0, 0, 0, 1, 1]
    _, _, _, _, f1 = f1_curve(scores, truth)
    assert f1[0] == pytest.approx(2 / 3) and f1[2] == pytest.approx(2 / 3)
    thr, rep = best_f1_threshold(scores, truth)
    assert thr == 4.0 and rep.f1 == pytest.approx(2 / 3) and rep.precision == 1.0


def test_candidates_span_all_positive_to_all_negative():
    c = candidate_thresholds([2.0, 1.0, 2.0])
    assert c[0] < 1.0 and c[1:].tolist() == [1.0, 2.0]


def test_random_200_point_case_matches_enumeration():
    rng = np.random.default_rng(0)
    truth = np.zeros(200, dtype=int)
    for s in (20, 70, 150):
        truth[s:s + 10] = 1
    scores = rng.random(200) + truth * rng.random(200)
    thr, rep = best_f1_threshold(scores, truth)
    f1, prec = best_f1_enumerate(scores, truth)
    assert rep.f1 == pytest.approx(f1, abs=1e-12) and rep.precision == pytest.approx(prec, abs=1e-12)
    assert (thr, rep) == best_f1_threshold_bruteforce(scores, truth)


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 80), st.integers(0, 2 ** 31), st.integers(2, 12))
def test_sweep_matches_bruteforce(n, seed, levels):
    rng = np.random.default_rng(seed)
    truth = (rng.random(n) < 0.3).astype(int)
    truth[rng.integers(n)] = 1
    scores = rng.integers(0, levels, size=n) / levels   # heavy ties
    thr, rep = best_f1_threshold(scores, truth)
    thr_b, rep_b = best_f1_threshold_bruteforce(scores, truth)
    assert thr == thr_b and rep.f1 == rep_b.f1 and rep.precision == rep_b.precision
    f1, prec = best_f1_enumerate(scores, truth)
    assert rep.f1 == pytest.approx(f1, abs=1e-12) and rep.precision == pytest.approx(prec, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 60), st.integers(0, 2 ** 31))
def test_best_beats_every_unique_threshold(n, seed):
    rng = np.random.default_rng(seed)
    truth = (rng.random(n) < 0.4).astype(int)
    truth[0] = 1
    scores = rng.random(n)
    _, best = best_f1_threshold(scores, truth)
    for tau in np.unique(scores):
        assert evaluate(scores, truth, tau)[0].f1 <= best.f1 + 1e-15


# -- localization --------------------------------------------------------------

def test_exact_overlap_is_one_hit():
    loc = localize([0, 1, 1, 0], [0, 1, 1, 0])
    assert (loc.hits, loc.misses, loc.false_alarms) == (1, 0, 0)


def test_one_detection_covering_two_segments():
    loc = localize([1, 1, 1, 1, 1], [1, 1, 0, 1, 1])
    assert loc.hits == 2 and loc.detected_segments == [(0, 5, [0, 1])]


def test_multi_segment_fixture():
    truth = [0, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0, 1, 1, 1, 0, 0, 0]
    pred = [0, 0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 0, 0]
    loc = localize(pred, truth, offset=100)
    assert [(h.start, h.end, h.detected, h.overlap) for h in loc.true_segments] == [
        (101, 104, True, 1), (107, 109, False, 0), (112, 115, True, 3)]
    assert loc.detected_segments == [(102, 103, [0]), (105, 106, []), (112, 116, [2])]
    assert (loc.hits, loc.misses, loc.false_alarms) == (2, 1, 1)


# -- artifacts -----------------------------------------------------------------

def test_artifact_writers(tmp_path):
    s = score(bias_model([3.5, 4.5], [0.5, 0.5]), np.full((8, 2), 0.5))
    truth = np.array([0, 1, 1, 0])
    rep, pred = evaluate(s.scores, truth, 1.0)
    write_scores_csv(tmp_path / "s.csv", s, pred, truth)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "timestamp,score,forecast_term,recon_term,pred,truth"
    assert lines[1] == "4,2.5,5.0,0.0,1,0"
    write_metrics_json(tmp_path / "m.json", rep, {"dataset": "toy"})
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["dataset"] == "toy" and doc["localization"]["hits"] == 1
