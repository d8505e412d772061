#!/usr/bin/env python3
"""
Test script to verify CLEAR MOT and anomaly scoring
"""

import itertools
import random

import pytest

from utils.geometry import BBox, iou
from utils.metrics import (
    DEFAULT_GATE_GRID, AnomalyScore, CalibrationRow, MotReport, best_row, calibration_frame, clear_mot,
    f1_score, format_anomaly_table, format_calibration_table, format_mot_table, match_anomalies, match_frame,
    nrmse, precision_recall, report_to_key_values, s4, score_anomalies, sweep_gates,
)
from utils.records import AnomalyEvent, AnomalyGroundTruth, GroundTruthTrackRecord
from utils.synth import generate, lane_scenario


def _gt(frame, identity, x, y=0.0, w=10.0, h=10.0):
    return GroundTruthTrackRecord(frame, identity, BBox(x, y, w, h))


def _event(start_s, video="v", track_id=1):
    return AnomalyEvent(video, track_id, start_s)


def test_s4_reproduces_published_arithmetic():
    assert s4(0.8571, 25.432 / 300) == pytest.approx(0.7845, abs=1e-3)
    assert nrmse([25.432]) == pytest.approx(0.08477, abs=1e-5)
    assert s4(1.0, 0.0) == 1.0
    assert s4(0.0, 0.3) == 0.0


def test_f1_examples():
    assert f1_score(5, 0, 0) == 1.0
    assert f1_score(0, 3, 2) == 0.0
    assert f1_score(3, 1, 1) == pytest.approx(0.75)
    assert f1_score(0, 0, 0) == 0.0


def test_precision_recall():
    assert precision_recall(3, 1, 1) == (0.75, 0.75)
    assert precision_recall(0, 0, 0) == (0.0, 0.0)


def test_nrmse_examples():
    assert nrmse([]) == 0.0
    assert nrmse([0.0, 0.0]) == 0.0
    assert nrmse([400.0]) == 1.0
    assert nrmse([30.0, 40.0]) == pytest.approx(0.11785113, abs=1e-6)
    assert 0.0 <= nrmse([1e12, 5.0]) <= 1.0


def test_f1_and_s4_monotone():
    for fn, fp in itertools.product(range(4), range(4)):
        scores = [f1_score(tp, fn, fp) for tp in range(10)]
        assert scores == sorted(scores)
    values = [s4(0.8, n / 20) for n in range(21)]
    assert values == sorted(values, reverse=True)


def test_match_frame_basic():
    boxes = [BBox(0, 0, 10, 10), BBox(50, 50, 10, 10)]
    matches, fp, fn = match_frame(boxes, boxes, 0.5)
    assert [(g, p) for g, p, _ in matches] == [(0, 0), (1, 1)]
    assert (fp, fn) == (0, 0)
    assert match_frame(boxes, [], 0.5) == ([], 0, 2)
    assert match_frame([], boxes, 0.5) == ([], 2, 0)


def _brute_force_frame(gt, pred, thr):
    best = 0.0
    for k in range(min(len(gt), len(pred)) + 1):
        for gs in itertools.combinations(range(len(gt)), k):
            for ps in itertools.permutations(range(len(pred)), k):
                overlaps = [iou(gt[g], pred[p]) for g, p in zip(gs, ps)]
                if all(o >= thr and o > 0 for o in overlaps):
                    best = max(best, sum(overlaps))
    return best


def test_match_frame_equals_exhaustive_optimum():
    rng = random.Random(41)
    crossing_gt = [BBox(0, 0, 10, 10), BBox(6, 0, 10, 10)]
    crossing_pred = [BBox(3, 0, 10, 10), BBox(8, 0, 10, 10), BBox(1, 0, 10, 10)]
    cases = [(crossing_gt, crossing_pred)]
    for _ in range(200):
        gt = [BBox(rng.uniform(0, 30), rng.uniform(0, 30), 10, 10) for _ in range(rng.randint(0, 5))]
        pred = [BBox(rng.uniform(0, 30), rng.uniform(0, 30), 10, 10) for _ in range(rng.randint(0, 5))]
        cases.append((gt, pred))
    for gt, pred in cases:
        matches, fp, fn = match_frame(gt, pred, 0.3)
        total = sum(o for _, _, o in matches)
        assert total == pytest.approx(_brute_force_frame(gt, pred, 0.3))
        assert fp == len(pred) - len(matches)
        assert fn == len(gt) - len(matches)


def test_clear_mot_perfect_and_empty_predictions():
    gt = [_gt(f, 1, 2 * f) for f in range(10)] + [_gt(f, 2, 100) for f in range(5)]
    report = clear_mot(gt, gt)
    assert (report.mota, report.ids, report.mt, report.ml) == (1.0, 0, 2, 0)
    assert report.motp == pytest.approx(1.0)

    empty = clear_mot(gt, [])
    assert empty.mota == 0.0
    assert empty.fn == 15
    assert empty.ml == 2


def test_clear_mot_single_identity_switch():
    gt = [_gt(f, 1, 5 * f) for f in range(10)]
    pred = [_gt(f, 1 if f < 5 else 2, 5 * f) for f in range(10)]
    report = clear_mot(gt, pred)
    assert report.ids == 1
    assert report.mota == pytest.approx(0.9)
    assert (report.fp, report.fn) == (0, 0)


def test_clear_mot_without_ground_truth():
    report = clear_mot([], [_gt(0, 1, 0)])
    assert report.mota is None
    assert report.fp == 1
    assert "undefined" in format_mot_table(report)
    assert "mota = undefined" in report_to_key_values(report)


def test_clear_mot_mota_matches_its_counts():
    rng = random.Random(42)
    for _ in range(30):
        gt = [_gt(f, i, rng.uniform(0, 100), rng.uniform(0, 100))
              for f in range(8) for i in range(1, rng.randint(1, 4) + 1)]
        pred = [_gt(r.frame, rng.randint(1, 4), r.bbox.x + rng.uniform(-3, 3), r.bbox.y)
                for r in gt if rng.random() < 0.8]
        pred = list({(r.frame, r.identity): r for r in pred}.values())
        report = clear_mot(gt, pred)
        assert report.mota == pytest.approx(1 - (report.fp + report.fn + report.ids) / report.gt_total)


def test_match_anomalies_examples():
    gt = [AnomalyGroundTruth("v", 100.0, 150.0)]
    pairs, fp, fn = match_anomalies(gt, [_event(100.0)])
    assert len(pairs) == 1 and pairs[0][2] == 0.0
    assert (fp, fn) == (0, 0)

    pairs, fp, fn = match_anomalies(gt, [_event(111.0)])
    assert (len(pairs), fp, fn) == (0, 1, 1)

    gt = [AnomalyGroundTruth("v", 100.0, 150.0), AnomalyGroundTruth("v", 200.0, 260.0)]
    pairs, fp, fn = match_anomalies(gt, [_event(195.0), _event(104.0)])
    assert sorted((g.start_s, p.start_s) for g, p, _ in pairs) == [(100.0, 104.0), (200.0, 195.0)]
    assert (fp, fn) == (0, 0)


def test_match_anomalies_prefers_more_pairs_over_smaller_error():
    gt = [AnomalyGroundTruth("v", 0.0, 50.0), AnomalyGroundTruth("v", 10.0, 60.0)]
    pairs, fp, fn = match_anomalies(gt, [_event(9.0), _event(19.0)])
    assert sorted((g.start_s, p.start_s) for g, p, _ in pairs) == [(0.0, 9.0), (10.0, 19.0)]
    assert (fp, fn) == (0, 0)


def _brute_force_anomalies(gt, pred, window_s):
    """(pair count, summed error) of the best pairing by exhaustive search"""
    best = (0, 0.0)
    for k in range(min(len(gt), len(pred)) + 1):
        for gs in itertools.combinations(range(len(gt)), k):
            for ps in itertools.permutations(range(len(pred)), k):
                errors = [abs(pred[p].start_s - gt[g].start_s) for g, p in zip(gs, ps)]
                if all(e <= window_s for e in errors):
                    total = sum(errors)
                    if k > best[0] or (k == best[0] and total < best[1]):
                        best = (k, total)
    return best


def test_match_anomalies_equals_exhaustive_optimum():
    rng = random.Random(43)
    for _ in range(150):
        gt = [AnomalyGroundTruth("v", rng.uniform(0, 60), 300.0) for _ in range(rng.randint(0, 5))]
        pred = [_event(rng.uniform(0, 60)) for _ in range(rng.randint(0, 5))]
        pairs, fp, fn = match_anomalies(gt, pred, 10.0)
        count, total = _brute_force_anomalies(gt, pred, 10.0)
        assert len(pairs) == count
        assert sum(e for _, _, e in pairs) == pytest.approx(total, abs=1e-6)
        assert len({id(g) for g, _, _ in pairs}) == len({id(p) for _, p, _ in pairs}) == count
        assert (fp, fn) == (len(pred) - count, len(gt) - count)


def test_score_anomalies_per_video():
    gt = [AnomalyGroundTruth("a", 10.0, 90.0), AnomalyGroundTruth("b", 20.0, 80.0)]
    pred = [_event(13.0, "a"), _event(20.0, "a"), _event(24.0, "b", 2)]
    score = score_anomalies(gt, pred)
    assert (score.tp, score.fp, score.fn) == (2, 1, 0)
    assert score.f1 == pytest.approx(0.8)
    assert score.rmse_s == pytest.approx(((9 + 16) / 2) ** 0.5)
    assert score.s4 == pytest.approx(0.8 * (1 - score.rmse_s / 300))


def test_score_equal_predictions_is_perfect():
    gt = [AnomalyGroundTruth("v", 3.0, 90.0), AnomalyGroundTruth("v", 400.0, 500.0)]
    score = score_anomalies(gt, [_event(g.start_s) for g in gt])
    assert (score.f1, score.nrmse, score.s4) == (1.0, 0.0, 1.0)


def test_sweep_gates_and_best_row(cfg):
    spec = lane_scenario(6, 300, rng_seed=5)
    detections, gt, _ = generate(spec)
    rows = sweep_gates(detections, gt, cfg)
    assert [(r.sim_gate, r.iou_gate, r.dist_gate_px) for r in rows] == list(DEFAULT_GATE_GRID)
    best = best_row(rows)
    assert best.mota == max(r.mota for r in rows)
    assert rows[-1].mota == 1.0

    frame = calibration_frame(rows)
    assert list(frame.columns) == ["sim_gate", "iou_gate", "dist_gate_px", "fp", "fn", "ids", "mota"]
    assert len(frame) == len(DEFAULT_GATE_GRID)
    assert "sim_gate" in format_calibration_table(rows)


def test_best_row_tie_breaks():
    rows = [
        CalibrationRow(0.9, 0.9, 5, 0, 4, 1, 0.8),
        CalibrationRow(0.8, 0.6, 10, 2, 1, 0, 0.8),
        CalibrationRow(0.7, 0.5, 20, 3, 1, 0, 0.8),
        CalibrationRow(0.6, 0.4, 30, 0, 0, 0, None),
    ]
    assert best_row(rows) is rows[1]
    assert best_row([rows[3]]) is None


def test_report_formatting():
    score = AnomalyScore(f1=0.75, nrmse=0.1, s4=0.675, tp=3, fp=1, fn=1, rmse_s=30.0)
    table = format_anomaly_table(score)
    assert "S4" in table and "0.6750" in table
    text = report_to_key_values(score)
    assert "f1 = 0.75\n" in text
    assert text.endswith("rmse_s = 30.0\n")

    report = MotReport(mota=0.9, motp=0.8, mt=1, ml=0, ids=1, fp=0, fn=0, gt_total=10, hz=12.5)
    assert "MOTA" in format_mot_table(report)
    assert "hz = 12.5" in report_to_key_values(report)
