#!/usr/bin/env python3
"""
Test script to verify dwell counting, hypothetical states and anomaly events
"""

import numpy as np
import pytest

from utils.anomaly import (
    AnomalyDetector, DwellState, detected_fraction, estimate_speed, find_stop_onset, in_scene,
    propagate_hypothetical, severity,
)
from utils.association import run_tracker
from utils.geometry import BBox, convex_hull
from utils.records import Severity
from utils.roi import RegionOfInterest, learn_roi
from utils.synth import ScenarioSpec, VehicleSpec, generate
from utils.tracks import StateSource, Track, TrackState, TrackStatus

from conftest import stop_scenario


def _box(cx, cy, w=60.0, h=30.0):
    return BBox(cx - w / 2, cy - h / 2, w, h)


def _track(identity, centers, first_frame=0):
    track = Track(identity)
    for k, (cx, cy) in enumerate(centers):
        track.append(TrackState(first_frame + k, _box(cx, cy)))
    return track


def _stopping_centers(stop_frame, stop_len, total, y=500.0, speed=4.0, x0=200.0):
    """Drive at `speed` px/frame, stand still from stop_frame for stop_len frames, then drive on"""
    centers = []
    x = x0
    for f in range(total):
        centers.append((x, y))
        if not stop_frame <= f < stop_frame + stop_len:
            x += speed
    return centers


def test_estimate_speed_examples():
    assert estimate_speed(_track(1, [(100.0, 100.0)] * 100), 100) == 0.0
    assert estimate_speed(_track(1, [(100.0 + 2 * k, 100.0) for k in range(100)]), 100) == pytest.approx(2.0)
    half = [(100.0 + 4 * min(k, 50), 100.0) for k in range(101)]
    assert estimate_speed(_track(1, half), 100) == pytest.approx(2.0)


def test_estimate_speed_undefined_for_single_state():
    assert estimate_speed(_track(1, [(1.0, 1.0)]), 100) is None
    assert estimate_speed(Track(1), 100) is None


def test_estimate_speed_uses_only_the_window():
    centers = [(100.0 + 4 * k, 100.0) for k in range(50)] + [(296.0, 100.0)] * 200
    assert estimate_speed(_track(1, centers), 100) == 0.0


def test_in_scene_examples():
    extent = (1920, 1080)
    assert in_scene(_box(960, 540), extent, 10)
    assert not in_scene(_box(5, 540), extent, 10)
    assert in_scene(_box(10, 540), extent, 10)
    assert in_scene(_box(1910, 1070), extent, 10)
    assert not in_scene(_box(1911, 540), extent, 10)


def test_propagate_hypothetical_one_and_ten_frames():
    track = _track(7, [(500.0, 500.0)] * 20)
    propagate_hypothetical(track, 20)
    assert len(track.states) == 21
    assert track.current.source is StateSource.HYPOTHESIZED
    assert track.current.bbox == track.states[-2].bbox

    for frame in range(21, 31):
        propagate_hypothetical(track, frame)
    assert len(track.states) == 31
    assert {s.bbox.center for s in track.states} == {(500.0, 500.0)}
    assert track.identity == 7


def test_propagate_hypothetical_preconditions(cfg):
    moving = _track(1, [(100.0 + 5 * k, 300.0) for k in range(20)])
    propagate_hypothetical(moving, 20, cfg)
    assert len(moving.states) == 20

    leaving = _track(2, [(3.0, 300.0)] * 20)
    propagate_hypothetical(leaving, 20, cfg)
    assert len(leaving.states) == 20

    stale = _track(3, [(500.0, 500.0)] * 5)
    propagate_hypothetical(stale, 4)
    assert len(stale.states) == 5

    assert propagate_hypothetical(Track(4), 3).states == []


def test_severity_boundaries(cfg):
    assert severity(30, cfg) is Severity.NONE
    assert severity(59.99, cfg) is Severity.NONE
    assert severity(60, cfg) is Severity.GREEN
    assert severity(120, cfg) is Severity.YELLOW
    assert severity(180, cfg) is Severity.RED
    assert severity(200, cfg) is Severity.RED


def test_severity_never_decreases_in_sweep(cfg):
    ranks = [severity(s / 10, cfg).rank for s in range(0, 4000)]
    assert ranks == sorted(ranks)


def test_find_stop_onset_backdates_to_last_motion(cfg):
    track = _track(1, _stopping_centers(100, 1000, 190))
    assert find_stop_onset(track, cfg) == 100


def test_detected_fraction():
    track = _track(1, [(500.0, 500.0)] * 10)
    for frame in range(10, 20):
        propagate_hypothetical(track, frame)
    assert detected_fraction(track, 0, 9) == 1.0
    assert detected_fraction(track, 0, 19) == 0.5
    assert detected_fraction(track, 10, 19) == 0.0


def test_dwell_state_reset():
    dwell = DwellState(3, stopped_since_frame=10, dwell_frames=50, alarm_raised=True, anchor=(1.0, 2.0))
    assert dwell.stopped
    dwell.reset()
    assert not dwell.stopped
    assert dwell.dwell_frames == 0 and not dwell.alarm_raised and dwell.anchor is None


def test_moving_vehicle_never_raises(cfg):
    centers = [(20.0 + 0.9 * k, 500.0) for k in range(2100)]
    _, events = AnomalyDetector(cfg, "v").run([_track(1, centers)])
    assert events == []


def test_stop_at_frame_100_raises_at_frame_1900(cfg):
    detector = AnomalyDetector(cfg, "v")
    track = _track(1, _stopping_centers(100, 5000, 2200))
    index = {s.frame: s for s in track.states}
    raised = {}
    for frame in range(2200):
        for event in detector.observe(frame, {1: index[frame]}):
            raised[frame] = event
    assert list(raised) == [1900]
    event = raised[1900]
    assert event.start_s == pytest.approx(100 / 30)
    assert event.severity is Severity.GREEN
    assert event.is_open

    events = detector.finalize()
    assert events[0].end_s == pytest.approx(2199 / 30)
    assert events[0].confidence == 1.0


def test_short_stop_raises_nothing(cfg):
    centers = _stopping_centers(100, 1700, 2200)
    _, events = AnomalyDetector(cfg, "v").run([_track(1, centers)])
    assert events == []


def test_stops_of_random_length_below_a_minute_raise_nothing(cfg):
    rng = np.random.default_rng(31)
    for stop_frames in rng.integers(1, 1750, size=6):
        spec = ScenarioSpec(duration_frames=int(stop_frames) + 400, rng_seed=5, vehicles=[
            VehicleSpec(0, 100.0, 500.0, segments=[(100, 4.0, 0.0), (int(stop_frames), 0.0, 0.0), (300, 4.0, 0.0)],
                        feature_seed=1),
        ])
        detections, _, gt_anomalies = generate(spec)
        state = run_tracker(detections, cfg)
        detector = AnomalyDetector(cfg, spec.video_id)
        _, events = detector.run(state.ordered_tracks())
        assert gt_anomalies == []
        assert events == [], stop_frames
        assert all(d.dwell_frames < cfg.dwell_threshold_frames for d in detector.dwell_states.values())


def test_stops_of_random_length_above_a_minute_raise_once(cfg):
    rng = np.random.default_rng(32)
    for stop_frames in rng.integers(1850, 2600, size=3):
        _, events = AnomalyDetector(cfg, "v").run([_track(1, _stopping_centers(100, int(stop_frames),
                                                                                int(stop_frames) + 200))])
        assert len(events) == 1
        assert events[0].start_s == pytest.approx(100 / 30)


def test_creeping_vehicle_keeps_one_event(cfg):
    centers = [(200.0 + 5 * k, 500.0) for k in range(100)]
    centers += [(695.0 + 0.4 * k, 500.0) for k in range(1, 2501)]
    detector = AnomalyDetector(cfg, "v")
    _, events = detector.run([_track(1, centers)])
    assert len(events) == 1
    event = events[0]
    assert event.start_s == pytest.approx(99 / 30)
    assert event.end_s == pytest.approx(2599 / 30, abs=0.05)
    assert [s for _, s in event.severity_changes] == [Severity.GREEN]
    assert detector.stats["events"] == 1
    assert detector.stats["resumed_events"] > 0


def test_exited_track_stays_exited(cfg):
    track = _track(1, [(5.0, 540.0)] * 3)
    for frame in (4, 5):
        track.append(TrackState(frame, _box(5.0, 540.0)))
    detector = AnomalyDetector(cfg, "v")
    tracks, _ = detector.run([track])
    assert [t.identity for t in tracks] == [1]
    assert tracks[0].status is TrackStatus.EXITED
    assert tracks[0].last_matched_frame == 2
    assert [s.frame for s in tracks[0].states] == [0, 1, 2]
    assert detector.stats["dropped_observations"] == 2


def test_observation_outside_the_gates_leaves_moving_track_lost(cfg):
    track = _track(1, [(200.0 + 4 * k, 500.0) for k in range(10)])
    track.append(TrackState(10, _box(400.0, 500.0)))
    tracks, _ = AnomalyDetector(cfg, "v").run([track])
    assert tracks[0].status is TrackStatus.LOST
    assert tracks[0].last_matched_frame == 9
    assert len(tracks[0].states) == 10


def test_observation_outside_the_gates_keeps_stopped_track_in_place(cfg):
    track = _track(1, [(500.0, 500.0)] * 10)
    track.append(TrackState(10, _box(600.0, 500.0)))
    tracks, _ = AnomalyDetector(cfg, "v").run([track])
    last = tracks[0].states[-1]
    assert last.frame == 10
    assert last.source is StateSource.HYPOTHESIZED
    assert last.bbox.center == (500.0, 500.0)


def test_event_closes_when_vehicle_drives_off(cfg):
    centers = _stopping_centers(100, 2000, 2400)
    _, events = AnomalyDetector(cfg, "v").run([_track(1, centers)])
    assert len(events) == 1
    assert events[0].start_s == pytest.approx(100 / 30)
    assert events[0].end_s == pytest.approx(2102 / 30)


def test_severity_escalates_with_duration(cfg):
    centers = _stopping_centers(0, 6000, 5600)
    _, events = AnomalyDetector(cfg, "v").run([_track(1, centers)])
    event = events[0]
    assert event.severity is Severity.RED
    assert [s for _, s in event.severity_changes] == [Severity.GREEN, Severity.YELLOW, Severity.RED]
    assert [f for f, _ in event.severity_changes] == [1800, 3600, 5400]


def test_finalize_confidence_with_hidden_second_half(cfg):
    stopped = _track(1, [(500.0, 500.0)] * 2000)
    witness = _track(2, [(1500.0, 200.0)], first_frame=3999)
    tracks, events = AnomalyDetector(cfg, "v").run([stopped, witness])
    assert len(events) == 1
    assert events[0].start_s == 0.0
    assert events[0].end_s == pytest.approx(3999 / 30)
    assert events[0].confidence == pytest.approx(0.5)
    augmented = tracks[0]
    assert len(augmented.states) == 4000
    assert augmented.states[-1].source is StateSource.HYPOTHESIZED


def test_finalize_without_dwell_states(cfg):
    detector = AnomalyDetector(cfg, "v")
    assert detector.finalize(100) == []
    assert detector.run([]) == ([], [])


def test_vehicle_outside_roi_is_ignored(cfg):
    roi = RegionOfInterest(convex_hull([(0, 0), (400, 0), (400, 400), (0, 400)]), 4, 0)
    parked = _track(1, [(1200.0, 800.0)] * 2500)
    _, events = AnomalyDetector(cfg, "v", roi).run([parked])
    assert events == []


def test_exit_at_frame_edge_ends_the_track(cfg):
    centers = [(1860.0 + 10 * k, 500.0) for k in range(7)]
    tracks, _ = AnomalyDetector(cfg, "v").run([_track(1, centers), _track(2, [(50.0, 50.0)] * 20)])
    assert tracks[0].status is TrackStatus.EXITED
    assert all(s.source is StateSource.DETECTED for s in tracks[0].states)


def test_relinks_new_id_to_hidden_stopped_vehicle(cfg):
    stopped = _track(1, [(500.0, 500.0)] * 2000)
    reappeared = _track(5, [(500.0, 500.0)] * 400, first_frame=2200)
    detector = AnomalyDetector(cfg, "v")
    tracks, events = detector.run([stopped, reappeared])
    assert [t.identity for t in tracks] == [1]
    assert len(tracks[0].states) == 2600
    assert detector.aliases == {5: 1}
    assert detector.stats["relinked_tracks"] == 1
    assert [e.track_id for e in events] == [1]
    assert events[0].end_s == pytest.approx(2599 / 30)


def test_stop_scenario_end_to_end(cfg):
    spec = stop_scenario(occlusions=[(3, 1000, 1059)])
    detections, _, gt_anomalies = generate(spec)
    state = run_tracker(detections, cfg)
    roi = learn_roi(state.ordered_tracks(), cfg)
    tracks, events = AnomalyDetector(cfg, spec.video_id, roi).run(state.ordered_tracks())

    assert len(gt_anomalies) == 2
    assert len(events) == 2
    by_track = {e.track_id: e for e in events}
    assert set(by_track) == {3, 4}
    for event, gt in zip(sorted(events, key=lambda e: e.track_id), gt_anomalies):
        assert abs(event.start_s - gt.start_s) <= 1.0
    assert by_track[3].severity is Severity.RED
    assert by_track[4].severity is Severity.GREEN

    hidden = [s for s in tracks[2].states if 1000 <= s.frame <= 1059]
    assert len(hidden) == 60
    assert all(s.source is StateSource.HYPOTHESIZED for s in hidden)
