#!/usr/bin/env python3
"""
Test script to verify record parsing, writing and engine configuration files
"""

import os

import numpy as np
import pytest

from config import EngineConfig, dump_config, load_config
from utils.errors import ConfigError, DataError
from utils.geometry import BBox
from utils.record_parser import RecordParser, RecordWriter, format_number, video_id_for
from utils.records import AnomalyEvent, DetectionRecord, Severity
from utils.tracks import StateSource, Track, TrackState


def test_detections_empty_file(write_text):
    assert RecordParser.parse_detections(write_text("empty.csv", "")) == []


def test_detections_single_line(write_text):
    records = RecordParser.parse_detections(write_text("one.csv", "0,10,20,30,40,0.9,car\n"))
    assert len(records) == 1
    det = records[0]
    assert det.frame == 0
    assert det.bbox == BBox(10, 20, 30, 40)
    assert det.confidence == 0.9
    assert det.class_label == "car"
    assert det.feature is None


def test_detections_with_features_sorted_by_frame(write_text):
    text = "\n".join([
        "2,0,0,5,5,0.5,car,1,0,0",
        "",
        "1,0,0,5,5,0.5,truck,0,1,0",
        "2,9,9,5,5,0.5,bus,0,0,1",
    ])
    records = RecordParser.parse_detections(write_text("dets.csv", text))
    assert [r.frame for r in records] == [1, 2, 2]
    assert [r.class_label for r in records] == ["truck", "car", "bus"]
    np.testing.assert_array_equal(records[2].feature, [0, 0, 1])
    assert not records[2].feature.flags.writeable


@pytest.mark.parametrize("line, message", [
    ("0,10,20,0,40,0.9,car", "extent"),
    ("-1,10,20,30,40,0.9,car", "frame"),
    ("0,10,20,30,40,1.5,car", "confidence"),
    ("0,10,20,30,40,0.9", "fields"),
    ("0,ten,20,30,40,0.9,car", "x"),
    ("0.5,10,20,30,40,0.9,car", "integer"),
])
def test_detections_malformed_lines_name_the_line(write_text, line, message):
    path = write_text("bad.csv", "0,1,1,5,5,0.9,car\n" + line + "\n")
    with pytest.raises(DataError) as excinfo:
        RecordParser.parse_detections(path)
    assert f"{path}:2:" in str(excinfo.value)
    assert message in str(excinfo.value)
    assert excinfo.value.line == 2


def test_detections_inconsistent_feature_dimension(write_text):
    path = write_text("dims.csv", "0,0,0,5,5,0.5,car,1,0\n1,0,0,5,5,0.5,car,1,0,0\n")
    with pytest.raises(DataError, match="dimension"):
        RecordParser.parse_detections(path)


def test_missing_file_is_data_error(tmp_path):
    with pytest.raises(DataError, match="not found"):
        RecordParser.parse_detections(str(tmp_path / "nope.csv"))


def test_mot_ground_truth(write_text):
    assert RecordParser.parse_mot_ground_truth(write_text("empty.csv", "")) == []
    records = RecordParser.parse_mot_ground_truth(write_text("gt.csv", "0,7,1,2,3,4\n1,7,2,2,3,4\n"))
    assert len(records) == 2
    assert {r.identity for r in records} == {7}
    assert records[1].bbox == BBox(2, 2, 3, 4)


def test_mot_ground_truth_duplicate_key(write_text):
    with pytest.raises(DataError, match="duplicate"):
        RecordParser.parse_mot_ground_truth(write_text("gt.csv", "0,7,1,2,3,4\n0,7,5,5,3,4\n"))


def test_mot_ground_truth_negative_frame(write_text):
    with pytest.raises(DataError, match="negative frame"):
        RecordParser.parse_mot_ground_truth(write_text("gt.csv", "-1,7,1,2,3,4\n"))


def test_ground_truth_errors_name_the_file_line(write_text):
    path = write_text("gt.csv", "\n0,7,1,2,3,4\n\n\n1,7,x,2,3,4\n")
    with pytest.raises(DataError, match=r"gt\.csv:5: x is not a number") as excinfo:
        RecordParser.parse_mot_ground_truth(path)
    assert excinfo.value.line == 5

    path = write_text("dup.csv", "0,7,1,2,3,4\n\n0,7,5,5,3,4\n")
    with pytest.raises(DataError, match="duplicate") as excinfo:
        RecordParser.parse_mot_ground_truth(path)
    assert excinfo.value.line == 3

    path = write_text("anom.csv", "vid0,5,6\n\nvid1,250,100\n")
    with pytest.raises(DataError, match=r"anom\.csv:3: need 0 <= start_s <= end_s") as excinfo:
        RecordParser.parse_anomaly_ground_truth(path)
    assert excinfo.value.line == 3


def test_mot_ground_truth_wrong_width(write_text):
    with pytest.raises(DataError, match="columns"):
        RecordParser.parse_mot_ground_truth(write_text("gt.csv", "0,7,1,2,3\n"))


def test_anomaly_ground_truth(write_text):
    assert RecordParser.parse_anomaly_ground_truth(write_text("empty.csv", "")) == []
    records = RecordParser.parse_anomaly_ground_truth(
        write_text("anom.csv", "vid1,100,250\nvid0,5,6\nvid1,20,30\n"))
    assert [(r.video_id, r.start_s, r.end_s) for r in records] == [
        ("vid0", 5.0, 6.0), ("vid1", 20.0, 30.0), ("vid1", 100.0, 250.0),
    ]
    with pytest.raises(DataError):
        RecordParser.parse_anomaly_ground_truth(write_text("bad.csv", "vid1,250,100\n"))


def test_tracks_written_and_read_back(tmp_path):
    track = Track(3)
    track.append(TrackState(5, BBox(1.5, 2, 10, 20)))
    track.append(TrackState(6, BBox(1.5, 2, 10, 20), source=StateSource.HYPOTHESIZED))
    other = Track(1)
    other.append(TrackState(6, BBox(0.1, 0.2, 3, 4)))
    path = str(tmp_path / "v.tracks.csv")
    RecordWriter.write_tracks(path, [track, other])

    with open(path, encoding="utf-8") as f:
        assert f.read().splitlines() == [
            "5,3,1.5,2,10,20,detected",
            "6,1,0.1,0.2,3,4,detected",
            "6,3,1.5,2,10,20,hypothesized",
        ]
    parsed = RecordParser.parse_tracks(path)
    assert [t.identity for t in parsed] == [1, 3]
    assert [s.source for s in parsed[1].states] == [StateSource.DETECTED, StateSource.HYPOTHESIZED]
    assert parsed[0].states[0].bbox == BBox(0.1, 0.2, 3, 4)


def test_tracks_reject_unknown_source(write_text):
    with pytest.raises(DataError, match="source"):
        RecordParser.parse_tracks(write_text("t.csv", "0,1,0,0,5,5,guessed\n"))


def test_events_written_and_read_back(tmp_path):
    events = [
        AnomalyEvent("cam1", 4, 3.3333333333333335, None, 1.0, Severity.GREEN),
        AnomalyEvent("cam1", 9, 10.0, 95.5, 0.75, Severity.RED),
    ]
    path = str(tmp_path / "cam1.events.csv")
    RecordWriter.write_events(path, events)
    with open(path, encoding="utf-8") as f:
        assert f.read().splitlines() == [
            "cam1,4,3.3333333333333335,,1,green",
            "cam1,9,10,95.5,0.75,red",
        ]
    parsed = RecordParser.parse_events(path)
    assert parsed[0].end_s is None
    assert parsed[1].severity is Severity.RED
    assert parsed[1].end_s == 95.5


def test_detection_line_round_trip(tmp_path):
    det = DetectionRecord(12, BBox(0.25, 1, 2, 3), 0.875, "car", np.array([0.1, -0.2]))
    path = str(tmp_path / "d.csv")
    RecordWriter.write_detections(path, [det])
    with open(path, encoding="utf-8") as f:
        assert f.read() == "12,0.25,1,2,3,0.875,car,0.1,-0.2\n"
    back = RecordParser.parse_detections(path)[0]
    assert back.bbox == det.bbox
    np.testing.assert_array_equal(back.feature, det.feature)


def test_format_number_and_video_id():
    assert format_number(30.0) == "30"
    assert format_number(0.1) == "0.1"
    assert video_id_for(os.path.join("runs", "cam07.tracks.csv")) == "cam07"


def test_load_config_defaults(write_text):
    cfg = load_config(write_text("empty.cfg", ""))
    assert (cfg.iou_gate, cfg.dist_gate_px, cfg.sim_gate) == (0.4, 30.0, 0.6)
    assert (cfg.alpha, cfg.beta) == (0.4, 0.6)
    assert cfg.fps == 30.0
    assert cfg.dwell_threshold_frames == 1800
    assert cfg.speed_window_frames == 100
    assert cfg.scene_margin_px == 10.0
    assert cfg.quadtree_capacity == 4
    assert load_config(None) == EngineConfig()


def test_load_config_values_and_comments(write_text):
    cfg = load_config(write_text("c.cfg", "# gates\nalpha = 0.5\nbeta=0.5  # even\n"
                                           "require_features = yes\nquadtree_radius_px = auto\n"))
    assert (cfg.alpha, cfg.beta) == (0.5, 0.5)
    assert cfg.require_features is True
    assert cfg.quadtree_radius_px is None
    assert cfg.search_radius_px == cfg.dist_gate_px


@pytest.mark.parametrize("text, message", [
    ("alpha = 0.7\nbeta = 0.5\n", "alpha \\+ beta"),
    ("iou_gate = high\n", "expected float"),
    ("colour = red\n", "unknown config key"),
    ("fps = 25\nfps = 30\n", "duplicate"),
    ("fps\n", "key = value"),
])
def test_load_config_errors(write_text, text, message):
    with pytest.raises(ConfigError, match=message):
        load_config(write_text("bad.cfg", text))


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.cfg"))


def test_dump_config_reads_back(write_text):
    cfg = EngineConfig(alpha=0.3, beta=0.7, quadtree_radius_px=45.0, require_features=True)
    assert load_config(write_text("dumped.cfg", dump_config(cfg))) == cfg
