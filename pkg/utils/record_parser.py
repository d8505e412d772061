"""
Record Parser for detection streams, ground truth and pipeline outputs

Every format is plain UTF-8 CSV without a header:

    detections      frame,x,y,w,h,confidence,class[,f1,f2,...]
    tracking GT     frame,id,x,y,w,h
    anomaly GT      video_id,start_s,end_s
    tracks          frame,id,x,y,w,h,source
    events          video_id,track_id,start_s,end_s,confidence,severity
"""

import csv
import io
import logging
import os
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DataError
from .features import as_feature
from .geometry import BBox
from .records import AnomalyEvent, AnomalyGroundTruth, DetectionRecord, GroundTruthTrackRecord, Severity
from .tracks import StateSource, Track, TrackState

logger = logging.getLogger(__name__)


def format_number(value: float) -> str:
    """Shortest text that reads back to the same float; integral values lose the '.0'"""
    value = float(value)
    if value.is_integer():
        return str(int(value))
    return repr(value)


def video_id_for(path: str) -> str:
    """File name up to its first dot: `runs/cam07.tracks.csv` -> `cam07`"""
    return os.path.basename(path).split(".", 1)[0]


class RecordParser:
    DETECTION_FIELDS = 7
    GT_COLUMNS = ["frame", "identity", "x", "y", "w", "h"]
    ANOMALY_COLUMNS = ["video_id", "start_s", "end_s"]

    @staticmethod
    def require_file(path: str) -> None:
        if not os.path.exists(path):
            raise DataError("file not found", path)
        if not os.path.isfile(path):
            raise DataError("not a regular file", path)

    @staticmethod
    def int_field(text: str, name: str, path: str, lineno: int) -> int:
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"{name} is not a number: {text!r}", path, lineno) from None
        if not value.is_integer():
            raise DataError(f"{name} must be an integer: {text!r}", path, lineno)
        return int(value)

    @staticmethod
    def float_field(text: str, name: str, path: str, lineno: int) -> float:
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"{name} is not a number: {text!r}", path, lineno) from None
        if not np.isfinite(value):
            raise DataError(f"{name} is not finite: {text!r}", path, lineno)
        return value

    @staticmethod
    def _bbox(fields: Sequence[str], path: str, lineno: int) -> BBox:
        x, y, w, h = (RecordParser.float_field(v, n, path, lineno)
                      for v, n in zip(fields, ("x", "y", "w", "h")))
        if not (w > 0 and h > 0):
            raise DataError(f"box extent must be positive, got w={w} h={h}", path, lineno)
        return BBox(x, y, w, h)

    @staticmethod
    def csv_rows(path: str) -> Iterable[tuple]:
        """(line number, stripped fields) for every non-blank line"""
        with open(path, "r", encoding="utf-8", newline="") as f:
            for lineno, row in enumerate(csv.reader(f), 1):
                fields = [v.strip() for v in row]
                if not fields or all(v == "" for v in fields):
                    continue
                yield lineno, fields

    @staticmethod
    def parse_detections(path: str) -> List[DetectionRecord]:
        """Parse a detection stream; records come back ordered by frame, stable within a frame"""
        RecordParser.require_file(path)
        records: List[DetectionRecord] = []
        feature_dim: Optional[int] = None

        for lineno, fields in RecordParser.csv_rows(path):
            if len(fields) < RecordParser.DETECTION_FIELDS:
                raise DataError(
                    f"expected at least {RecordParser.DETECTION_FIELDS} fields, got {len(fields)}",
                    path, lineno,
                )
            frame = RecordParser.int_field(fields[0], "frame", path, lineno)
            if frame < 0:
                raise DataError(f"frame must be >= 0, got {frame}", path, lineno)
            bbox = RecordParser._bbox(fields[1:5], path, lineno)
            confidence = RecordParser.float_field(fields[5], "confidence", path, lineno)
            if not 0.0 <= confidence <= 1.0:
                raise DataError(f"confidence must be within [0, 1], got {confidence}", path, lineno)
            class_label = fields[6]
            if not class_label:
                raise DataError("empty class label", path, lineno)

            feature = None
            if len(fields) > RecordParser.DETECTION_FIELDS:
                values = [RecordParser.float_field(v, "feature", path, lineno)
                          for v in fields[RecordParser.DETECTION_FIELDS:]]
                if feature_dim is None:
                    feature_dim = len(values)
                elif len(values) != feature_dim:
                    raise DataError(
                        f"feature dimension {len(values)} differs from earlier dimension {feature_dim}",
                        path, lineno,
                    )
                feature = as_feature(values)

            records.append(DetectionRecord(frame, bbox, confidence, class_label, feature))

        records.sort(key=lambda r: r.frame)
        logger.info(f"Parsed {path}: {len(records)} detections"
                    + (f", feature dimension {feature_dim}" if feature_dim else ""))
        return records

    @staticmethod
    def _read_frame(path: str, columns: List[str], dtype: Optional[Dict] = None) -> pd.DataFrame:
        """Fixed-column CSV; the index holds each row's 1-based file line number"""
        RecordParser.require_file(path)
        with open(path, encoding="utf-8") as f:
            numbered = [(lineno, line) for lineno, line in enumerate(f, 1) if line.strip()]
        if not numbered:
            return pd.DataFrame(columns=columns)
        try:
            df = pd.read_csv(io.StringIO("".join(line for _, line in numbered)), header=None,
                             skipinitialspace=True, dtype=dtype)
        except pd.errors.ParserError as e:
            raise DataError(f"malformed CSV: {e}", path) from None
        df.index = pd.Index([lineno for lineno, _ in numbered])
        if df.shape[1] != len(columns):
            raise DataError(f"expected {len(columns)} columns, got {df.shape[1]}", path, int(df.index[0]))
        df.columns = columns
        return df

    @staticmethod
    def _first_line(df: pd.DataFrame, mask: pd.Series) -> int:
        return int(df.index[mask.to_numpy()][0])

    @staticmethod
    def _numeric(df: pd.DataFrame, columns: Sequence[str], path: str) -> pd.DataFrame:
        for col in columns:
            converted = pd.to_numeric(df[col], errors="coerce")
            bad = converted.isna()
            if bad.any():
                line = RecordParser._first_line(df, bad)
                raise DataError(f"{col} is not a number: {df[col].loc[line]!r}", path, line)
            df[col] = converted.astype(float)
        return df

    @staticmethod
    def parse_mot_ground_truth(path: str) -> List[GroundTruthTrackRecord]:
        df = RecordParser._read_frame(path, RecordParser.GT_COLUMNS)
        if df.empty:
            return []
        df = RecordParser._numeric(df, RecordParser.GT_COLUMNS, path)

        for col in ("frame", "identity"):
            fractional = df[col] % 1 != 0
            if fractional.any():
                raise DataError(f"{col} must be an integer", path, RecordParser._first_line(df, fractional))
        negative = df["frame"] < 0
        if negative.any():
            raise DataError("negative frame", path, RecordParser._first_line(df, negative))
        flat = (df["w"] <= 0) | (df["h"] <= 0)
        if flat.any():
            raise DataError("box extent must be positive", path, RecordParser._first_line(df, flat))
        dup = df.duplicated(subset=["frame", "identity"])
        if dup.any():
            line = RecordParser._first_line(df, dup)
            raise DataError(
                f"duplicate (frame, identity) = "
                f"({int(df['frame'].loc[line])}, {int(df['identity'].loc[line])})", path, line,
            )

        records = [
            GroundTruthTrackRecord(int(r.frame), int(r.identity), BBox(r.x, r.y, r.w, r.h))
            for r in df.itertuples(index=False)
        ]
        logger.info(f"Parsed {path}: {len(records)} ground-truth boxes, "
                    f"{df['identity'].nunique()} identities")
        return records

    @staticmethod
    def parse_anomaly_ground_truth(path: str) -> List[AnomalyGroundTruth]:
        """Anomaly intervals, sorted by video then start time"""
        df = RecordParser._read_frame(path, RecordParser.ANOMALY_COLUMNS, dtype={0: str})
        if df.empty:
            return []
        df = RecordParser._numeric(df, ["start_s", "end_s"], path)
        bad = (df["start_s"] < 0) | (df["end_s"] < df["start_s"])
        if bad.any():
            line = RecordParser._first_line(df, bad)
            raise DataError(
                f"need 0 <= start_s <= end_s, got {df['start_s'].loc[line]}..{df['end_s'].loc[line]}",
                path, line,
            )
        df["video_id"] = df["video_id"].astype(str).str.strip()
        df = df.sort_values(["video_id", "start_s"], kind="stable")
        records = [AnomalyGroundTruth(r.video_id, float(r.start_s), float(r.end_s))
                   for r in df.itertuples(index=False)]
        logger.info(f"Parsed {path}: {len(records)} ground-truth anomalies")
        return records

    @staticmethod
    def parse_tracks(path: str) -> List[Track]:
        """Read a tracks file back into Track objects ordered by identity"""
        RecordParser.require_file(path)
        tracks: Dict[int, Track] = {}
        for lineno, fields in RecordParser.csv_rows(path):
            if len(fields) != 7:
                raise DataError(f"expected 7 fields, got {len(fields)}", path, lineno)
            frame = RecordParser.int_field(fields[0], "frame", path, lineno)
            identity = RecordParser.int_field(fields[1], "id", path, lineno)
            bbox = RecordParser._bbox(fields[2:6], path, lineno)
            try:
                source = StateSource(fields[6])
            except ValueError:
                raise DataError(f"unknown state source {fields[6]!r}", path, lineno) from None
            track = tracks.setdefault(identity, Track(identity))
            try:
                track.append(TrackState(frame, bbox, None, source))
            except ValueError as e:
                raise DataError(str(e), path, lineno) from None
        return [tracks[k] for k in sorted(tracks)]

    @staticmethod
    def parse_events(path: str) -> List[AnomalyEvent]:
        RecordParser.require_file(path)
        events: List[AnomalyEvent] = []
        for lineno, fields in RecordParser.csv_rows(path):
            if len(fields) != 6:
                raise DataError(f"expected 6 fields, got {len(fields)}", path, lineno)
            video_id = fields[0]
            track_id = RecordParser.int_field(fields[1], "track_id", path, lineno)
            start_s = RecordParser.float_field(fields[2], "start_s", path, lineno)
            end_s = None
            if fields[3]:
                end_s = RecordParser.float_field(fields[3], "end_s", path, lineno)
                if end_s < start_s:
                    raise DataError("end_s before start_s", path, lineno)
            confidence = RecordParser.float_field(fields[4], "confidence", path, lineno)
            try:
                severity = Severity(fields[5])
            except ValueError:
                raise DataError(f"unknown severity {fields[5]!r}", path, lineno) from None
            events.append(AnomalyEvent(video_id, track_id, start_s, end_s, confidence, severity))
        return events

    @staticmethod
    def track_records(tracks: Iterable[Track]) -> List[GroundTruthTrackRecord]:
        """Flatten tracks into per-frame (frame, id, box) records for evaluation"""
        return [
            GroundTruthTrackRecord(state.frame, track.identity, state.bbox)
            for track in tracks for state in track.states
        ]


class RecordWriter:
    """Serializers producing exactly what RecordParser reads"""

    @staticmethod
    def _write_lines(path: str, lines: Iterable[str]) -> int:
        count = 0
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for line in lines:
                f.write(line + "\n")
                count += 1
        logger.debug(f"Wrote {count} lines to {path}")
        return count

    @staticmethod
    def _box_fields(bbox: BBox) -> List[str]:
        return [format_number(v) for v in bbox.as_tuple()]

    @staticmethod
    def detection_line(det: DetectionRecord) -> str:
        fields = [str(det.frame)] + RecordWriter._box_fields(det.bbox)
        fields += [format_number(det.confidence), det.class_label]
        if det.feature is not None:
            fields += [format_number(v) for v in det.feature]
        return ",".join(fields)

    @staticmethod
    def write_detections(path: str, detections: Iterable[DetectionRecord]) -> int:
        return RecordWriter._write_lines(path, (RecordWriter.detection_line(d) for d in detections))

    @staticmethod
    def write_mot_ground_truth(path: str, records: Iterable[GroundTruthTrackRecord]) -> int:
        ordered = sorted(records, key=lambda r: (r.frame, r.identity))
        return RecordWriter._write_lines(path, (
            ",".join([str(r.frame), str(r.identity)] + RecordWriter._box_fields(r.bbox))
            for r in ordered
        ))

    @staticmethod
    def write_anomaly_ground_truth(path: str, records: Iterable[AnomalyGroundTruth]) -> int:
        return RecordWriter._write_lines(path, (
            f"{r.video_id},{format_number(r.start_s)},{format_number(r.end_s)}" for r in records
        ))

    @staticmethod
    def write_tracks(path: str, tracks: Iterable[Track]) -> int:
        """One line per state, ordered by frame then identity"""
        rows = []
        for track in tracks:
            for state in track.states:
                rows.append((state.frame, track.identity, state))
        rows.sort(key=lambda row: (row[0], row[1]))
        return RecordWriter._write_lines(path, (
            ",".join([str(frame), str(identity)] + RecordWriter._box_fields(state.bbox)
                     + [state.source.value])
            for frame, identity, state in rows
        ))

    @staticmethod
    def event_line(event: AnomalyEvent) -> str:
        end = "" if event.end_s is None else format_number(event.end_s)
        return (f"{event.video_id},{event.track_id},{format_number(event.start_s)},{end},"
                f"{format_number(event.confidence)},{event.severity.value}")

    @staticmethod
    def write_events(path: str, events: Iterable[AnomalyEvent]) -> int:
        return RecordWriter._write_lines(path, (RecordWriter.event_line(e) for e in events))
