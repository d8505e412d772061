"""
Evaluation metrics

CLEAR MOT scores for tracker output against ground-truth tracks, and the
anomaly score that combines detection F1 with the normalized start-time
error of the true positives.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from config import EngineConfig
from .association import run_tracker
from .geometry import BBox, iou_matrix
from .record_parser import RecordParser
from .records import AnomalyEvent, AnomalyGroundTruth, DetectionRecord, GroundTruthTrackRecord

logger = logging.getLogger(__name__)

# (sim_gate, iou_gate, dist_gate_px) rows of the threshold calibration experiment
DEFAULT_GATE_GRID: Tuple[Tuple[float, float, float], ...] = (
    (0.9, 0.9, 5.0),
    (0.9, 0.8, 5.0),
    (0.9, 0.7, 5.0),
    (0.8, 0.6, 10.0),
    (0.7, 0.5, 20.0),
    (0.6, 0.4, 30.0),
)


@dataclass
class MotReport:
    """CLEAR MOT summary; mota is None when there is no ground truth at all"""
    mota: Optional[float]
    motp: float
    mt: int
    ml: int
    ids: int
    fp: int
    fn: int
    gt_total: int
    hz: float = 0.0


@dataclass
class AnomalyScore:
    f1: float
    nrmse: float
    s4: float
    tp: int
    fp: int
    fn: int
    rmse_s: float = 0.0


@dataclass
class CalibrationRow:
    sim_gate: float
    iou_gate: float
    dist_gate_px: float
    fp: int
    fn: int
    ids: int
    mota: Optional[float]


# -- tracking --------------------------------------------------------------

def match_frame(gt_boxes: Sequence[BBox], pred_boxes: Sequence[BBox],
                iou_threshold: float) -> Tuple[List[Tuple[int, int, float]], int, int]:
    """
    One-to-one GT/prediction matching of a single frame.

    Maximizes the summed IOU over pairs with iou >= iou_threshold. Returns
    ([(gt index, pred index, iou)], fp, fn).
    """
    if not gt_boxes or not pred_boxes:
        return [], len(pred_boxes), len(gt_boxes)

    overlaps = iou_matrix(gt_boxes, pred_boxes)
    allowed = (overlaps >= iou_threshold) & (overlaps > 0.0)
    weights = np.where(allowed, overlaps, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)

    matches = [(int(i), int(j), float(overlaps[i, j])) for i, j in zip(rows, cols) if allowed[i, j]]
    matches.sort()
    return matches, len(pred_boxes) - len(matches), len(gt_boxes) - len(matches)


def _by_frame(records: Iterable[GroundTruthTrackRecord]) -> Dict[int, List[GroundTruthTrackRecord]]:
    grouped: Dict[int, List[GroundTruthTrackRecord]] = {}
    for r in records:
        grouped.setdefault(r.frame, []).append(r)
    for frame in grouped:
        grouped[frame].sort(key=lambda r: r.identity)
    return grouped


def clear_mot(gt_tracks: Sequence[GroundTruthTrackRecord], pred_tracks: Sequence[GroundTruthTrackRecord],
              iou_threshold: float = 0.5, mostly_tracked: float = 0.8, mostly_lost: float = 0.2,
              hz: float = 0.0) -> MotReport:
    """
    CLEAR MOT over every frame present in either input.

    An identity switch is counted when a GT identity is matched to a
    different predicted identity than at its previous matched frame.
    """
    gt_frames = _by_frame(gt_tracks)
    pred_frames = _by_frame(pred_tracks)

    fp = fn = ids = 0
    iou_sum = 0.0
    matched_pairs = 0
    last_match: Dict[int, int] = {}
    gt_seen: Dict[int, int] = {}
    gt_hit: Dict[int, int] = {}

    for frame in sorted(set(gt_frames) | set(pred_frames)):
        gts = gt_frames.get(frame, [])
        preds = pred_frames.get(frame, [])
        for g in gts:
            gt_seen[g.identity] = gt_seen.get(g.identity, 0) + 1

        matches, frame_fp, frame_fn = match_frame([g.bbox for g in gts], [p.bbox for p in preds],
                                                  iou_threshold)
        fp += frame_fp
        fn += frame_fn
        for gi, pi, overlap in matches:
            gt_id, pred_id = gts[gi].identity, preds[pi].identity
            previous = last_match.get(gt_id)
            if previous is not None and previous != pred_id:
                ids += 1
                logger.debug(f"frame {frame}: gt {gt_id} switched from {previous} to {pred_id}")
            last_match[gt_id] = pred_id
            gt_hit[gt_id] = gt_hit.get(gt_id, 0) + 1
            iou_sum += overlap
            matched_pairs += 1

    gt_total = sum(gt_seen.values())
    mota = None if gt_total == 0 else 1.0 - (fn + fp + ids) / gt_total
    if mota is None:
        logger.warning("CLEAR MOT: no ground-truth boxes, MOTA undefined")

    ratios = [gt_hit.get(tid, 0) / n for tid, n in gt_seen.items()]
    return MotReport(
        mota=mota,
        motp=iou_sum / matched_pairs if matched_pairs else 0.0,
        mt=sum(1 for r in ratios if r >= mostly_tracked),
        ml=sum(1 for r in ratios if r <= mostly_lost),
        ids=ids,
        fp=fp,
        fn=fn,
        gt_total=gt_total,
        hz=hz,
    )


def sweep_gates(detections: Sequence[DetectionRecord], gt_tracks: Sequence[GroundTruthTrackRecord],
                cfg: EngineConfig,
                grid: Sequence[Tuple[float, float, float]] = DEFAULT_GATE_GRID) -> List[CalibrationRow]:
    """Track the same detections once per (sim, iou, dist) gate setting and score each run"""
    rows = []
    for sim_gate, iou_gate, dist_gate in grid:
        trial = cfg.with_gates(sim_gate, iou_gate, dist_gate)
        state = run_tracker(detections, trial)
        report = clear_mot(gt_tracks, RecordParser.track_records(state.ordered_tracks()),
                           cfg.mot_iou_threshold, cfg.mostly_tracked_ratio, cfg.mostly_lost_ratio)
        rows.append(CalibrationRow(sim_gate, iou_gate, dist_gate, report.fp, report.fn,
                                   report.ids, report.mota))
        logger.info(f"gates sim={sim_gate} iou={iou_gate} dist={dist_gate}: "
                    f"FP {report.fp} FN {report.fn} IDS {report.ids} MOTA {report.mota}")
    return rows


def best_row(rows: Sequence[CalibrationRow]) -> Optional[CalibrationRow]:
    """Highest MOTA; ties go to the lower FN + IDS, then to the earlier row"""
    scored = [r for r in rows if r.mota is not None]
    if not scored:
        return None
    return min(scored, key=lambda r: (-r.mota, r.fn + r.ids))


# -- anomalies -------------------------------------------------------------

def precision_recall(tp: int, fn: int, fp: int) -> Tuple[float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return precision, recall


def f1_score(tp: int, fn: int, fp: int) -> float:
    denominator = 2 * tp + fn + fp
    return 2 * tp / denominator if denominator else 0.0


def nrmse(start_errors_s: Sequence[float], max_s: float = 300.0) -> float:
    """Root mean square start-time error, clamped at max_s and scaled into [0, 1]"""
    if len(start_errors_s) == 0:
        return 0.0
    rmse = math.sqrt(sum(e * e for e in start_errors_s) / len(start_errors_s))
    return min(rmse, max_s) / max_s


def s4(f1: float, nrmse_value: float) -> float:
    return f1 * (1.0 - nrmse_value)


def match_anomalies(gt: Sequence[AnomalyGroundTruth], pred: Sequence[AnomalyEvent],
                    window_s: float = 10.0) -> Tuple[List[Tuple[AnomalyGroundTruth, AnomalyEvent, float]], int, int]:
    """
    Pair predictions with GT anomalies of one video.

    A pair is allowed when the start times differ by at most window_s.
    The pairing has the most pairs possible and, among those, the least
    summed start-time error. Returns ([(gt, pred, |error|)], fp, fn).
    """
    if not gt or not pred:
        return [], len(pred), len(gt)

    errors = np.abs(np.array([[p.start_s - g.start_s for p in pred] for g in gt], dtype=float))
    allowed = errors <= window_s
    # every allowed pair outweighs the summed error of any pairing
    reward = window_s * (min(len(gt), len(pred)) + 1) + 1.0
    weights = np.where(allowed, reward - errors, 0.0)
    rows, cols = linear_sum_assignment(weights, maximize=True)

    pairs = [(gt[i], pred[j], float(errors[i, j])) for i, j in zip(rows, cols) if allowed[i, j]]
    return pairs, len(pred) - len(pairs), len(gt) - len(pairs)


def score_anomalies(gt: Sequence[AnomalyGroundTruth], pred: Sequence[AnomalyEvent],
                    cfg: Optional[EngineConfig] = None) -> AnomalyScore:
    """Match per video (in sorted video-id order) and fold the counts into one score"""
    cfg = cfg or EngineConfig()
    gt_by_video: Dict[str, List[AnomalyGroundTruth]] = {}
    pred_by_video: Dict[str, List[AnomalyEvent]] = {}
    for g in gt:
        gt_by_video.setdefault(g.video_id, []).append(g)
    for p in pred:
        pred_by_video.setdefault(p.video_id, []).append(p)

    tp = fp = fn = 0
    errors: List[float] = []
    for video in sorted(set(gt_by_video) | set(pred_by_video)):
        pairs, video_fp, video_fn = match_anomalies(gt_by_video.get(video, []),
                                                    pred_by_video.get(video, []),
                                                    cfg.anomaly_window_s)
        tp += len(pairs)
        fp += video_fp
        fn += video_fn
        errors.extend(error for _, _, error in pairs)
        logger.debug(f"video {video}: TP {len(pairs)} FP {video_fp} FN {video_fn}")

    f1 = f1_score(tp, fn, fp)
    normalized = nrmse(errors, cfg.nrmse_max_s)
    rmse = math.sqrt(sum(e * e for e in errors) / len(errors)) if errors else 0.0
    return AnomalyScore(f1=f1, nrmse=normalized, s4=s4(f1, normalized), tp=tp, fp=fp, fn=fn, rmse_s=rmse)


# -- reports ---------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def format_mot_table(report: MotReport) -> str:
    frame = pd.DataFrame([{
        "MOTA": _fmt(report.mota), "MOTP": _fmt(report.motp), "MT": report.mt, "ML": report.ml,
        "IDS": report.ids, "FP": report.fp, "FN": report.fn, "GT": report.gt_total,
        "Hz": f"{report.hz:.1f}",
    }])
    return frame.to_string(index=False)


def format_anomaly_table(score: AnomalyScore) -> str:
    precision, recall = precision_recall(score.tp, score.fn, score.fp)
    frame = pd.DataFrame([{
        "S4": _fmt(score.s4), "F1": _fmt(score.f1), "RMSE(s)": f"{score.rmse_s:.3f}",
        "NRMSE": _fmt(score.nrmse), "Precision": _fmt(precision), "Recall": _fmt(recall),
        "TP": score.tp, "FP": score.fp, "FN": score.fn,
    }])
    return frame.to_string(index=False)


def format_calibration_table(rows: Sequence[CalibrationRow]) -> str:
    if not rows:
        return "(no calibration rows)"
    frame = pd.DataFrame([{k: _fmt(v) for k, v in asdict(r).items()} for r in rows])
    return frame.to_string(index=False)


def calibration_frame(rows: Sequence[CalibrationRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows],
                        columns=["sim_gate", "iou_gate", "dist_gate_px", "fp", "fn", "ids", "mota"])


def report_to_key_values(report) -> str:
    """Machine-readable `key = value` lines for any report dataclass"""
    lines = []
    for key, value in asdict(report).items():
        if value is None:
            text = "undefined"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
