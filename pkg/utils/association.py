"""
Frame-to-frame association

Existing tracks (left side) and the detections of the next frame (right
side) form a bipartite graph. An edge exists only when the IOU, center
distance and appearance similarity gates all pass; its weight is
alpha * iou + beta * sim. A maximum-weight matching on that graph decides
which detection continues which track.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from config import EngineConfig
from .errors import DataError, OrderingError
from .features import cosine_similarity
from .geometry import center_distance, distance_matrix, iou, iou_matrix
from .records import DetectionRecord
from .tracks import Track, TrackState, TrackStatus

logger = logging.getLogger(__name__)

# prefilter slack so the vectorized pass never drops a pair the exact gate keeps
_PREFILTER_SLACK = 1e-9
# totals closer than this count as equal when breaking ties
_TIE_TOL = 1e-9


class GateResult(NamedTuple):
    iou: float
    dist: float
    sim: float
    sim_assumed: bool = False


@dataclass(frozen=True)
class Edge:
    track_id: int
    det_index: int
    weight: float
    iou: float
    dist: float
    sim: float
    sim_assumed: bool = False


@dataclass
class AssociationGraph:
    left: Tuple[int, ...] = ()
    right: Tuple[int, ...] = ()
    edges: List[Edge] = field(default_factory=list)

    def edge_set(self) -> Dict[Tuple[int, int], Edge]:
        return {(e.track_id, e.det_index): e for e in self.edges}

    def total_weight(self, pairs) -> float:
        lookup = self.edge_set()
        return sum(lookup[p].weight for p in pairs)


def gate(track_state, det, cfg: EngineConfig) -> Optional[GateResult]:
    """
    Apply the three association gates to one (track state, detection) pair.

    Either argument only needs `bbox` and `feature`. When a feature is
    missing on either side the similarity gate counts as passed (sim = 1,
    flagged `sim_assumed`) unless cfg.require_features is set.
    """
    overlap = iou(track_state.bbox, det.bbox)
    if overlap < cfg.iou_gate:
        return None
    dist = center_distance(track_state.bbox, det.bbox)
    if dist > cfg.dist_gate_px:
        return None

    if track_state.feature is None or det.feature is None:
        if cfg.require_features:
            return None
        return GateResult(overlap, dist, 1.0, True)

    sim = cosine_similarity(track_state.feature, det.feature)
    if sim < cfg.sim_gate:
        return None
    return GateResult(overlap, dist, sim, False)


def edge_weight(iou_value: float, sim: float, cfg: EngineConfig) -> float:
    """alpha * iou + beta * sim, with sim clamped into [0, 1]"""
    sim = min(1.0, max(0.0, sim))
    return cfg.alpha * iou_value + cfg.beta * sim


def build_graph(tracks: Sequence[Track], detections: Sequence[DetectionRecord],
                cfg: EngineConfig) -> AssociationGraph:
    """Gated, weighted bipartite graph between tracks' latest states and one frame's detections"""
    left = tuple(t.identity for t in tracks)
    right = tuple(range(len(detections)))
    graph = AssociationGraph(left, right)
    if not tracks or not detections:
        return graph

    states = [t.current for t in tracks]
    ious = iou_matrix([s.bbox for s in states], [d.bbox for d in detections])
    dists = distance_matrix([s.bbox for s in states], [d.bbox for d in detections])
    candidates = (ious >= cfg.iou_gate - _PREFILTER_SLACK) & (dists <= cfg.dist_gate_px + _PREFILTER_SLACK)

    for i, j in zip(*np.nonzero(candidates)):
        result = gate(states[i], detections[j], cfg)
        if result is None:
            continue
        graph.edges.append(Edge(
            track_id=left[i],
            det_index=int(j),
            weight=edge_weight(result.iou, result.sim, cfg),
            iou=result.iou,
            dist=result.dist,
            sim=result.sim,
            sim_assumed=result.sim_assumed,
        ))

    graph.edges.sort(key=lambda e: (e.track_id, e.det_index))
    return graph


def _optimum(weights: np.ndarray, rows: Sequence[int], cols: Sequence[int]) -> float:
    """Best total over the sub-matrix; non-edges weigh 0, so picking one means unmatched"""
    if not rows or not cols:
        return 0.0
    sub = weights[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub, maximize=True)
    return float(sub[r, c].sum())


def solve_matching(graph: AssociationGraph) -> List[Tuple[int, int]]:
    """
    Maximum-weight matching over the graph's edges (Kuhn-Munkres via scipy).

    Returns (track id, detection index) pairs sorted by track id. Among
    equal-weight optima, lower track ids take their lowest detection index
    that still allows an optimal completion.
    """
    if not graph.edges:
        return []

    rows = sorted({e.track_id for e in graph.edges})
    cols = sorted({e.det_index for e in graph.edges})
    if len(rows) == len(cols) == len(graph.edges):
        # every track and detection has a single candidate
        return sorted((e.track_id, e.det_index) for e in graph.edges)

    row_of = {tid: i for i, tid in enumerate(rows)}
    col_of = {d: j for j, d in enumerate(cols)}
    weights = np.zeros((len(rows), len(cols)), dtype=float)
    is_edge = np.zeros((len(rows), len(cols)), dtype=bool)
    for e in graph.edges:
        weights[row_of[e.track_id], col_of[e.det_index]] = e.weight
        is_edge[row_of[e.track_id], col_of[e.det_index]] = True

    free_rows = list(range(len(rows)))
    free_cols = list(range(len(cols)))
    target = _optimum(weights, free_rows, free_cols)
    pairs = []
    for i in range(len(rows)):
        free_rows.remove(i)
        for j in [c for c in free_cols if is_edge[i, c]]:
            rest = [c for c in free_cols if c != j]
            if weights[i, j] + _optimum(weights, free_rows, rest) >= target - _TIE_TOL:
                pairs.append((rows[i], cols[j]))
                free_cols = rest
                target -= weights[i, j]
                break
    return pairs


@dataclass
class TrackerState:
    """Everything the tracker carries from one frame to the next for one video"""
    tracks: Dict[int, Track] = field(default_factory=dict)
    next_id: int = 1
    last_frame: Optional[int] = None

    def live_tracks(self) -> List[Track]:
        return [t for t in self.tracks.values() if t.status is not TrackStatus.EXITED]

    def ordered_tracks(self) -> List[Track]:
        return [self.tracks[k] for k in sorted(self.tracks)]


def step(state: TrackerState, frame_detections: Sequence[DetectionRecord],
         cfg: EngineConfig, frame: Optional[int] = None) -> TrackerState:
    """
    Advance the tracker by one frame.

    Matched detections extend their track; unmatched detections start new
    tracks with fresh ids; unmatched tracks become lost (and exited once
    they stay lost longer than cfg.max_lost_frames). `frame` is only needed
    when frame_detections is empty.
    """
    frames = {d.frame for d in frame_detections}
    if len(frames) > 1:
        raise DataError(f"step() needs detections of one frame, got frames {sorted(frames)}")
    if frames:
        det_frame = frames.pop()
        if frame is not None and frame != det_frame:
            raise DataError(f"frame argument {frame} disagrees with detections of frame {det_frame}")
        frame = det_frame
    if frame is None:
        raise DataError("step() with no detections needs an explicit frame")
    if state.last_frame is not None and frame <= state.last_frame:
        raise OrderingError(f"frame {frame} is not after previous frame {state.last_frame}")

    candidates = sorted(state.live_tracks(), key=lambda t: t.identity)
    graph = build_graph(candidates, frame_detections, cfg)
    matches = solve_matching(graph)

    matched_tracks = set()
    matched_dets = set()
    for track_id, det_index in matches:
        det = frame_detections[det_index]
        track = state.tracks[track_id]
        track.append(TrackState.from_detection(det))
        track.status = TrackStatus.ACTIVE
        matched_tracks.add(track_id)
        matched_dets.add(det_index)

    for det_index, det in enumerate(frame_detections):
        if det_index in matched_dets:
            continue
        track = Track(state.next_id)
        track.append(TrackState.from_detection(det))
        state.tracks[track.identity] = track
        logger.debug(f"frame {frame}: new track {track.identity}")
        state.next_id += 1

    for track in candidates:
        if track.identity in matched_tracks:
            continue
        if frame - track.last_matched_frame > cfg.max_lost_frames:
            track.status = TrackStatus.EXITED
            logger.debug(f"frame {frame}: track {track.identity} retired after "
                         f"{frame - track.last_matched_frame} lost frames")
        else:
            track.status = TrackStatus.LOST

    state.last_frame = frame
    return state


def group_by_frame(detections: Sequence[DetectionRecord]) -> List[Tuple[int, List[DetectionRecord]]]:
    """(frame, detections) in increasing frame order, stable within each frame"""
    grouped: Dict[int, List[DetectionRecord]] = {}
    for det in detections:
        grouped.setdefault(det.frame, []).append(det)
    return [(f, grouped[f]) for f in sorted(grouped)]


def run_tracker(detections: Sequence[DetectionRecord], cfg: EngineConfig) -> TrackerState:
    state = TrackerState()
    for frame, dets in group_by_frame(detections):
        step(state, dets, cfg)
    return state
