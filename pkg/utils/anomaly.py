"""
Temporal structure for stalled-vehicle detection

Replays tracker output frame by frame. For every vehicle inside the area
of interest the QuadTree supplies nearby observations of the current
frame, which are re-checked against the association gates. Vehicles that
stay still accumulate dwell frames; vehicles that vanish while still get
zero-velocity hypothetical states so they keep their id. Once the dwell
count reaches the threshold an anomaly event is raised, and its alarm
colour escalates with the length of the stop.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from config import EngineConfig
from .association import edge_weight, gate
from .geometry import BBox, Point
from .quadtree import QuadTree
from .records import AnomalyEvent, Severity
from .roi import RegionOfInterest, in_roi
from .tracks import StateSource, Track, TrackState, TrackStatus, tracks_by_frame

logger = logging.getLogger(__name__)


def estimate_speed(track: Track, window: int) -> Optional[float]:
    """
    Mean per-frame center displacement over the last `window` frames.

    Returns None (undefined, callers treat it as moving) for a track with
    fewer than two states in the window.
    """
    if len(track.states) < 2:
        return None
    states = track.states
    start = states[-1].frame - window
    path = 0.0
    k = len(states) - 1
    while k > 0 and states[k - 1].frame >= start:
        (ax, ay), (bx, by) = states[k - 1].bbox.center, states[k].bbox.center
        path += ((bx - ax) ** 2 + (by - ay) ** 2) ** 0.5
        k -= 1
    if k == len(states) - 1:
        return None
    return path / (states[-1].frame - states[k].frame)


def in_scene(bbox: BBox, frame_extent: Tuple[float, float], margin: float) -> bool:
    """Box center inside the frame shrunk by `margin` on every side (boundary inclusive)"""
    width, height = frame_extent
    cx, cy = bbox.center
    return margin <= cx <= width - margin and margin <= cy <= height - margin


def propagate_hypothetical(track: Track, frame: int, cfg: Optional[EngineConfig] = None) -> Track:
    """
    Append a zero-velocity hypothetical state at `frame`.

    The previous box and feature are carried over unchanged. With a config
    the stop preconditions (in scene, speed below the stop threshold) are
    checked too; a violated precondition leaves the track untouched.
    """
    if not track.states:
        logger.warning(f"track {track.identity}: cannot propagate a track without states")
        return track
    last = track.current
    if last.frame >= frame:
        logger.warning(f"track {track.identity}: already has a state at or after frame {frame}")
        return track
    if cfg is not None:
        if not in_scene(last.bbox, cfg.frame_extent, cfg.scene_margin_px):
            logger.warning(f"track {track.identity}: out of scene, not propagated")
            return track
        speed = estimate_speed(track, cfg.speed_window_frames)
        if speed is None or speed >= cfg.speed_stop_threshold_px_per_frame:
            logger.warning(f"track {track.identity}: still moving, not propagated")
            return track
    track.states.append(TrackState(frame, last.bbox, last.feature, StateSource.HYPOTHESIZED))
    return track


def severity(stopped_duration_s: float, cfg: EngineConfig) -> Severity:
    if stopped_duration_s >= cfg.severity_red_s:
        return Severity.RED
    if stopped_duration_s >= cfg.severity_yellow_s:
        return Severity.YELLOW
    if stopped_duration_s >= cfg.severity_green_s:
        return Severity.GREEN
    return Severity.NONE


def find_stop_onset(track: Track, cfg: EngineConfig) -> int:
    """First frame of the trailing run of steps no faster than the ROI motion threshold"""
    states = track.states
    onset = states[-1].frame
    for k in range(len(states) - 1, 0, -1):
        a, b = states[k - 1], states[k]
        (ax, ay), (bx, by) = a.bbox.center, b.bbox.center
        step = ((bx - ax) ** 2 + (by - ay) ** 2) ** 0.5 / max(1, b.frame - a.frame)
        if step > cfg.roi_speed_threshold_px_per_frame:
            break
        onset = a.frame
    return onset


@dataclass
class DwellState:
    """Per-track stop bookkeeping; counters reset together when motion resumes"""
    track_id: int
    stopped_since_frame: Optional[int] = None
    dwell_frames: int = 0
    hypothesized_frames: int = 0
    alarm_raised: bool = False
    anchor: Optional[Point] = None
    last_still_frame: Optional[int] = None
    event: Optional[AnomalyEvent] = field(default=None, repr=False)

    @property
    def stopped(self) -> bool:
        return self.stopped_since_frame is not None

    def reset(self) -> None:
        self.stopped_since_frame = None
        self.dwell_frames = 0
        self.hypothesized_frames = 0
        self.alarm_raised = False
        self.anchor = None
        self.last_still_frame = None
        self.event = None


def detected_fraction(track: Track, first_frame: int, last_frame: int) -> float:
    """Share of frames in [first_frame, last_frame] covered by a detected state"""
    span = last_frame - first_frame + 1
    if span <= 0:
        return 1.0
    detected = sum(1 for s in track.states
                   if first_frame <= s.frame <= last_frame and s.source is StateSource.DETECTED)
    return min(1.0, max(0.0, detected / span))


class AnomalyDetector:
    """
    Dwell counting over one video's tracks.

    Owns working copies of the tracks: observed states are appended as the
    replay reaches their frame, hypothetical ones are added in between.
    """

    def __init__(self, cfg: EngineConfig, video_id: str, roi: Optional[RegionOfInterest] = None):
        self.cfg = cfg
        self.video_id = video_id
        self.roi = roi if roi is not None else RegionOfInterest()
        self.tracks: Dict[int, Track] = {}
        self.dwell_states: Dict[int, DwellState] = {}
        self.events: List[AnomalyEvent] = []
        self.aliases: Dict[int, int] = {}
        # track id -> (last still frame, event) of its most recently closed event
        self.closed_events: Dict[int, Tuple[int, AnomalyEvent]] = {}
        self.last_frame: Optional[int] = None
        self.stats = {
            "frames": 0,
            "hypothesized_states": 0,
            "relinked_tracks": 0,
            "exited_tracks": 0,
            "dropped_observations": 0,
            "resumed_events": 0,
            "events": 0,
        }

    # -- per-frame replay -------------------------------------------------

    def observe(self, frame: int, observed: Dict[int, TrackState]) -> List[AnomalyEvent]:
        """
        Feed one frame of tracker output ({track id: state}) and run the
        dwell update. Returns the events raised in this frame.
        """
        observed = {self.aliases.get(tid, tid): s for tid, s in observed.items()}
        for tid in sorted(observed):
            track = self.tracks.get(tid)
            if track is not None and track.status is TrackStatus.EXITED:
                logger.debug(f"frame {frame}: track {tid} already exited, observation dropped")
                del observed[tid]
                self.stats["dropped_observations"] += 1
        quadtree = self._build_quadtree(observed)

        live = [t for _, t in sorted(self.tracks.items()) if t.status is not TrackStatus.EXITED]
        roi_tracks = [t for t in live if in_roi(t, self.roi)]
        roi_ids = {t.identity for t in roi_tracks}

        for track in live:
            if track.identity in roi_ids:
                continue
            self._follow_outside_roi(track, frame, observed)

        emitted = self.update(frame, roi_tracks, observed, quadtree)

        for tid in sorted(observed):
            if tid not in self.tracks:
                track = Track(tid)
                track.append(observed[tid])
                self.tracks[tid] = track

        self.last_frame = frame
        self.stats["frames"] += 1
        return emitted

    def _build_quadtree(self, observed: Dict[int, TrackState]) -> QuadTree:
        width, height = self.cfg.frame_extent
        tree = QuadTree(0.0, 0.0, float(width), float(height),
                        self.cfg.quadtree_capacity, self.cfg.quadtree_max_depth)
        for tid in sorted(observed):
            center = observed[tid].bbox.center
            if tree.contains(center):
                tree.insert(center, tid)
            else:
                logger.debug(f"track {tid}: center {center} outside frame, not indexed")
        return tree

    def _follow_outside_roi(self, track: Track, frame: int, observed: Dict[int, TrackState]) -> None:
        dwell = self.dwell_states.get(track.identity)
        if dwell is not None and dwell.stopped:
            self._close(dwell, track, dwell.last_still_frame)
        if track.identity in observed:
            track.append(observed[track.identity])
            track.status = TrackStatus.ACTIVE
        else:
            self._lose(track, frame)

    def _lose(self, track: Track, frame: int) -> None:
        track.status = TrackStatus.LOST
        if frame - track.last_matched_frame > self.cfg.max_lost_frames:
            self._exit(track)

    def _exit(self, track: Track) -> None:
        track.status = TrackStatus.EXITED
        self.stats["exited_tracks"] += 1
        dwell = self.dwell_states.pop(track.identity, None)
        if dwell is not None and dwell.stopped:
            self._close(dwell, track, dwell.last_still_frame)

    def update(self, frame: int, tracks_in_roi: Sequence[Track], observed: Dict[int, TrackState],
               quadtree: QuadTree) -> List[AnomalyEvent]:
        """
        One step of the dwell structure for the tracks inside the area of interest.

        Each track's latest state is compared with the current-frame
        observations the QuadTree returns within the search radius. A gated
        neighbour refreshes the track; otherwise the track either left the
        scene, is hidden while stopped (hypothetical state), or is lost. A
        tracker observation outside the radius or the gates leaves its track
        unmatched for this frame.
        """
        cfg = self.cfg
        emitted: List[AnomalyEvent] = []
        fresh = {tid for tid in observed if tid not in self.tracks}

        for track in tracks_in_roi:
            tid = track.identity
            previous = track.current
            dwell = self.dwell_states.setdefault(tid, DwellState(tid))
            neighbours = quadtree.query_radius(previous.bbox.center, cfg.search_radius_px)

            matched = None
            if tid in observed:
                if tid in neighbours and gate(previous, observed[tid], cfg) is not None:
                    matched = tid
                else:
                    logger.debug(f"frame {frame}: track {tid} observed outside the gates, left unmatched")
            if matched is None and dwell.stopped:
                matched = self._relink(previous, neighbours & fresh, observed)
                if matched is not None:
                    fresh.discard(matched)
                    self.aliases[matched] = tid
                    self.stats["relinked_tracks"] += 1
                    logger.info(f"frame {frame}: track {matched} re-linked to stopped track {tid}")

            if matched is not None:
                track.append(observed[matched])
                track.status = TrackStatus.ACTIVE
                if matched != tid:
                    del observed[matched]
            elif not in_scene(previous.bbox, cfg.frame_extent, cfg.scene_margin_px):
                self._exit(track)
                continue
            elif dwell.stopped:
                propagate_hypothetical(track, frame)
                dwell.hypothesized_frames += 1
                self.stats["hypothesized_states"] += 1
            else:
                self._lose(track, frame)
                continue

            event = self._update_dwell(track, dwell, frame)
            if event is not None:
                emitted.append(event)

        return emitted

    def _relink(self, previous: TrackState, candidates: Iterable[int],
                observed: Dict[int, TrackState]) -> Optional[int]:
        best = None
        for cid in sorted(candidates):
            result = gate(previous, observed[cid], self.cfg)
            if result is None:
                continue
            weight = edge_weight(result.iou, result.sim, self.cfg)
            if best is None or weight > best[0]:
                best = (weight, cid)
        return None if best is None else best[1]

    def _update_dwell(self, track: Track, dwell: DwellState, frame: int) -> Optional[AnomalyEvent]:
        cfg = self.cfg
        current = track.current
        if not in_scene(current.bbox, cfg.frame_extent, cfg.scene_margin_px):
            if dwell.stopped:
                self._close(dwell, track, dwell.last_still_frame)
            return None

        cx, cy = current.bbox.center
        if dwell.stopped:
            ax, ay = dwell.anchor
            if ((cx - ax) ** 2 + (cy - ay) ** 2) ** 0.5 > cfg.stop_radius_px:
                logger.debug(f"frame {frame}: track {track.identity} moving again")
                self._close(dwell, track, dwell.last_still_frame)
                return None
        else:
            speed = estimate_speed(track, cfg.speed_window_frames)
            if speed is None or speed >= cfg.speed_stop_threshold_px_per_frame:
                return None
            dwell.stopped_since_frame = find_stop_onset(track, cfg)
            dwell.anchor = (cx, cy)
            logger.debug(f"frame {frame}: track {track.identity} stopped since frame "
                         f"{dwell.stopped_since_frame}")
            self._resume_event(track, dwell, frame)

        dwell.last_still_frame = frame
        dwell.dwell_frames = frame - dwell.stopped_since_frame
        duration_s = dwell.dwell_frames / cfg.fps

        if dwell.event is not None:
            if dwell.event.escalate(frame, severity(duration_s, cfg)):
                logger.info(f"frame {frame}: track {track.identity} alarm now "
                            f"{dwell.event.severity.value} after {duration_s:.1f}s")
            return None

        if dwell.dwell_frames >= cfg.dwell_threshold_frames and not dwell.alarm_raised:
            start_s = dwell.stopped_since_frame / cfg.fps
            event = AnomalyEvent(
                video_id=self.video_id,
                track_id=track.identity,
                start_s=start_s,
                confidence=detected_fraction(track, dwell.stopped_since_frame, frame),
                severity=Severity.NONE,
                emitted_frame=frame,
            )
            event.escalate(frame, max(severity(duration_s, cfg), Severity.GREEN, key=lambda s: s.rank))
            dwell.alarm_raised = True
            dwell.event = event
            self.events.append(event)
            self.stats["events"] += 1
            logger.info(f"frame {frame}: anomaly on track {track.identity}, stopped since "
                        f"{start_s:.3f}s ({event.severity.value})")
            return event
        return None

    def _resume_event(self, track: Track, dwell: DwellState, frame: int) -> None:
        """
        Reopen the last closed event when the new stop reaches back into it.

        A vehicle creeping slower than the stop threshold drifts out of the
        stop radius and re-stops with the same onset; that is still the
        stall the event describes.
        """
        closed = self.closed_events.get(track.identity)
        if closed is None or dwell.stopped_since_frame > closed[0]:
            return
        event = closed[1]
        del self.closed_events[track.identity]
        event.end_s = None
        dwell.event = event
        dwell.alarm_raised = True
        self.stats["resumed_events"] += 1
        logger.debug(f"frame {frame}: track {track.identity} still in the stall since {event.start_s:.3f}s")

    def _close(self, dwell: DwellState, track: Track, last_frame: Optional[int]) -> None:
        event = dwell.event
        if event is not None and event.is_open:
            end_frame = last_frame if last_frame is not None else dwell.stopped_since_frame
            event.end_s = max(event.start_s, end_frame / self.cfg.fps)
            event.confidence = detected_fraction(track, dwell.stopped_since_frame, end_frame)
            self.closed_events[track.identity] = (end_frame, event)
            logger.info(f"track {track.identity}: anomaly closed at {event.end_s:.3f}s "
                        f"({event.severity.value}, confidence {event.confidence:.3f})")
        dwell.reset()

    def finalize(self, last_frame: Optional[int] = None) -> List[AnomalyEvent]:
        """Close still-open events at the end of the stream and return every event"""
        if last_frame is None:
            last_frame = self.last_frame if self.last_frame is not None else 0
        for tid in sorted(self.dwell_states):
            dwell = self.dwell_states[tid]
            if dwell.event is not None and dwell.event.is_open:
                track = self.tracks[tid]
                dwell.event.end_s = max(dwell.event.start_s, last_frame / self.cfg.fps)
                dwell.event.confidence = detected_fraction(track, dwell.stopped_since_frame, last_frame)
        return list(self.events)

    # -- whole-video replay ----------------------------------------------

    def run(self, tracks: Sequence[Track]) -> Tuple[List[Track], List[AnomalyEvent]]:
        """Replay complete tracker output; returns (augmented tracks, events)"""
        index = tracks_by_frame(tracks)
        if not index:
            return [], self.finalize(0)
        first, last = min(index), max(index)
        for frame in range(first, last + 1):
            self.observe(frame, dict(index.get(frame, {})))
        events = self.finalize(last)
        return [self.tracks[k] for k in sorted(self.tracks)], events
