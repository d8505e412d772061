"""
Area of interest learned from moving vehicles.

The hull of the centers of moving track states outlines the main-road
lanes; parked vehicles on side roads never move and so never widen it.
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

from config import EngineConfig
from .errors import DataError
from .geometry import EMPTY_REGION, Point, Polygon, convex_hull, point_in_polygon
from .record_parser import RecordParser, format_number
from .tracks import Track

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegionOfInterest:
    hull: Polygon = EMPTY_REGION
    source_point_count: int = 0
    frozen_at_frame: int = 0

    @property
    def is_empty(self) -> bool:
        return self.hull.is_empty


def _step_displacement(a, b) -> float:
    (ax, ay), (bx, by) = a.bbox.center, b.bbox.center
    gap = max(1, abs(b.frame - a.frame))
    return ((bx - ax) ** 2 + (by - ay) ** 2) ** 0.5 / gap


def collect_motion_points(tracks: Iterable[Track], cfg: EngineConfig,
                          until_frame: Optional[int] = None) -> List[Point]:
    """
    Centers of track states that were moving faster than the ROI speed threshold.

    A state's instantaneous displacement is measured against the previous
    state of its track (the next one for a track's first state), per frame.
    Only states before `until_frame` are considered when it is given.
    """
    points: List[Point] = []
    for track in sorted(tracks, key=lambda t: t.identity):
        states = [s for s in track.states if until_frame is None or s.frame < until_frame]
        if len(states) < 2:
            continue
        for k, state in enumerate(states):
            neighbour = states[k - 1] if k > 0 else states[1]
            if _step_displacement(neighbour, state) > cfg.roi_speed_threshold_px_per_frame:
                points.append(state.bbox.center)
    return points


def build_roi(points: Sequence[Point], frame: int) -> RegionOfInterest:
    hull = convex_hull(points)
    if hull.is_empty:
        logger.info(f"ROI at frame {frame}: fewer than 3 usable motion points, region left empty")
        return RegionOfInterest(EMPTY_REGION, 0, frame)
    logger.info(f"ROI at frame {frame}: hull of {len(hull)} vertices over {len(points)} motion points")
    return RegionOfInterest(hull, len(points), frame)


def in_roi(track: Track, roi: RegionOfInterest) -> bool:
    """Current box center inside the hull; an empty region lets every track through"""
    if roi.is_empty:
        return True
    return point_in_polygon(track.current.bbox.center, roi.hull)


def filter_tracks(tracks: Iterable[Track], roi: RegionOfInterest) -> List[Track]:
    return [t for t in tracks if t.states and in_roi(t, roi)]


def learn_roi(tracks: Sequence[Track], cfg: EngineConfig) -> RegionOfInterest:
    """Hull over the warm-up window, frozen at the end of that window (or of the stream)"""
    last_frame = max((t.states[-1].frame for t in tracks if t.states), default=0)
    freeze = min(cfg.roi_warmup_frames, last_frame + 1)
    return build_roi(collect_motion_points(tracks, cfg, until_frame=freeze), freeze)


def save_roi(path: str, roi: RegionOfInterest) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for x, y in roi.hull.vertices:
            f.write(f"{format_number(x)},{format_number(y)}\n")
    return len(roi.hull)


def load_roi(path: str, frame: int = 0) -> RegionOfInterest:
    """Operator-supplied polygon, one `x,y` vertex per line; its convex hull is used"""
    RecordParser.require_file(path)
    points: List[Point] = []
    for lineno, fields in RecordParser.csv_rows(path):
        if len(fields) != 2:
            raise DataError(f"expected 'x,y', got {','.join(fields)!r}", path, lineno)
        x = RecordParser.float_field(fields[0], "x", path, lineno)
        y = RecordParser.float_field(fields[1], "y", path, lineno)
        points.append((x, y))
    roi = build_roi(points, frame)
    if roi.is_empty and points:
        logger.warning(f"ROI file {path} does not span an area; filtering disabled")
    return roi
