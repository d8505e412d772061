"""
Track and track-state types shared by the tracking and anomaly stages.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional

import numpy as np

from .geometry import BBox
from .records import DetectionRecord


class StateSource(Enum):
    DETECTED = "detected"
    HYPOTHESIZED = "hypothesized"


class TrackStatus(Enum):
    ACTIVE = "active"
    LOST = "lost"
    EXITED = "exited"


@dataclass(frozen=True, eq=False)
class TrackState:
    frame: int
    bbox: BBox
    feature: Optional[np.ndarray] = None
    source: StateSource = StateSource.DETECTED

    @classmethod
    def from_detection(cls, det: DetectionRecord) -> "TrackState":
        return cls(frame=det.frame, bbox=det.bbox, feature=det.feature)


@dataclass
class Track:
    """
    One vehicle identity with its time-ordered states.

    exited is terminal: a track never comes back once it left the scene or
    stayed lost too long.
    """
    identity: int
    states: List[TrackState] = field(default_factory=list)
    status: TrackStatus = TrackStatus.ACTIVE
    last_matched_frame: int = -1

    @property
    def current(self) -> TrackState:
        return self.states[-1]

    @property
    def first_frame(self) -> int:
        return self.states[0].frame

    def append(self, state: TrackState) -> None:
        if self.states and state.frame <= self.states[-1].frame:
            raise ValueError(
                f"Track {self.identity}: state frame {state.frame} not after {self.states[-1].frame}"
            )
        self.states.append(state)
        if state.source is StateSource.DETECTED:
            self.last_matched_frame = state.frame

    def state_at(self, frame: int) -> Optional[TrackState]:
        for state in reversed(self.states):
            if state.frame == frame:
                return state
            if state.frame < frame:
                return None
        return None


def tracks_by_frame(tracks: Iterable[Track]) -> Dict[int, Dict[int, TrackState]]:
    """frame -> {track id -> state}"""
    index: Dict[int, Dict[int, TrackState]] = {}
    for track in tracks:
        for state in track.states:
            index.setdefault(state.frame, {})[track.identity] = state
    return index
